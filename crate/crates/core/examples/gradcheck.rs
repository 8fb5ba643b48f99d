//! Finite-difference check of every analytic gradient.

use lppd::gradcheck::{run_all, DEFAULT_TOLERANCE};

fn main() -> lppd::Result<()> {
    let trials = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    for report in run_all(7, trials, DEFAULT_TOLERANCE)? {
        println!("{report}");
    }
    Ok(())
}
