//! Evaluate a max-mixture of Laplace components and list its peaks.

use lppd::{IntensityMixture, MixtureRule};

fn main() -> lppd::Result<()> {
    // two close surfaces and a broad far one
    let m = IntensityMixture::from_pairs(&[(-0.8, 1.0), (-0.3, 1.5), (1.2, 4.0)])?;

    println!("{:>6}  {:>9}  {:>9}  winner", "x", "max", "weighted");
    let weighted = m.clone().with_rule(MixtureRule::WeightedUniform);
    for k in 0..=12 {
        let x = -1.5 + 0.25 * k as f64;
        println!("{x:>6.2}  {:>9.5}  {:>9.5}  {}", m.eval(x)?, weighted.eval(x)?, m.argmax(x)?);
    }

    // peaks sit on centers whose component wins there
    for p in m.peaks()? {
        println!("peak at {:.2}, intensity {:.4}", p.depth, p.intensity);
    }
    println!("upper bound {:.4}", m.peak_bound());
    Ok(())
}
