//! Score a perturbed prediction: tuple accuracy by subset and aligned point metrics.

use lppd::eval::{evaluate_maps, AlignMode};
use lppd::synth::{default_eps_sep, raycast_multilayer, sample_tuples, scene_overlapping_planes, OverlapParams, TupleRequest};
use lppd::DepthUnits;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> lppd::Result<()> {
    let gt = raycast_multilayer(&scene_overlapping_planes(&OverlapParams::default())?)?;
    let requests: Vec<TupleRequest> = (2..=4)
        .map(|arity| TupleRequest { arity, count: 2000, rule: Default::default() })
        .collect();
    let tuples = sample_tuples(&gt, &requests, default_eps_sep(&gt), 0)?;

    // prediction in some other affine frame, with per-pixel jitter
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pixels: Vec<Vec<f64>> = gt
        .pixels()
        .map(|px| {
            let jitter = rng.random_range(-0.3..0.3);
            px.iter().map(|d| 0.5 * d + 1.0 + jitter).collect()
        })
        .collect();
    let pred = lppd::MultiLayerDepthMap::from_pixels(gt.height(), gt.width(), DepthUnits::Raw, pixels)?;

    let report = evaluate_maps(&pred, &gt, Some(&tuples), AlignMode::Joint)?;
    print!("{report}");
    println!();
    print!("{}", report.to_csv().lines().take(6).collect::<Vec<_>>().join("\n"));
    println!();
    Ok(())
}
