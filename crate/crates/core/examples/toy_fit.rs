//! Train the linear decomposition on the overlapping-planes scene and score it.
//!
//! Uses `configs/toy_fit.toml`; `cargo run --release --example toy_fit -- 1000`
//! overrides the step count.

use std::time::Instant;

use lppd::config::Config;
use lppd::decomposition::{fit, run_recurrence};
use lppd::eval::tuple_accuracy;
use lppd::inference::predict_image;
use lppd::losses::normalize_scale_invariant;
use lppd::synth::{default_eps_sep, raycast_multilayer, render_features, sample_tuples, scene_overlapping_planes, Subset};

fn main() -> lppd::Result<()> {
    let mut cfg = Config::load(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/toy_fit.toml"))?;
    if let Some(steps) = std::env::args().nth(1).and_then(|s| s.parse().ok()) {
        cfg.fit.optim.steps = steps;
    }
    let s = &cfg.synth;
    let scene = scene_overlapping_planes(&s.overlap)?;
    let gt = raycast_multilayer(&scene)?;
    let features = render_features(&scene, s.noise_sigma, s.noise_seed)?;
    let norm = normalize_scale_invariant(&gt)?;

    let t0 = Instant::now();
    let res = fit(&features, &norm.map, &cfg.fit)?;
    for e in res.trace.iter().step_by((cfg.fit.optim.steps / 8).max(1)) {
        println!("{:>5}  loss {:.4}  (int {:.4} cov {:.4})  lr {:.4}", e.step, e.loss.total, e.loss.intensity, e.loss.coverage, e.learning_rate);
    }
    println!("fit took {:.1?}, eta identity err {:.1e}", t0.elapsed(), res.max_eta_identity_error());

    let rec = run_recurrence(&features, &res.params, &cfg.fit.recurrence_options())?;
    let pred = predict_image(&rec.mixture, Some((norm.shift, norm.scale)), &cfg.inference)?;
    let mut confusion = [[0usize; 5]; 4];
    for p in 0..gt.len() {
        confusion[gt.layer_count(p)][pred.layer_count(p).min(4)] += 1;
    }
    println!("layer counts, rows gt 1..3, columns predicted 0..4:");
    for row in &confusion[1..] {
        println!("  {row:?}");
    }
    let same: usize = (1..4).map(|k| confusion[k][k]).sum();
    println!("layer count accuracy {:.2}%", 100.0 * same as f64 / gt.len() as f64);

    let tuples = sample_tuples(&gt, &s.tuples, default_eps_sep(&gt), s.tuple_seed)?;
    let report = tuple_accuracy(&pred, &tuples);
    for subset in [Subset::All, Subset::Mixed, Subset::Layer(1)] {
        if let Some(acc) = report.accuracy(4, subset) {
            println!("Q {subset}: {:.2}%", 100.0 * acc);
        }
    }
    Ok(())
}
