//! Max-mixture against index-ordered components on the toy scene, same data,
//! budget and seeds. Pass a step count to shorten the runs.

use lppd::config::Config;
use lppd::decomposition::{fit, run_recurrence};
use lppd::eval::tuple_accuracy;
use lppd::inference::predict_image;
use lppd::losses::normalize_scale_invariant;
use lppd::synth::{default_eps_sep, raycast_multilayer, render_features, sample_tuples, scene_overlapping_planes, Subset};
use lppd::MixtureRule;

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
    let tuples = sample_tuples(&gt, &s.tuples, default_eps_sep(&gt), s.tuple_seed)?;

    println!("{:<12} {:>4} {:>8} {:>8}", "rule", "seed", "Q all", "Q mixed");
    for rule in [MixtureRule::MaxMixture, MixtureRule::Ordered] {
        for seed in 0..3 {
            let mut fc = cfg.fit.clone();
            fc.rule = rule;
            fc.seed = seed;
            let res = fit(&features, &norm.map, &fc)?;
            let rec = run_recurrence(&features, &res.params, &fc.recurrence_options())?;
            let pred = predict_image(&rec.mixture, Some((norm.shift, norm.scale)), &cfg.inference)?;
            let r = tuple_accuracy(&pred, &tuples);
            let pct = |sub| r.accuracy(4, sub).map_or("-".to_string(), |a| format!("{:.2}%", 100.0 * a));
            println!("{:<12} {:>4} {:>8} {:>8}", format!("{rule:?}"), seed, pct(Subset::All), pct(Subset::Mixed));
        }
    }
    Ok(())
}
