//! One pass of the recurrence on random parameters: components, rescaling
//! factors and the residual left after each step.

use lppd::decomposition::{run_recurrence, DecompParams, PredictorSharing, RecurrenceOptions};
use lppd::synth::{render_features, scene_overlapping_planes, OverlapParams};

fn main() -> lppd::Result<()> {
    let scene = scene_overlapping_planes(&OverlapParams::default())?;
    let features = render_features(&scene, 0.0, 0)?;
    let params = DecompParams::init(features.dim, 8, 4, PredictorSharing::PerIteration, 1.0, 0)?;
    println!("{} parameters", params.num_params());

    let rec = run_recurrence(&features, &params, &RecurrenceOptions::default())?;
    for (i, s) in rec.steps.iter().enumerate() {
        println!(
            "step {i}: |F| {:.3}  |R(C)| {:.3}  eta {:.4}  identity err {:.1e}",
            s.input_norm,
            s.remapped_norm,
            s.eta,
            s.eta_identity_error()
        );
    }
    println!("residual norm {:.3}", rec.residual.norm());

    let m = rec.mixture.pixel_mixture(25 * 64 + 20)?;
    for c in m.components() {
        println!("  d {:+.3}  b {:.3}", c.center(), c.scale());
    }
    Ok(())
}
