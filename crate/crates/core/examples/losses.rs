//! Likelihood and coverage losses for one pixel, with their gradients.

use lppd::losses::{grad_losses, loss_coverage, loss_intensity, normalize_scale_invariant};
use lppd::{DepthUnits, IntensityMixture, MultiLayerDepthMap};

fn main() -> lppd::Result<()> {
    // raw depths in meters, normalized jointly over the image
    let raw = MultiLayerDepthMap::from_pixels(1, 3, DepthUnits::Raw, vec![vec![1.2, 3.0], vec![1.2], vec![2.1, 3.0, 4.4]])?;
    let n = normalize_scale_invariant(&raw)?;
    println!("shift {:.4} scale {:.4}", n.shift, n.scale);

    let gts = n.map.pixel(2);
    println!("normalized gt {gts:.3?}");

    let m = IntensityMixture::from_pairs(&[(gts[0] + 0.1, 1.0), (gts[2] - 0.2, 1.0), (0.0, 5.0), (3.0, 2.0)])?;
    println!("L_int {:.5}", loss_intensity(&m, gts)?);
    println!("L_cov {:.5}", loss_coverage(&m, gts)?);

    let g = grad_losses(&m, gts, 1.0, 0.1)?;
    for (j, c) in m.components().iter().enumerate() {
        println!("component {j} d={:+.3} b={:.2}  dL/dd {:+.4}  dL/db {:+.4}", c.center(), c.scale(), g.d[j], g.b[j]);
    }
    Ok(())
}
