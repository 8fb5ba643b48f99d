//! Layers from peaks: thresholding, suppression and the way back to meters.

use lppd::inference::{denormalize, extract_layers, mixture_peaks};
use lppd::IntensityMixture;

fn main() -> lppd::Result<()> {
    // two components on the same surface, one real second layer, one faint tail
    let m = IntensityMixture::from_pairs(&[(-0.50, 1.0), (-0.49, 1.2), (0.75, 1.5), (2.0, 10.0)])?;
    for p in mixture_peaks(&m)? {
        println!("peak {:+.3}  intensity {:.4}", p.depth, p.intensity);
    }

    let layers = extract_layers(&m, 0.02, 0.05)?;
    println!("layers (normalized) {layers:+.3?}");
    let strict = extract_layers(&m, 0.02, 0.4)?;
    println!("with threshold 0.4  {strict:+.3?}");

    let (shift, scale) = (2.4, 0.8);
    println!("layers (meters)     {:.3?}", denormalize(&layers, shift, scale)?);

    // 0.019 apart merges, 0.021 apart does not
    for gap in [0.019, 0.021] {
        let pair = IntensityMixture::from_pairs(&[(1.0, 1.0), (1.0 + gap, 1.0)])?;
        println!("gap {gap}: {} layer(s)", extract_layers(&pair, 0.02, 0.05)?.len());
    }
    Ok(())
}
