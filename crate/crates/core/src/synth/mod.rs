//! Synthetic layered scenes: geometry, ground truth, features and tuples.

mod features;
mod mld;
mod scene;
mod tuples;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::decomposition::FeatureImage;
use crate::error::{Error, Result};

pub use features::{read_features, read_features_from, write_features, write_features_to, FEATURE_MAGIC};
pub use mld::{read_mld, read_mld_from, write_mld, write_mld_to, MLD_MAGIC};
pub use scene::{raycast_multilayer, scene_overlapping_planes, Camera, Geometry, OverlapParams, Scene, Surface};
pub use tuples::{
    default_eps_sep, read_tuples, read_tuples_from, sample_tuples, write_tuples, write_tuples_to, DepthTuple, DepthTupleSet, Subset,
    SubsetRule, TupleEntry, TupleRequest,
};

/// Sum of the features of every surface on each ray, plus i.i.d. Gaussian
/// noise of standard deviation `sigma` drawn in row-major order from `seed`.
pub fn render_features(scene: &Scene, sigma: f64, seed: u64) -> Result<FeatureImage> {
    scene.validate()?;
    if !(sigma >= 0.0) {
        return Err(Error::invalid("noise sigma must be non-negative"));
    }
    let dim = scene.feature_dim();
    if dim == 0 {
        return Err(Error::invalid("scene surfaces carry no features"));
    }
    if scene.surfaces.iter().any(|s| s.feature.len() != dim) {
        return Err(Error::invalid("all surfaces need features of the same dimension"));
    }
    let (w, h) = (scene.camera.width, scene.camera.height);
    let mut img = FeatureImage::zeros(h, w, dim);
    for p in 0..w * h {
        let out = img.pixel_mut(p);
        for s in scene.ray_hits(p % w, p / w) {
            out.iter_mut().zip(&s.feature).for_each(|(o, f)| *o += f);
        }
    }
    if sigma > 0.0 {
        let noise = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        img.data.iter_mut().for_each(|v| *v += noise.sample(&mut rng));
    }
    Ok(img)
}
