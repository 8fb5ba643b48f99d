// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod decomposition;
pub mod depth_map;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod inference;
pub mod intensity;
pub mod losses;
pub mod optim;
pub mod pixel_fit;
pub mod synth;

pub use depth_map::{DepthUnits, MultiLayerDepthMap};
pub use error::{Error, Result};
pub use intensity::{IntensityMixture, LaplaceComponent, MixtureRule, Peak};
