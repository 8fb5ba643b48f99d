//! Experiment configuration: one TOML file with a section per command.
//!
//! Every key is optional; missing keys take their defaults. A file holding
//! only
//!
//! ```toml
//! [fit]
//! sharing = "per_iteration"
//!
//! [fit.optim]
//! steps = 4000
//! ```
//!
//! is valid. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::decomposition::FitConfig;
use crate::error::{Error, Result};
use crate::eval::AlignMode;
use crate::inference::InferenceConfig;
use crate::pixel_fit::PixelFitConfig;
use crate::synth::{OverlapParams, TupleRequest};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub synth: SynthConfig,
    pub pixel_fit: PixelFitConfig,
    pub pixel_run: PixelRunConfig,
    pub fit: FitConfig,
    pub inference: InferenceConfig,
    pub eval: EvalConfig,
    pub plot: PlotConfig,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Defaults when `path` is `None`.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Scene description to render instead of the overlapping planes.
    pub scene_file: Option<PathBuf>,
    pub overlap: OverlapParams,
    pub noise_sigma: f64,
    pub noise_seed: u64,
    pub tuple_seed: u64,
    /// Minimum GT gap between consecutive tuple entries; 1% of the depth range when unset.
    pub eps_sep: Option<f64>,
    pub tuples: Vec<TupleRequest>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            scene_file: None,
            overlap: OverlapParams::default(),
            noise_sigma: 0.01,
            noise_seed: 1,
            tuple_seed: 0,
            eps_sep: None,
            tuples: [(2, 1000), (3, 1000), (4, 10000)]
                .into_iter()
                .map(|(arity, count)| TupleRequest {
                    arity,
                    count,
                    rule: Default::default(),
                })
                .collect(),
        }
    }
}

/// Which pixels `fit-pixel` visits and how often.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PixelRunConfig {
    /// Restarts per pixel.
    pub seeds: usize,
    pub seed: u64,
    /// `(x, y)` pairs; every annotated pixel when empty.
    pub pixels: Vec<(usize, usize)>,
    /// A recovered layer must lie within this distance of its GT depth.
    pub tolerance: f64,
    /// Loss is logged every this many steps; `0` logs only the final value.
    pub trace_every: usize,
}

impl Default for PixelRunConfig {
    fn default() -> Self {
        Self {
            seeds: 10,
            seed: 0,
            pixels: Vec::new(),
            tolerance: 0.02,
            trace_every: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub align: AlignMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotConfig {
    pub samples: usize,
    /// Grid bounds in normalized units; taken from the mixture when unset.
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    /// Automatic bounds extend this many of the largest scale past the outer centers.
    pub margin: f64,
}

impl Default for PlotConfig {
    fn default() -> Self {
        Self {
            samples: 2001,
            lo: None,
            hi: None,
            margin: 3.0,
        }
    }
}
