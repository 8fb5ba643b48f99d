use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// All depths in the map are identical, so the mean absolute deviation is zero.
    #[error("degenerate scale: all {count} depth values equal {value}")]
    DegenerateScale { count: usize, value: f64 },

    /// The remapped component has (numerically) zero norm, so the rescaling factor is undefined.
    #[error("rescale degenerate at iteration {iteration}: remapped norm {norm:e}")]
    RescaleDegenerate { iteration: usize, norm: f64 },

    #[error("alignment failed: {0}")]
    Alignment(String),

    #[error("loss diverged at step {step}: {value}")]
    Divergence { step: usize, value: f64 },

    #[error("gradient check failed: {0}")]
    GradientCheck(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }

    /// True for failures that come from the numerics rather than from the input data.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateScale { .. }
                | Error::RescaleDegenerate { .. }
                | Error::Alignment(_)
                | Error::Divergence { .. }
                | Error::GradientCheck(_)
        )
    }
}
