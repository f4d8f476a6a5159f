//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("height must be strictly positive, got {value} at cell {cell}")]
    NonPositiveHeight { cell: usize, value: f64 },

    #[error("solver blowup at step {step}: {reason}")]
    SolverBlowup { step: usize, reason: String },

    #[error("length mismatch in {what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("trajectory too short: {len} samples < {delays} delays")]
    TrajectoryTooShort { len: usize, delays: usize },

    #[error(
        "bistochastic normalization did not converge after {iterations} iterations \
         (max row-sum deviation {residual:e})"
    )]
    SinkhornNonConvergence { iterations: usize, residual: f64 },

    #[error("pivoted Cholesky breakdown: residual diagonal {value:e} at sample {index}")]
    CholeskyBreakdown { index: usize, value: f64 },

    #[error("degenerate density at cell {cell}: norm {norm:e}")]
    DegenerateDensity { cell: usize, norm: f64 },

    #[error("transfer matrix operator norm {norm} exceeds contraction bound")]
    TransferNormBound { norm: f64 },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Tag an error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

/// Extension for tagging results with a pipeline stage name.
pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
