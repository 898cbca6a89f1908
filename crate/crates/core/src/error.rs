//! Error type shared by all modules of the crate.

use thiserror::Error;

/// Errors produced by model construction, linearization, filtering,
/// smoothing and the scan engine.
#[derive(Debug, Error)]
pub enum Error {
    /// Mismatched or invalid matrix/vector dimensions.
    #[error("dimension error in {context}: {detail}")]
    Dimension {
        context: &'static str,
        detail: String,
    },

    /// A matrix that must be positive definite could not be factorized,
    /// even after the jitter ladder. `step` is the time index when known.
    #[error("singular matrix in {context}{}", step_suffix(.step))]
    Singular {
        context: &'static str,
        step: Option<usize>,
    },

    /// Bearing measurement requested for a target exactly at a sensor.
    #[error("degenerate geometry: target coincides with sensor {sensor}")]
    DegenerateGeometry { sensor: usize },

    /// An operation that requires at least one element got none.
    #[error("empty input in {context}")]
    EmptyInput { context: &'static str },

    /// SLR linearization requires nominal covariances.
    #[error("nominal trajectory has no covariances (required by SLR)")]
    MissingCovariances,

    /// A combine inside the scan failed; `lo..=hi` is the range of
    /// original element indices the failing combine covered.
    #[error("scan combine failed over elements {lo}..={hi}: {source}")]
    ScanCombine {
        lo: usize,
        hi: usize,
        #[source]
        source: Box<Error>,
    },

    /// Failure inside an outer smoothing iteration.
    #[error("iteration {iteration} failed: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    /// Worker-pool construction failure.
    #[error("scan engine error: {detail}")]
    Engine { detail: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    /// Malformed trajectory file contents.
    #[error("trajectory format error at line {line}: {detail}")]
    Format { line: usize, detail: String },
}

fn step_suffix(step: &Option<usize>) -> String {
    match step {
        Some(k) => format!(" at step {k}"),
        None => String::new(),
    }
}

impl Error {
    /// Attach a step index to a singular-matrix error that lacks one.
    pub(crate) fn with_step(self, k: usize) -> Error {
        match self {
            Error::Singular { context, step: None } => Error::Singular {
                context,
                step: Some(k),
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
