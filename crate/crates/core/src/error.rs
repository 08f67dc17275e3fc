use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not symmetric: |a[{row}][{col}] - a[{col}][{row}]| = {deviation:e}")]
    SymmetryViolation {
        row: usize,
        col: usize,
        deviation: f64,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("probability vector sums to {sum} after clamping")]
    Normalization { sum: f64 },

    #[error("matrix is not positive definite even with jitter {jitter:e}")]
    NotPositiveDefinite { jitter: f64 },

    #[error("kernel matrix is not positive semidefinite: eigenvalue {eigenvalue:e} of K/n")]
    NotPsd { eigenvalue: f64 },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("trajectory mean has zero norm; cosine similarity undefined")]
    DegenerateMean,

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("episode is over (step {step} of {len})")]
    EpisodeOver { step: usize, len: usize },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("index {index} out of range (limit {limit}): {what}")]
    Index {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("skill memory slot {skill} is not completely filled")]
    UnfilledMemory { skill: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(
        "epoch {epoch}, scene {scene}{}: {source}",
        step.map(|s| format!(", step {s}")).unwrap_or_default()
    )]
    Training {
        epoch: usize,
        scene: usize,
        step: Option<usize>,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn at(self, epoch: usize, scene: usize, step: Option<usize>) -> Error {
        match self {
            e @ Error::Training { .. } => e,
            e => Error::Training {
                epoch,
                scene,
                step,
                source: Box::new(e),
            },
        }
    }
}
