use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("row {row} has zero norm")]
    ZeroRow { row: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("margin family {0} does not take a margin")]
    InvalidFamily(&'static str),

    #[error("invalid margin spec: {0}")]
    InvalidSpec(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("standard deviation must be non-negative, got {0}")]
    NegativeSigma(f64),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("could not place {classes} class centers {min_angle_deg} degrees apart in {attempts} attempts")]
    RejectionFailure {
        classes: usize,
        min_angle_deg: f64,
        attempts: usize,
    },

    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    Divergence { iteration: usize, loss: f64 },

    #[error("fold {fold} leaves a training split without both genuine and impostor pairs")]
    DegenerateFold { fold: usize },

    #[error("index {index} out of range for {len} embeddings")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("gallery is empty")]
    EmptyGallery,

    #[error("expected 2-D embeddings, got d = {0}")]
    RequiresTwoD(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}:{line}: {message}")]
    Format {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
