use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("not enough points: need at least {needed}, got {got}")]
    InsufficientPoints { needed: usize, got: usize },

    #[error("least-squares system is rank deficient (duplicate or clustered parameters)")]
    RankDeficient,

    #[error("parameter {value} outside [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },

    #[error("expected {expected} coefficients, got {got}")]
    CoefficientCount { expected: String, got: usize },

    #[error("malformed PLY header: {0}")]
    PlyHeader(String),

    #[error("PLY is missing required property `{0}`")]
    PlyMissingField(String),

    #[error("PLY payload truncated: expected {expected} bytes, found {found}")]
    PlyTruncated { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("scene is empty")]
    EmptyScene,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("plugin `{command}` failed: {reason}")]
    Plugin { command: String, reason: String },

    #[error("plugin contract violated: {0}")]
    Contract(String),

    #[error("non-finite loss at step {step} (view {view}, {splats} splats)")]
    NonFiniteLoss { step: usize, view: usize, splats: usize },

    #[error("run directory {0} is locked by another run")]
    Locked(PathBuf),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn file(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::File { path, source }
    }

    /// True for errors caused by user input rather than a failing stage.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) => true,
            Error::Stage { source, .. } => source.is_config(),
            _ => false,
        }
    }
}
