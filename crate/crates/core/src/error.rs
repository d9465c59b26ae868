use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("format error in {path}: {reason}")]
    Format { path: String, reason: String },

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("{model} diverged at epoch {epoch} (step {step}): loss is not finite")]
    Divergence { model: String, epoch: usize, step: usize },

    #[error("class {class} starved: {accepted} accepted out of {attempts} attempts (acceptance rate {rate:.4})")]
    Starvation {
        class: usize,
        accepted: usize,
        attempts: usize,
        rate: f64,
    },

    #[error("missing input: {}", .0.display())]
    Path(PathBuf),

    #[error("config error: {0}")]
    Config(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn format(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Attaches the pipeline stage name to an error.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// The innermost error, skipping stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}
