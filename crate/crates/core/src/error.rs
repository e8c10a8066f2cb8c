use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("nonpositive depth {value} at pixel ({x}, {y})")]
    NonPositiveDepth { x: usize, y: usize, value: f64 },

    #[error("operator is numerically indefinite at CG iteration {iteration} (p^T A p = {curvature:e})")]
    Indefinite { iteration: usize, curvature: f64 },

    #[error("training diverged at epoch {epoch}; last finite loss {last_finite_loss:?}")]
    Divergence {
        epoch: usize,
        last_finite_loss: Option<f64>,
    },

    #[error("non-finite latent at sampler step {step}")]
    NonFiniteLatent { step: usize },

    #[error("non-finite parameters in {0}")]
    NonFiniteParameters(&'static str),

    #[error("tensor container: {0}")]
    Container(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("missing artifacts: {}", .0.join(", "))]
    MissingArtifacts(Vec<String>),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
