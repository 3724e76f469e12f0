use thiserror::Error;

/// Conditioning diagnostics captured when a Cholesky factorization gives up.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorDiagnostics {
    pub dim: usize,
    /// Jitter values tried, in order.
    pub jitter_tried: Vec<f64>,
    /// Most negative (or smallest) pivot seen on the last attempt.
    pub worst_pivot: f64,
    pub diag_min: f64,
    pub diag_max: f64,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numerical failure: matrix of size {} not SPD after jitter {:?} (worst pivot {:e}, diag range [{:e}, {:e}])",
        .0.dim, .0.jitter_tried, .0.worst_pivot, .0.diag_min, .0.diag_max)]
    NotPositiveDefinite(FactorDiagnostics),

    #[error("field query at ({x}, {y}) failed: {source}")]
    Query {
        x: f64,
        y: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("metric undefined: {0}")]
    EmptyInput(&'static str),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// True for errors caused by bad inputs or files rather than numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Contract(_)
                | Error::Format(_)
                | Error::Io(_)
                | Error::Json(_)
                | Error::Csv(_)
                | Error::Toml(_)
                | Error::EmptyInput(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
