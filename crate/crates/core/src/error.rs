use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("resolution error: {0}")]
    Resolution(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("assumptions violated: {}", .0.join("; "))]
    Assumption(Vec<String>),
    #[error("divergence at t = {time}: {detail}")]
    Divergence { time: f64, detail: String },
    #[error(
        "no convergence after {iterations} iterations (last change {last_change:.3e}, last ratio {last_ratio:.4})"
    )]
    NonConvergence {
        iterations: usize,
        last_change: f64,
        last_ratio: f64,
    },
    #[error("fit error: {0}")]
    Fit(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Wraps the error with the location where it happened, keeping the variant.
    pub fn context(self, what: impl std::fmt::Display) -> Self {
        match self {
            Error::Config(m) => Error::Config(format!("{what}: {m}")),
            Error::Resolution(m) => Error::Resolution(format!("{what}: {m}")),
            Error::Range(m) => Error::Range(format!("{what}: {m}")),
            Error::Precondition(m) => Error::Precondition(format!("{what}: {m}")),
            Error::Fit(m) => Error::Fit(format!("{what}: {m}")),
            Error::Divergence { time, detail } => Error::Divergence {
                time,
                detail: format!("{what}: {detail}"),
            },
            other => other,
        }
    }
}
