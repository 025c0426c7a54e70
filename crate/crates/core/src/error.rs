//! Crate-wide error type.

use thiserror::Error;

use crate::timetag::FormatError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the physically meaningful range.
    #[error("domain error: {0}")]
    Domain(String),

    /// A frequency grid cannot be built or is malformed.
    #[error("grid error: {0}")]
    Grid(String),

    /// The spectral product has not decayed at the grid edges, so the
    /// discrete transform would alias. Widen the grid span.
    #[error(
        "aliasing: spectral product at the grid edge is {edge_ratio:.3e} of its peak \
         (limit {limit:.1e}); widen the frequency grid"
    )]
    Aliasing { edge_ratio: f64, limit: f64 },

    /// A single run would generate more events than fits one buffer.
    #[error(
        "capacity: expected {expected:.3e} events exceeds the single-run limit of {limit}; \
         shorten the duration or split the run"
    )]
    Capacity { expected: f64, limit: u64 },

    /// Configuration rejected; `path` is the dotted field path.
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    /// Correlation search found no peak above the significance threshold.
    #[error("no alignment found: significance {significance:.2} is below threshold {threshold}")]
    NoAlignment { significance: f64, threshold: f64 },

    /// A reconstruction has no usable points.
    #[error("empty reconstruction: {0}")]
    EmptyReconstruction(String),

    /// Malformed time-tag data.
    #[error(transparent)]
    Format(#[from] FormatError),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn grid(msg: impl Into<String>) -> Self {
        Error::Grid(msg.into())
    }

    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
