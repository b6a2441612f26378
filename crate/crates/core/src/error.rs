use std::io;

use thiserror::Error;

/// Errors surfaced by the certification library.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is out of range or inconsistent.
    #[error("configuration error: {0}")]
    Config(String),
    /// A function argument violates its precondition.
    #[error("argument error: {0}")]
    Argument(String),
    /// No finite answer exists for the requested quantity.
    #[error("infeasible: {0}")]
    Infeasible(String),
    /// A sampled value is unusable (non-finite successor, malformed record).
    #[error("data error: {0}")]
    Data(String),
    /// Talking to an external system or touching the filesystem failed.
    #[error("i/o error: {context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
    /// The external system replied with something we could not use.
    #[error("protocol error: {0}")]
    Protocol(String),
    /// A simulator call failed while collecting a dataset.
    #[error("simulator failed at sample ({i}, {j}): {source}")]
    Simulation {
        i: usize,
        j: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        Error::Data(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
