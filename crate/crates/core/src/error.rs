use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A measurement branch with (numerically) zero probability was selected.
    #[error("impossible measurement outcome (branch probability {0:e})")]
    ImpossibleOutcome(f64),

    #[error("invalid circuit: {0}")]
    Circuit(String),

    #[error("circuit parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A configuration key is missing or carries an invalid value.
    #[error("invalid config key `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("{0}")]
    Validation(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(key: &str, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.to_string(),
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
