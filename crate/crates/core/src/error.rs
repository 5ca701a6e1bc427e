use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the adaptation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Input violates a precondition (shapes, ranges, non-finite values).
    #[error("validation error: {0}")]
    Validation(String),

    /// A file could not be read or written.
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A CSV or JSON document could not be parsed.
    #[error("parse error in {path} at row {row}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        column: String,
        message: String,
    },

    /// An error raised inside a named pipeline stage.
    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with the name of the stage that produced it.
    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }

    /// True when the root cause is an I/O or parse failure.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io { .. } | Error::Parse { .. } => true,
            Error::Stage { source, .. } => source.is_io(),
            Error::Validation(_) => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Attaches a stage name to the error of a result.
pub(crate) trait StageExt<T> {
    fn stage(self, stage: &str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
