use std::fmt;

/// Broad failure classes, used by the command-line front end to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty sample")]
    EmptySample,

    #[error("level unattainable: {level} exceeds the supremum {sup} of the function")]
    LevelUnattainable { level: f64, sup: f64 },

    #[error("ties require jitter or midrank policy (duplicate value {value})")]
    Ties { value: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("column `{0}` not found")]
    MissingColumn(String),

    #[error("winsorize ratio undefined at zero (observation {index})")]
    WinsorizeZero { index: usize },

    #[error("transformation undefined at observation {index} (value {value})")]
    TransformUndefined { index: usize, value: f64 },

    #[error("{stage}: matrix is rank deficient (rank {rank} of {cols} columns)")]
    Singular {
        stage: &'static str,
        rank: usize,
        cols: usize,
    },

    #[error("matrix is not positive definite; consider flooring eigenvalues ({0})")]
    NotPositiveDefinite(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("{failed} of {total} draws failed, above the 1% ceiling")]
    TooManyFailures { failed: usize, total: usize },

    #[error("data error: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("[{module}] {source}")]
    Tagged {
        module: &'static str,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidArgument(_) | Error::Config(_) => ErrorKind::Usage,
            Error::EmptySample
            | Error::Ties { .. }
            | Error::MissingColumn(_)
            | Error::WinsorizeZero { .. }
            | Error::TransformUndefined { .. }
            | Error::Data(_)
            | Error::Io(_)
            | Error::Csv(_) => ErrorKind::Data,
            Error::LevelUnattainable { .. }
            | Error::Singular { .. }
            | Error::NotPositiveDefinite(_)
            | Error::NonFinite(_)
            | Error::TooManyFailures { .. } => ErrorKind::Numerical,
            Error::Tagged { source, .. } => source.kind(),
        }
    }

    /// Wraps the error with the name of the module it came from.
    pub fn in_module(self, module: &'static str) -> Error {
        match self {
            tagged @ Error::Tagged { .. } => tagged,
            other => Error::Tagged {
                module,
                source: Box::new(other),
            },
        }
    }

    pub(crate) fn invalid(msg: impl fmt::Display) -> Error {
        Error::InvalidArgument(msg.to_string())
    }
}
