use thiserror::Error;

/// Errors raised by the library.
///
/// Variants split into configuration problems (bad inputs, caught before a run
/// starts) and runtime failures (numerical trouble during a run). The CLI maps
/// the two families onto distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("graph not irreducible")]
    NotIrreducible,

    #[error("states not identifiable")]
    NotIdentifiable,

    #[error("periodic chain: slem of the weight matrix is {0}, online schedules need it below 1")]
    PeriodicChain(f64),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("too many aborted replications: {aborted} of {total}")]
    TooManyAborts { aborted: usize, total: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True when the error stems from the inputs rather than from running them.
    pub fn is_config(&self) -> bool {
        !matches!(
            self,
            Error::Numerical(_) | Error::TooManyAborts { .. } | Error::Io(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}
