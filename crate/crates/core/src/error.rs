use thiserror::Error;

/// Errors raised while loading a case or preparing a solver.
///
/// Iteration failures (leaving the ψ domain, hitting the iteration cap) are
/// not errors; they are reported through [`crate::solution::Termination`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("model error: {0}")]
    Model(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error(
        "M_B has numerical rank {rank}, expected {expected}; suspect branches: {suspects:?}"
    )]
    RankDeficient {
        rank: usize,
        expected: usize,
        suspects: Vec<(u32, u32)>,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("unknown algorithm '{0}'")]
    UnknownAlgorithm(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }

    /// True for errors that stem from the case data itself (parse or model
    /// problems) rather than from a numerical failure.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Model(_)
                | Error::Assumption(_)
                | Error::RankDeficient { .. }
                | Error::Io(_)
                | Error::Json(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
