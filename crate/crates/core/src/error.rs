use std::path::PathBuf;

/// Errors produced anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("degenerate partial likelihood: {0}")]
    Degenerate(String),

    #[error("monotone likelihood: theta = {theta} after {iterations} iterations")]
    Separation { theta: f64, iterations: usize },

    #[error("Newton iteration did not converge in {iterations} iterations (score = {score})")]
    NotConverged { iterations: usize, score: f64 },

    #[error("sigma functions were built on different quadrature schemes")]
    SchemeMismatch,

    #[error("direction is not admissible: <f, sqrt density> = {0}")]
    NotAdmissible(f64),

    #[error("perturbation step {0} too large: perturbed square root density is negative")]
    StepTooLarge(f64),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
