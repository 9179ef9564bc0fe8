use thiserror::Error;

/// Errors raised across the engine.
#[derive(Debug, Error)]
pub enum MtmdError {
    #[error("dimension error: {op} got {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl MtmdError {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        MtmdError::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}

pub type Result<T> = std::result::Result<T, MtmdError>;
