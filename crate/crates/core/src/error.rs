use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("activation cache does not belong to this network state")]
    StaleCache,

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("schema error: missing column `{0}`")]
    Schema(String),

    #[error("cannot fit CATE model: {0}")]
    Fit(String),

    #[error("model state error: {0}")]
    State(String),

    #[error("behavior model: {0}")]
    Behavior(String),

    #[error("numeric abort at epoch {epoch}: {message}")]
    NumericAbort { epoch: usize, message: String },

    #[error("report error: no metrics found in {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    MissingMetrics(Vec<PathBuf>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn ensure_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Shape {
            context,
            expected,
            got,
        });
    }
    Ok(())
}
