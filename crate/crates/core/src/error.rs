use thiserror::Error;

/// Errors raised by every fallible operation in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {dim} is {actual}, expected {expected}")]
    ShapeMismatch {
        op: &'static str,
        dim: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{op}: {message}")]
    InvalidInput { op: &'static str, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parameter `{name}` has a non-finite gradient")]
    NonFiniteGradient { name: String },

    #[error("patch {id}: label value {value} exceeds class count {classes}")]
    LabelOutOfRange { id: u32, value: u8, classes: usize },

    #[error("class {class} has no samples")]
    EmptyClass { class: usize },

    #[error("no batch can hold a distinct sample for every foreground class")]
    Infeasible,

    #[error("backward called before a training-mode forward pass")]
    BackwardBeforeForward,

    #[error("training diverged at epoch {epoch}, iteration {iteration}: non-finite {what}")]
    Diverged {
        epoch: usize,
        iteration: usize,
        what: String,
        /// Best checkpoint recorded before the failure, if any.
        last_good: Option<Box<crate::autodiff::Checkpoint>>,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(op: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidInput {
            op,
            message: message.into(),
        }
    }
}

/// Returns a [`Error::ShapeMismatch`] unless `actual == expected`.
pub(crate) fn ensure_dim(
    op: &'static str,
    dim: &'static str,
    expected: usize,
    actual: usize,
) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            op,
            dim,
            expected,
            actual,
        })
    }
}
