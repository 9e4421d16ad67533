use std::path::PathBuf;

/// Errors raised across the localizer stack.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("tensor of shape {shape:?} needs {expected} values, got {actual}")]
    Length {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value {value} at flat index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("softmax row {row} is fully masked")]
    DegenerateRow { row: usize },

    #[error("cosine similarity undefined for a zero vector")]
    UndefinedSimilarity,

    #[error("label {value} at index {index} is not 0 or 1")]
    Label { index: usize, value: f64 },

    #[error("expected a scalar loss, got shape {shape:?}")]
    Rank { shape: Vec<usize> },

    #[error("loss evaluation failed: {0}")]
    Evaluation(String),

    #[error("missing entry for `{0}`")]
    Key(String),

    #[error("invalid {field} for `{id}`: {reason}")]
    Validation { field: String, id: String, reason: String },

    #[error("non-finite {term} loss at step {step}")]
    NonFiniteLoss { term: &'static str, step: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("{path}:{line}: {reason}")]
    Parse { path: PathBuf, line: usize, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn validation(field: impl Into<String>, id: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            id: id.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by numerical breakdown rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. } | Error::NonFiniteLoss { .. } | Error::DegenerateRow { .. } | Error::Evaluation(_)
        )
    }
}
