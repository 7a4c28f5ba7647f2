use thiserror::Error;

pub type Result<T> = std::result::Result<T, HclError>;

#[derive(Debug, Error)]
pub enum HclError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("non-finite value in {0}")]
    Numeric(String),

    #[error("snapshot ordering violated: epoch {epoch} is not after last stored epoch {last}")]
    Ordering { epoch: usize, last: usize },

    #[error("checkpoint format error in `{field}`: {reason}")]
    Format { field: String, reason: String },

    #[error("degenerate contrast batch: {0}")]
    DegenerateBatch(String),

    #[error("configuration error in `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("epoch {epoch}, iteration {iteration}: {source}")]
    Training {
        epoch: usize,
        iteration: usize,
        #[source]
        source: Box<HclError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl HclError {
    pub fn format(field: impl Into<String>, reason: impl Into<String>) -> Self {
        HclError::Format {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        HclError::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn in_training(self, epoch: usize, iteration: usize) -> Self {
        HclError::Training {
            epoch,
            iteration,
            source: Box::new(self),
        }
    }
}
