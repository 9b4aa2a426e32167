use thiserror::Error;

#[derive(Debug, Error)]
pub enum FpmError {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// A file did not match its binary or text schema.
    #[error("format error: {0}")]
    Format(String),
    #[error("config error: {0}")]
    Config(String),
    /// Non-finite or diverging optimization state.
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<FpmError>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl FpmError {
    pub fn domain(msg: impl Into<String>) -> Self {
        FpmError::Domain(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        FpmError::Shape(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        FpmError::Format(msg.into())
    }

    /// Tags an error with the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        FpmError::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, FpmError>;
