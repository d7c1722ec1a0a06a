use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value or file.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input outside an operation's domain (wrong lengths, negative quantities, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A computation produced a non-finite value.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("training error: {0}")]
    Training(String),

    /// Result file is missing a required series or field.
    #[error("schema error: {0}")]
    Schema(String),

    /// Statistic undefined for the given data.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("tuning error: {0}")]
    Tuning(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Wraps the error with a short description of where it happened.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error below any context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }
}
