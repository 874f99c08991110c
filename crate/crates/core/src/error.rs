use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid section: {0}")]
    InvalidSection(String),

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid weight: {0}")]
    InvalidWeight(String),

    #[error("resolution: {0}")]
    Resolution(String),

    #[error("linear solver: {0}")]
    Solver(String),

    #[error("eigensolver: {0}")]
    Eigen(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("dimension mismatch: {0}")]
    Mismatch(String),

    #[error("config parse error at line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    #[error("config key `{key}`: {message}")]
    ConfigKey { key: String, message: String },

    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn in_stage(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
