use thiserror::Error;

pub type Result<T, E = MateError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum MateError {
    /// Malformed network, trips, observation or feature input.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("no path from node {origin} to node {destination}")]
    Disconnected { origin: u64, destination: u64 },

    /// A non-finite value appeared in a forward layer or gradient group.
    #[error("non-finite values in {location}")]
    Numeric { location: String },

    /// Synthetic ground truth could not be produced.
    #[error("generation failed: {0}")]
    Generation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl MateError {
    pub fn parse(line: usize, message: impl Into<String>) -> Self {
        MateError::Parse {
            line,
            message: message.into(),
        }
    }

    pub fn numeric(location: impl Into<String>) -> Self {
        MateError::Numeric {
            location: location.into(),
        }
    }

    /// Attach epoch/sample context to a numeric failure.
    pub fn in_context(self, context: &str) -> Self {
        match self {
            MateError::Numeric { location } => MateError::Numeric {
                location: format!("{location} ({context})"),
            },
            other => other,
        }
    }
}
