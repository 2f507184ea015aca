use thiserror::Error;

/// Errors produced anywhere in the consensus pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("bin collision in record '{record}': dates {first} and {second} fall in the same bin")]
    BinCollision { record: String, first: f64, second: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numeric failure{}: {message}", context_suffix(.iteration, .parameter))]
    Numeric { message: String, iteration: Option<usize>, parameter: Option<String> },

    #[error("unsupported mode: {0}")]
    UnsupportedMode(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn context_suffix(iteration: &Option<usize>, parameter: &Option<String>) -> String {
    match (iteration, parameter) {
        (Some(it), Some(p)) => format!(" at iteration {it} while updating {p}"),
        (Some(it), None) => format!(" at iteration {it}"),
        (None, Some(p)) => format!(" while updating {p}"),
        (None, None) => String::new(),
    }
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric { message: msg.into(), iteration: None, parameter: None }
    }

    /// Attach sampler position to a numeric failure. Other variants pass through.
    pub(crate) fn at(self, iteration: usize, parameter: &str) -> Self {
        match self {
            Error::Numeric { message, .. } => {
                Error::Numeric { message, iteration: Some(iteration), parameter: Some(parameter.to_string()) }
            }
            other => other,
        }
    }

    /// True for errors caused by user configuration or input rather than
    /// numerical breakdown.
    pub fn is_config(&self) -> bool {
        !matches!(self, Error::Numeric { .. } | Error::Io(_))
    }

    /// Process exit status: 3 for numeric failures, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric { .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
