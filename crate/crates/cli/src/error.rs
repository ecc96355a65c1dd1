use maca_core::Error as CoreError;
use thiserror::Error;

/// Command failures, each with a stable exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure on layer {layer}: {source}")]
    Numerical { layer: String, source: CoreError },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical { .. } => 4,
        }
    }

    /// Classifies a core error raised while processing `layer`.
    pub fn from_core(layer: &str, e: CoreError) -> Self {
        match e {
            CoreError::NotPositiveDefinite { .. } | CoreError::NotSymmetric(_) | CoreError::DegenerateHessian => {
                CliError::Numerical {
                    layer: layer.to_string(),
                    source: e,
                }
            }
            CoreError::InvalidConfig(_) | CoreError::BudgetTooSmall { .. } => CliError::Config(e.to_string()),
            other => CliError::Data(format!("layer {layer}: {other}")),
        }
    }

    pub fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidConfig(_) | CoreError::BudgetTooSmall { .. } => CliError::Config(e.to_string()),
            CoreError::NotPositiveDefinite { .. } | CoreError::NotSymmetric(_) | CoreError::DegenerateHessian => {
                CliError::Numerical {
                    layer: "?".into(),
                    source: e,
                }
            }
            other => CliError::Data(other.to_string()),
        }
    }
}
