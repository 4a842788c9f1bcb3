use levy_switching::Error as CoreError;
use thiserror::Error;

use crate::config::ConfigErrors;

/// Process exit statuses.
pub const EXIT_OK: u8 = 0;
pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_NUMERICAL: u8 = 2;
pub const EXIT_USAGE: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(#[from] ConfigErrors),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Config(_) | CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }

    /// Wraps a module error with what was being done, classified by cause.
    pub fn core(context: &str, e: CoreError) -> Self {
        let message = format!("{context}: {e}");
        match e {
            CoreError::InvalidMeasure { .. }
            | CoreError::InfiniteActivity
            | CoreError::DegenerateLevy
            | CoreError::Mismatch(_)
            | CoreError::SigmaBound { .. }
            | CoreError::EventOutsideHorizon { .. }
            | CoreError::InvalidStrategy(_)
            | CoreError::Validation(_)
            | CoreError::ChainLeak { .. }
            | CoreError::NotStochastic { .. }
            | CoreError::Unsupported(_)
            | CoreError::InvalidInput(_) => CliError::Validation(message),
            _ => CliError::Numerical(message),
        }
    }

    pub fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        CliError::Usage(format!("{}: {e}", path.display()))
    }
}

/// `map_err` helper: `.map_err(ctx("solving"))`.
pub fn ctx(context: &'static str) -> impl Fn(CoreError) -> CliError {
    move |e| CliError::core(context, e)
}
