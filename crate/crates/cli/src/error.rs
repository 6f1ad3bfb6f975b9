use rmflab::LabError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),

    #[error("{origin}:{line}:{column}: schema error: {message}")]
    Schema { origin: String, line: usize, column: usize, message: String },

    #[error("i/o error: {0}")]
    Io(String),

    #[error(transparent)]
    Lab(#[from] LabError),

    /// Invariants that failed; the report was still written.
    #[error("{experiment}: {} invariant violation(s):\n  {}", failed.len(), failed.join("\n  "))]
    Violations { experiment: String, failed: Vec<String> },
}

impl CliError {
    /// 2 for usage and schema errors, 3 for contract violations, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Schema { .. } => 2,
            CliError::Violations { .. } | CliError::Lab(LabError::Contract(_)) => 3,
            CliError::Io(_) | CliError::Lab(_) => 1,
        }
    }
}
