//! Command-line errors and their exit codes.

use qcp_core::error::Error;
use thiserror::Error as ThisError;

#[derive(Debug, ThisError)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] Error),

    #[error("{0}")]
    Threshold(String),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// 2 for configuration errors, 3 for numerical failures, 4 for threshold violations.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => match e {
                Error::InvalidMap(_)
                | Error::InvalidParameter { .. }
                | Error::Parse(_)
                | Error::TargetTooLarge { .. }
                | Error::ImpossibleCase(_)
                | Error::Scenario(_) => 2,
                _ => 3,
            },
            CliError::Threshold(_) => 4,
            CliError::Io(_) | CliError::Csv(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            2 => "config",
            4 => "threshold",
            _ => "numerical",
        }
    }

    /// Single machine-readable line: `error kind=<kind> code=<code> reason=<message>`.
    pub fn reason_line(&self) -> String {
        format!(
            "error kind={} code={} reason={}",
            self.kind(),
            self.exit_code(),
            self.to_string().replace('\n', " ")
        )
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
