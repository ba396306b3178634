use std::fmt;
use std::path::Path;

/// Failure of a subcommand, carrying its process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Invalid configuration or input; exit 2.
    Config { line: Option<usize>, message: String },
    /// The computation itself failed; exit 3.
    Numeric(qpmforge_core::Error),
    /// Writing results failed; exit 1.
    Output { path: String, source: std::io::Error },
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError::Config {
            line: None,
            message: message.into(),
        }
    }

    pub fn config_at(line: usize, message: impl Into<String>) -> Self {
        CliError::Config {
            line: Some(line),
            message: message.into(),
        }
    }

    pub fn output(path: &Path, source: std::io::Error) -> Self {
        CliError::Output {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Numeric(_) => 3,
            CliError::Output { .. } => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config { line: Some(l), message } => write!(f, "config error at line {l}: {message}"),
            CliError::Config { line: None, message } => write!(f, "config error: {message}"),
            CliError::Numeric(e) => write!(f, "numeric failure: {e}"),
            CliError::Output { path, source } => write!(f, "cannot write {path}: {source}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<qpmforge_core::Error> for CliError {
    fn from(e: qpmforge_core::Error) -> Self {
        CliError::Numeric(e)
    }
}
