use std::fmt;
use std::path::PathBuf;

use lungstack_core::Error as CoreError;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const DATA: i32 = 3;
    pub const RUNTIME: i32 = 4;
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Runtime(String),
    /// An upstream artifact is absent; `command` produces it.
    MissingArtifact { path: PathBuf, command: &'static str },
    Core(CoreError),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Data(_) | CliError::MissingArtifact { .. } => exit::DATA,
            CliError::Runtime(_) => exit::RUNTIME,
            CliError::Core(e) => match e {
                CoreError::ConfigMismatch { .. } | CoreError::BackendUnavailable { .. } => exit::CONFIG,
                CoreError::Io(_)
                | CoreError::NonFiniteLoss { .. }
                | CoreError::FoldFailed { .. }
                | CoreError::NotFitted(_)
                | CoreError::Dimension { .. } => exit::RUNTIME,
                _ => exit::DATA,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
            CliError::MissingArtifact { path, command } => write!(
                f,
                "missing artifact {}; run `lungstack {command}` first",
                path.display()
            ),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(format!("malformed JSON artifact: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(format!("malformed table artifact: {e}"))
    }
}
