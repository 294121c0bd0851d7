use std::fmt::Display;
use std::path::{Path, PathBuf};

/// A failure tagged with the subcommand and, when relevant, the file.
#[derive(Debug, thiserror::Error)]
#[error("{command}: {}{message}", path.as_ref().map(|p| format!("{}: ", p.display())).unwrap_or_default())]
pub struct CliError {
    pub command: &'static str,
    pub path: Option<PathBuf>,
    pub message: String,
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn new(command: &'static str, path: Option<&Path>, message: impl Into<String>) -> Self {
        Self {
            command,
            path: path.map(Path::to_path_buf),
            message: message.into(),
        }
    }
}

pub trait Context<T> {
    fn ctx(self, command: &'static str, path: &Path) -> Result<T>;
    fn ctx_no_path(self, command: &'static str) -> Result<T>;
}

impl<T, E: Display> Context<T> for std::result::Result<T, E> {
    fn ctx(self, command: &'static str, path: &Path) -> Result<T> {
        self.map_err(|e| CliError::new(command, Some(path), e.to_string()))
    }

    fn ctx_no_path(self, command: &'static str) -> Result<T> {
        self.map_err(|e| CliError::new(command, None, e.to_string()))
    }
}
