use std::path::{Path, PathBuf};

use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{0}")]
    Runtime(#[from] mfglab::Error),

    #[error("I/O error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Outputs were written but at least one check failed.
    #[error("validation failed: {}", failed.join(", "))]
    ValidationFailed { failed: Vec<String> },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<CliError>,
    },
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn with_context(self, context: impl Into<String>) -> Self {
        CliError::Context { context: context.into(), source: Box::new(self) }
    }

    fn root(&self) -> &CliError {
        match self {
            CliError::Context { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.root() {
            CliError::Config(_) => "config",
            CliError::Runtime(e) => match e.root() {
                mfglab::Error::Config(_) => "config",
                mfglab::Error::Domain(_) => "domain",
                mfglab::Error::Precondition(_) => "precondition",
                mfglab::Error::Blowup { .. } => "blowup",
                _ => "solver",
            },
            CliError::Io { .. } => "io",
            CliError::ValidationFailed { .. } => "validation",
            CliError::Context { .. } => unreachable!("root strips context"),
        }
    }

    /// 2 for configuration problems, 3 for failed validation checks, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "config" => 2,
            "validation" => 3,
            _ => 1,
        }
    }

    /// One-line JSON object for stderr.
    pub fn to_json(&self) -> String {
        json!({ "error": { "kind": self.kind(), "message": self.to_string() } }).to_string()
    }
}
