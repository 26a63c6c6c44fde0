use std::path::PathBuf;

use thiserror::Error;

use crate::ir::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// `location` is the (line, column) of JSON syntax errors; the message
    /// already mentions it.
    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String, location: Option<(usize, usize)> },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("network failed validation:\n{}", format_violations(.0))]
    Validation(Vec<Violation>),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("grouping error: {0}")]
    Grouping(String),

    #[error("invalid prune plan: {0}")]
    Plan(String),

    #[error("tape error: {0}")]
    Tape(String),

    #[error("training diverged at epoch {epoch}, step {step} (loss {loss})")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("{0}")]
    Empty(String),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|v| format!("  - {v}")).collect::<Vec<_>>().join("\n")
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn json(context: impl Into<String>, e: serde_json::Error) -> Self {
        Error::Parse { context: context.into(), message: e.to_string(), location: Some((e.line(), e.column())) }
    }

    pub(crate) fn field(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse { context: context.into(), message: message.into(), location: None }
    }

    /// Process exit code for the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. } | Error::Config(_) => 2,
            Error::Validation(_) => 3,
            Error::Io { .. } => 4,
            _ => 1,
        }
    }
}
