//! Library side of the `scplus` command-line tool: configuration, dataset
//! files, the subcommands and their artifacts.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod manifest;
pub mod plot;

use std::path::Path;

use serde::Serialize;
use thiserror::Error;

pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error("{context}: {message}")]
    Model { context: String, message: String },
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn config(key: &str, message: impl Into<String>) -> Self {
        CliError::Config {
            key: key.to_string(),
            message: message.into(),
        }
    }

    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }

    pub fn format(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Format {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }

    pub fn model(context: impl Into<String>, err: impl std::fmt::Display) -> Self {
        CliError::Model {
            context: context.into(),
            message: err.to_string(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config { .. } => "config",
            CliError::Io { .. } => "io",
            CliError::Format { .. } => "format",
            CliError::Model { .. } => "model",
        }
    }

    /// Config key or file path the error is about.
    pub fn subject(&self) -> Option<&str> {
        match self {
            CliError::Config { key, .. } => Some(key),
            CliError::Io { path, .. } | CliError::Format { path, .. } => Some(path),
            CliError::Model { .. } => None,
        }
    }

    /// Machine-readable form written to stderr on failure.
    pub fn to_json(&self) -> serde_json::Value {
        #[derive(Serialize)]
        struct Body<'a> {
            kind: &'a str,
            key: Option<&'a str>,
            message: String,
        }
        serde_json::json!({ "error": Body { kind: self.kind(), key: self.subject(), message: self.to_string() } })
    }
}
