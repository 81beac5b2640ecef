//! Experiment driver behind the `rectnet` binary: config parsing, targets,
//! the frame self-check and the atlas / approximation / compilation pipeline.
//! Everything is a deterministic function of the config and its seed.

pub mod config;
pub mod pipeline;
pub mod selfcheck;
pub mod targets;

use std::path::Path;

use serde::Serialize;

pub use config::{BoxSpec, ExperimentConfig, Method, Scales, TargetSpec};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{stage} failed: {source}")]
    Pipeline {
        stage: &'static str,
        #[source]
        source: crate::error::Error,
    },

    #[error("check `{name}` failed: {detail}")]
    Check { name: String, detail: String },

    #[error("i/o error on {path}: {detail}")]
    Io { path: String, detail: String },
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            _ => 1,
        }
    }

    pub(crate) fn check(name: &str, detail: impl Into<String>) -> Self {
        HarnessError::Check {
            name: name.to_string(),
            detail: detail.into(),
        }
    }
}

/// Tags a library error with the pipeline stage it came from.
pub(crate) trait Stage<T> {
    fn stage(self, stage: &'static str) -> Result<T, HarnessError>;
}

impl<T> Stage<T> for crate::error::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T, HarnessError> {
        self.map_err(|source| HarnessError::Pipeline { stage, source })
    }
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), HarnessError> {
    let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
    text.push('\n');
    write_text(dir, name, &text)
}

pub fn write_text(dir: &Path, name: &str, text: &str) -> Result<(), HarnessError> {
    let io = |e: std::io::Error, p: &Path| HarnessError::Io {
        path: p.display().to_string(),
        detail: e.to_string(),
    };
    std::fs::create_dir_all(dir).map_err(|e| io(e, dir))?;
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| io(e, &path))
}
