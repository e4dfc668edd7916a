//! Run manifests and deterministic artifact writers.

use std::path::{Path, PathBuf};

use serde::Serialize;
use socialcircle::rng::fnv1a;

use crate::{CliError, RunConfig, Result};

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::format(path, e))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Artifact {
    /// Relative to the output directory.
    pub path: String,
    pub bytes: u64,
    /// FNV-1a 64 of the contents, hex.
    pub fnv1a: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Versions {
    pub scplus: &'static str,
    pub socialcircle: &'static str,
}

/// Echo of one invocation. Holds no timestamps or absolute output paths.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest<'a> {
    pub command: &'a str,
    pub seed: u64,
    pub inputs: Vec<(String, String)>,
    pub config: &'a RunConfig,
    pub versions: Versions,
    pub artifacts: Vec<Artifact>,
}

/// Path relative to `out` when inside it, else as given.
pub fn display_rel(path: &Path, out: &Path) -> String {
    path.strip_prefix(out)
        .unwrap_or(path)
        .to_string_lossy()
        .replace('\\', "/")
}

fn describe(path: &Path, out: &Path) -> Result<Artifact> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(Artifact {
        path: display_rel(path, out),
        bytes: bytes.len() as u64,
        fnv1a: format!("{:016x}", fnv1a(&bytes)),
    })
}

/// Writes `manifest.<command>.json` listing `artifacts`; returns its path.
pub fn write_manifest(
    cfg: &RunConfig,
    command: &str,
    inputs: &[(&str, &Path)],
    artifacts: &[PathBuf],
) -> Result<PathBuf> {
    let out = &cfg.out;
    let mut listed = artifacts
        .iter()
        .map(|p| describe(p, out))
        .collect::<Result<Vec<_>>>()?;
    listed.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = Manifest {
        command,
        seed: cfg.seed,
        inputs: inputs
            .iter()
            .map(|(k, p)| (k.to_string(), display_rel(p, out)))
            .collect(),
        config: cfg,
        versions: Versions {
            scplus: env!("CARGO_PKG_VERSION"),
            socialcircle: socialcircle::VERSION,
        },
        artifacts: listed,
    };
    let path = out.join(format!("manifest.{command}.json"));
    write_json(&path, &manifest)?;
    Ok(path)
}
