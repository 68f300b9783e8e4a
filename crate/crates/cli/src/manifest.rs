//! Run manifests and output bookkeeping.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::config::Config;
use crate::error::CliError;

pub const OUT_DIR_ENV: &str = "BDC_OUT_DIR";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn git_describe() -> &'static str {
    env!("BDC_GIT_DESCRIBE")
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: BTreeMap<String, String>,
    pub seeds: Vec<u64>,
    pub git_describe: String,
    pub status: String,
    pub wall_time_s: Option<f64>,
    pub outputs: Vec<String>,
    pub summary: BTreeMap<String, String>,
}

/// The environment variable wins over both config and flag.
pub fn resolve_out_dir(configured: &str) -> PathBuf {
    match std::env::var(OUT_DIR_ENV) {
        Ok(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from(configured),
    }
}

/// An active run: owns the output directory and the manifest.
pub struct Run {
    dir: PathBuf,
    manifest: RunManifest,
    clock: Instant,
}

impl Run {
    /// Creates the directory and writes the initial manifest.
    pub fn start(subcommand: &str, config: &Config, seeds: Vec<u64>, dir: PathBuf) -> Result<Self, CliError> {
        fs::create_dir_all(&dir)?;
        let manifest = RunManifest {
            subcommand: subcommand.to_string(),
            config: config.entries().clone(),
            seeds,
            git_describe: git_describe().to_string(),
            status: "running".into(),
            wall_time_s: None,
            outputs: Vec::new(),
            summary: BTreeMap::new(),
        };
        let run = Self { dir, manifest, clock: Instant::now() };
        run.save()?;
        Ok(run)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        fs::write(&path, contents)?;
        self.manifest.outputs.push(name.to_string());
        Ok(path)
    }

    pub fn note(&mut self, key: &str, value: impl ToString) {
        self.manifest.summary.insert(key.to_string(), value.to_string());
    }

    fn save(&self) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(&self.manifest).map_err(std::io::Error::other)?;
        fs::write(self.dir.join(MANIFEST_FILE), text + "\n")?;
        Ok(())
    }

    /// Records the final status and wall time.
    pub fn finish(mut self, failure: Option<String>) -> Result<RunManifest, CliError> {
        self.manifest.status = failure.unwrap_or_else(|| "ok".into());
        self.manifest.wall_time_s = Some(self.clock.elapsed().as_secs_f64());
        self.save()?;
        Ok(self.manifest)
    }
}
