use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::CliError;

/// Artifact writer for one command invocation.
pub struct Output {
    dir: PathBuf,
    files: Vec<String>,
    started: Instant,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config_sha256: String,
    device_sha256: Option<String>,
    config: &'a ExperimentConfig,
    files: &'a [String],
    wall_time_s: f64,
}

impl Output {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new(), started: Instant::now() })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    pub fn csv<T: Serialize>(&mut self, name: &str, rows: impl IntoIterator<Item = T>) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        let io = |e: csv::Error| CliError::Runtime(format!("{}: {e}", path.display()));
        let mut w = csv::Writer::from_path(&path).map_err(io)?;
        for row in rows {
            w.serialize(row).map_err(io)?;
        }
        w.flush().map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        Ok(path)
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        write_json(&path, value)?;
        Ok(path)
    }

    pub fn finish(self, command: &str, config: &ExperimentConfig) -> Result<(), CliError> {
        let device_sha256 = match config.device_path() {
            Some(p) => Some(sha256_hex(&std::fs::read(&p).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?)),
            None => None,
        };
        let manifest = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            seed: config.seed(),
            config_sha256: config_hash(config),
            device_sha256,
            config,
            files: &self.files,
            wall_time_s: self.started.elapsed().as_secs_f64(),
        };
        write_json(&self.dir.join("manifest.json"), &manifest)
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

pub fn config_hash(config: &ExperimentConfig) -> String {
    sha256_hex(serde_json::to_string(config).expect("config serializes").as_bytes())
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
