//! Output directory writer. Every artifact is listed with its SHA-256 in
//! `manifest.json`; wall-clock timings go to `timings.json`, which the
//! manifest does not cover, so reruns give byte-identical bundles.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use mcqa_transfer::model::Checkpoint;
use mcqa_transfer::transfer::RunRecord;
use mcqa_transfer::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    engine_version: &'a str,
    /// SHA-256 of the `config.json` bytes.
    fingerprint: String,
    files: BTreeMap<String, String>,
}

pub struct Bundle {
    dir: PathBuf,
    command: String,
    files: BTreeMap<String, String>,
    timings: BTreeMap<String, f64>,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn sha_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Bundle {
    pub fn new(dir: &Path, command: &str) -> Bundle {
        Bundle {
            dir: dir.to_path_buf(),
            command: command.to_string(),
            files: BTreeMap::new(),
            timings: BTreeMap::new(),
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn ensure_dir(&self) -> Result<()> {
        fs::create_dir_all(&self.dir).map_err(io(&self.dir))
    }

    pub fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        self.ensure_dir()?;
        let path = self.path(name);
        fs::write(&path, bytes.as_ref()).map_err(io(&path))?;
        self.files.insert(name.to_string(), sha_hex(bytes.as_ref()));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text)
    }

    pub fn write_record(&mut self, name: &str, record: &RunRecord) -> Result<()> {
        let mut text = record.to_json()?;
        text.push('\n');
        self.write(name, text)
    }

    pub fn write_checkpoint(&mut self, name: &str, ck: &Checkpoint) -> Result<()> {
        self.ensure_dir()?;
        ck.save(&self.path(name))?;
        self.register(name)
    }

    /// Lists a file some other writer already put in the bundle directory.
    pub fn register(&mut self, name: &str) -> Result<()> {
        let path = self.path(name);
        let bytes = fs::read(&path).map_err(io(&path))?;
        self.files.insert(name.to_string(), sha_hex(&bytes));
        Ok(())
    }

    pub fn time(&mut self, stage: &str, took: Duration) {
        *self.timings.entry(stage.to_string()).or_default() += took.as_secs_f64();
    }

    /// Writes `config.json`, `manifest.json` and `timings.json`.
    pub fn finish(mut self, config: &ExperimentConfig) -> Result<PathBuf> {
        self.write_json("config.json", config)?;
        let manifest = Manifest {
            command: &self.command,
            engine_version: ENGINE_VERSION,
            fingerprint: self.files["config.json"].clone(),
            files: self.files.clone(),
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        let path = self.path("manifest.json");
        fs::write(&path, text).map_err(io(&path))?;
        let path = self.path("timings.json");
        fs::write(&path, serde_json::to_string_pretty(&self.timings)? + "\n").map_err(io(&path))?;
        Ok(self.dir)
    }
}
