//! Run manifests written next to every command output.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

use msdiff::config::RunConfig;

/// Record of one command invocation: config snapshot, seeds, SHA-256 of
/// every input and output file, and wall-clock seconds per stage.
#[derive(Debug)]
pub struct RunManifest {
    command: String,
    config: Option<RunConfig>,
    seeds: Vec<(String, u64)>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    timings: Vec<(String, f64)>,
    clock: Instant,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {} for its digest", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            config: None,
            seeds: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: Vec::new(),
            clock: Instant::now(),
        }
    }

    pub fn config(&mut self, cfg: &RunConfig) {
        self.config = Some(cfg.clone());
    }

    pub fn seed(&mut self, name: &str, seed: u64) {
        self.seeds.push((name.to_string(), seed));
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Records the seconds since the previous mark under `stage`.
    pub fn mark(&mut self, stage: &str) {
        let now = Instant::now();
        self.timings.push((stage.to_string(), (now - self.clock).as_secs_f64()));
        self.clock = now;
    }

    pub fn render(&self) -> Result<String> {
        let mut s = String::new();
        writeln!(s, "command={}", self.command)?;
        if let Some(cfg) = &self.config {
            for line in cfg.serialize().lines() {
                writeln!(s, "config.{line}")?;
            }
        }
        for (name, seed) in &self.seeds {
            writeln!(s, "seed.{name}={seed}")?;
        }
        for p in &self.inputs {
            writeln!(s, "input.{}={}", p.display(), sha256_file(p)?)?;
        }
        for p in &self.outputs {
            writeln!(s, "output.{}={}", p.display(), sha256_file(p)?)?;
        }
        for (stage, secs) in &self.timings {
            writeln!(s, "seconds.{stage}={secs:.3}")?;
        }
        Ok(s)
    }

    /// Writes `<primary output>.manifest`.
    pub fn write_for(&self, primary: &Path) -> Result<PathBuf> {
        let mut name = primary.as_os_str().to_owned();
        name.push(".manifest");
        let path = PathBuf::from(name);
        fs::write(&path, self.render()?).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
