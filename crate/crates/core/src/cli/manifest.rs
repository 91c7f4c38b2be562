use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use serde::{Deserialize, Serialize};

pub const MANIFEST_NAME: &str = "manifest.json";

/// What a run did, written once into every output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: String,
    pub seed: Option<u64>,
    /// Resolved configuration, one entry per key.
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub workers: usize,
    pub duration_s: f64,
    pub failures: Vec<String>,
}

impl RunManifest {
    pub fn read(dir: &Path) -> anyhow::Result<Self> {
        let path = dir.join(MANIFEST_NAME);
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Collects the pieces of a manifest while a subcommand runs.
pub(crate) struct Recorder {
    started: Instant,
    m: RunManifest,
    out: PathBuf,
}

impl Recorder {
    pub fn new(subcommand: &str, out: &Path, workers: usize) -> anyhow::Result<Self> {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Self {
            started: Instant::now(),
            out: out.to_path_buf(),
            m: RunManifest {
                subcommand: subcommand.into(),
                version: env!("CARGO_PKG_VERSION").into(),
                seed: None,
                config: BTreeMap::new(),
                inputs: Vec::new(),
                outputs: Vec::new(),
                workers,
                duration_s: 0.0,
                failures: Vec::new(),
            },
        })
    }

    pub fn seed(&mut self, seed: u64) {
        self.m.seed = Some(seed);
    }

    pub fn config(&mut self, pairs: BTreeMap<String, String>) {
        self.m.config.extend(pairs);
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.m.config.insert(key.into(), value.to_string());
    }

    pub fn input(&mut self, p: &Path) {
        self.m.inputs.push(p.display().to_string());
    }

    /// Path of output `name` inside the output directory, recorded.
    pub fn output(&mut self, name: &str) -> PathBuf {
        self.m.outputs.push(name.into());
        self.out.join(name)
    }

    pub fn failure(&mut self, what: String) {
        self.m.failures.push(what);
    }

    pub fn finish(mut self) -> anyhow::Result<usize> {
        self.m.duration_s = self.started.elapsed().as_secs_f64();
        let path = self.out.join(MANIFEST_NAME);
        fs::write(&path, serde_json::to_string_pretty(&self.m)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(self.m.failures.len())
    }
}
