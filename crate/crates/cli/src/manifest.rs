use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::time::Duration;

use anyhow::{Context, Result};
use ignn_core::{PropagationConfig, PushStats};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.txt";

/// Ordered `key=value` lines describing one run.
#[derive(Debug, Default)]
pub struct RunManifest {
    entries: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new(command: &str, threads: usize) -> Self {
        let mut m = Self::default();
        m.set("command", command);
        m.set("threads", threads);
        m
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Display) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn config(&mut self, cfg: &PropagationConfig) {
        self.set("alpha", cfg.alpha);
        self.set("beta", cfg.beta);
        self.set("epsilon", cfg.epsilon);
    }

    pub fn digest_file(&mut self, name: &str, path: &Path) -> Result<()> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.set(format!("input.{name}.sha256"), hex::encode(Sha256::digest(&bytes)));
        Ok(())
    }

    pub fn phase(&mut self, name: &str, stats: &PushStats) {
        self.set(format!("phase.{name}.pushes"), stats.pushes);
        self.set(format!("phase.{name}.touched_entries"), stats.touched_entries);
        self.set(format!("phase.{name}.push_seconds"), seconds(stats.wall_time));
    }

    pub fn wall(&mut self, name: &str, elapsed: Duration) {
        self.set(format!("wall.{name}_seconds"), seconds(elapsed));
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn write_into(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join(MANIFEST_FILE), self.render()).with_context(|| format!("writing manifest into {}", dir.display()))
    }
}

fn seconds(d: Duration) -> String {
    format!("{:.6}", d.as_secs_f64())
}
