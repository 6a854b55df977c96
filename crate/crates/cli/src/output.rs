use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;

/// Output directory plus the bookkeeping for its manifest.
pub struct Run {
    pub dir: PathBuf,
    command: String,
    seed: u64,
    config: serde_json::Value,
    outputs: Vec<String>,
    started: Instant,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    argv: Vec<String>,
    config: &'a serde_json::Value,
    seed: u64,
    version: &'static str,
    outputs: &'a [String],
    wall_clock_seconds: f64,
}

impl Run {
    pub fn new(dir: PathBuf, command: &str, seed: u64, config: serde_json::Value) -> Result<Self> {
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir,
            command: command.to_owned(),
            seed,
            config,
            outputs: Vec::new(),
            started: Instant::now(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        if !self.outputs.iter().any(|o| o == name) {
            self.outputs.push(name.to_owned());
        }
        self.dir.join(name)
    }

    /// CSV file whose first lines are `#` comments describing the columns.
    pub fn csv(
        &mut self,
        name: &str,
        comments: &[&str],
        body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>,
    ) -> Result<()> {
        let path = self.path(name);
        let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        body(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.path(name);
        write_json(&path, value)
    }

    pub fn finish(self) -> Result<()> {
        let manifest = RunManifest {
            command: &self.command,
            argv: std::env::args().collect(),
            config: &self.config,
            seed: self.seed,
            version: env!("CARGO_PKG_VERSION"),
            outputs: &self.outputs,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        };
        write_json(&self.dir.join("manifest.json"), &manifest)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}
