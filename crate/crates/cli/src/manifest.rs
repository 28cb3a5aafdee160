use anyhow::{Context, Result};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
pub struct RunManifest<C: Serialize> {
    pub manifest_version: u32,
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    pub threads: Option<usize>,
    /// Fully resolved config; `--config manifest.json` replays the run.
    pub config: C,
    pub outputs: Vec<String>,
    pub duration_secs: f64,
}

/// Collects output files of one run and writes the manifest last.
pub struct Run {
    command: &'static str,
    dir: PathBuf,
    started: Instant,
    outputs: Vec<String>,
}

impl Run {
    pub fn start(command: &'static str, dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { command, dir: dir.to_path_buf(), started: Instant::now(), outputs: Vec::new() })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(path.display().to_string());
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, &s)
    }

    pub fn finish<C: Serialize>(self, seed: u64, threads: Option<usize>, config: &C) -> Result<()> {
        let manifest = RunManifest {
            manifest_version: MANIFEST_VERSION,
            command: self.command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            threads,
            config,
            outputs: self.outputs.clone(),
            duration_secs: self.started.elapsed().as_secs_f64(),
        };
        let mut me = self;
        me.write_json("manifest.json", &manifest)?;
        Ok(())
    }
}
