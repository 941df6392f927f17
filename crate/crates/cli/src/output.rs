use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;
use serde_json::{Map, Value};

use crate::config::ExperimentConfig;
use crate::CliError;

pub const OUT_ENV: &str = "HIERBENCH_OUT";

/// `--out` wins; otherwise `<root>/<command>[-seed<seed>]` under
/// `$HIERBENCH_OUT` or `runs`.
pub fn resolve_out(explicit: Option<&Path>, command: &str, seed: Option<u64>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    let root = std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
    match seed {
        Some(s) => root.join(format!("{command}-seed{s}")),
        None => root.join(command),
    }
}

/// Output directory of one command. Data files are deterministic; wall-clock
/// figures only ever go to `meta.json`.
pub struct RunDir {
    root: PathBuf,
    timings: Map<String, Value>,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root).map_err(|e| CliError::Io(format!("{}: {e}", root.display())))?;
        Ok(Self { root: root.to_path_buf(), timings: Map::new() })
    }

    /// Creates the directory and writes the effective config before any
    /// computation starts.
    pub fn with_echo(root: &Path, cfg: &ExperimentConfig) -> Result<Self, CliError> {
        let dir = Self::create(root)?;
        let echo = toml::to_string(cfg).map_err(|e| CliError::Config(e.to_string()))?;
        dir.write_text("config.toml", &echo)?;
        Ok(dir)
    }

    pub fn sub(&self, name: &str) -> Result<Self, CliError> {
        Self::create(&self.root.join(name))
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<(), CliError> {
        let path = self.path(name);
        std::fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }

    pub fn write_csv<R: IntoIterator<Item = Vec<String>>>(&self, name: &str, header: &[&str], rows: R) -> Result<(), CliError> {
        let mut w = csv::Writer::from_path(self.path(name))?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        self.write_text(name, &(text + "\n"))
    }

    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = std::time::Instant::now();
        let out = f();
        self.record(stage, start.elapsed());
        out
    }

    pub fn record(&mut self, stage: &str, elapsed: Duration) {
        self.timings.insert(stage.to_string(), Value::from(elapsed.as_secs_f64()));
    }

    pub fn write_meta(&self) -> Result<(), CliError> {
        let meta = serde_json::json!({
            "version": env!("CARGO_PKG_VERSION"),
            "wall_seconds": self.timings,
        });
        self.write_json("meta.json", &meta)
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn num(x: f64) -> String {
    format!("{x}")
}

pub fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}
