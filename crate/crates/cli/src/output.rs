//! Artifact directory: CSV tables, JSON reports, `summary.txt` and `manifest.json`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::error::CliError;

/// Magic bytes opening a terminal-state dump.
pub const DUMP_MAGIC: &[u8; 8] = b"JCIRBIN1";

pub struct RunDir {
    pub dir: PathBuf,
    artifacts: Vec<String>,
    summary: Vec<String>,
}

impl RunDir {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            artifacts: Vec::new(),
            summary: Vec::new(),
        })
    }

    fn register(&mut self, name: &str) -> PathBuf {
        if !self.artifacts.iter().any(|a| a == name) {
            self.artifacts.push(name.to_string());
        }
        self.dir.join(name)
    }

    pub fn artifacts(&self) -> &[String] {
        &self.artifacts
    }

    /// CSV from serializable rows (header from field names).
    pub fn rows<S: Serialize>(&mut self, name: &str, rows: &[S]) -> Result<(), CliError> {
        let mut w = csv::Writer::from_path(self.register(name))?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// CSV from an explicit header and string records.
    pub fn table<I>(&mut self, name: &str, header: &[String], records: I) -> Result<(), CliError>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let mut w = csv::Writer::from_path(self.register(name))?;
        w.write_record(header)?;
        for r in records {
            w.write_record(&r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn json<S: Serialize>(&mut self, name: &str, value: &S) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value)?;
        fs::write(self.register(name), text + "\n")?;
        Ok(())
    }

    /// Registers a file written by other code and returns its path.
    pub fn path(&mut self, name: &str) -> PathBuf {
        self.register(name)
    }

    pub fn note(&mut self, line: impl Into<String>) {
        self.summary.push(line.into());
    }

    pub fn write_summary(&mut self, experiment: &str) -> Result<(), CliError> {
        let mut text = format!("{experiment}\n");
        for l in &self.summary {
            text.push_str(l);
            text.push('\n');
        }
        fs::write(self.register("summary.txt"), text)?;
        Ok(())
    }
}

#[derive(Serialize)]
pub struct Manifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub experiment: &'a str,
    pub seed: u64,
    pub threads: usize,
    pub created_unix: u64,
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorInfo>,
    pub rng: RngInfo,
    pub artifacts: &'a [String],
    /// The resolved config; `jcir run --config manifest.json` replays it.
    pub config: &'a toml::Table,
}

#[derive(Serialize)]
pub struct ErrorInfo {
    pub kind: &'static str,
    pub exit_code: i32,
    pub message: String,
}

#[derive(Serialize)]
pub struct RngInfo {
    pub generator: &'static str,
    pub streams: &'static str,
}

impl Default for RngInfo {
    fn default() -> Self {
        Self {
            generator: jcir::levy_rng::GENERATOR_NAME,
            streams: jcir::levy_rng::STREAM_RULE,
        }
    }
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<(), CliError> {
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(manifest)? + "\n",
    )?;
    Ok(())
}

/// Terminal states as `magic, m: u64, n_paths: u64, master_seed: u64` followed
/// by row-major little-endian `f64`.
pub fn write_dump(
    path: &Path,
    m: usize,
    n_paths: usize,
    seed: u64,
    data: &[f64],
) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(DUMP_MAGIC)?;
    for v in [m as u64, n_paths as u64, seed] {
        w.write_all(&v.to_le_bytes())?;
    }
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Shortest round-trip decimal form.
pub fn num(v: f64) -> String {
    v.to_string()
}
