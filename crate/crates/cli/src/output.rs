//! Output files and the run manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

/// Record of one invocation, rewritten after every output so an interrupted
/// run still lists what it produced and is marked incomplete.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<String>,
    /// sha256 of the config file bytes.
    pub config_sha256: Option<String>,
    pub seed: u64,
    pub outputs: Vec<String>,
    pub wall_time_s: f64,
    pub version: String,
    pub complete: bool,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub struct OutputDir {
    dir: PathBuf,
    prefix: String,
    manifest: RunManifest,
    started: Instant,
}

impl OutputDir {
    pub fn create(dir: &Path, prefix: &str, manifest: RunManifest) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        let out = OutputDir {
            dir: dir.to_path_buf(),
            prefix: prefix.to_string(),
            manifest,
            started: Instant::now(),
        };
        out.write_manifest()?;
        Ok(out)
    }

    pub fn warn(&mut self, message: impl Into<String>) {
        let message = message.into();
        eprintln!("warning: {message}");
        self.manifest.warnings.push(message);
    }

    /// Writes `{prefix}_{name}` and records it in the manifest.
    pub fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        let path = self.dir.join(format!("{}_{name}", self.prefix));
        write_atomic(&path, contents.as_bytes())?;
        self.manifest.outputs.push(path.file_name().expect("file path").to_string_lossy().into_owned());
        self.write_manifest()?;
        Ok(path)
    }

    pub fn write_json(&mut self, name: &str, value: &serde_json::Value) -> Result<PathBuf, CliError> {
        let text = serde_json::to_string_pretty(value).expect("json values serialize") + "\n";
        self.write(name, &text)
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.manifest.complete = true;
        self.write_manifest()
    }

    fn write_manifest(&self) -> Result<(), CliError> {
        let mut m = serde_json::to_value(&self.manifest).expect("manifest serializes");
        m["wall_time_s"] = serde_json::json!(self.started.elapsed().as_secs_f64());
        let path = self.dir.join(format!("{}_manifest.json", self.prefix));
        write_atomic(&path, (serde_json::to_string_pretty(&m).expect("json") + "\n").as_bytes())
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("partial");
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    drop(f);
    fs::rename(&tmp, path).map_err(io)
}

/// CSV with a header row, `.` decimals and LF endings; fails on any
/// non-finite value.
pub struct Csv {
    text: String,
    columns: usize,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Csv {
            text: header.join(",") + "\n",
            columns: header.len(),
        }
    }

    pub fn row(&mut self, cells: &[Cell]) -> Result<(), CliError> {
        debug_assert_eq!(cells.len(), self.columns);
        let mut parts = Vec::with_capacity(cells.len());
        for c in cells {
            parts.push(match c {
                Cell::Num(v) if !v.is_finite() => {
                    return Err(CliError::Numeric(format!("non-finite value {v} in output")));
                }
                // no "-0" in output
                Cell::Num(v) => format!("{}", if *v == 0.0 { 0.0 } else { *v }),
                Cell::Int(v) => v.to_string(),
                Cell::Text(s) => s.clone(),
            });
        }
        self.text.push_str(&parts.join(","));
        self.text.push('\n');
        Ok(())
    }

    pub fn into_string(self) -> String {
        self.text
    }
}

pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
}

/// Passes finite values through; serde_json would silently turn the rest
/// into `null`.
pub fn finite(v: f64, what: &str) -> Result<f64, CliError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::Numeric(format!("{what} is not finite ({v})")))
    }
}
