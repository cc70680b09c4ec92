//! File formats: data and plot CSVs, JSON results, run manifests.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use svb_core::Dataset;

use crate::error::{CliError, CliResult};

#[derive(Debug, Serialize, Deserialize)]
struct DataRow {
    y: f64,
}

/// Reads a single-column CSV with header `y`.
pub fn read_data(path: &Path) -> CliResult<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| CliError::parse(path, e))?.clone();
    if headers.len() != 1 || &headers[0] != "y" {
        return Err(CliError::parse(
            path,
            format!("expected header `y`, found `{}`", headers.as_slice()),
        ));
    }
    let mut values = Vec::new();
    for (i, row) in rdr.deserialize::<DataRow>().enumerate() {
        let row = row.map_err(|e| CliError::parse(path, format!("row {}: {e}", i + 1)))?;
        values.push(row.y);
    }
    if values.is_empty() {
        return Err(CliError::parse(path, "no data rows"));
    }
    Dataset::new(values).map_err(|e| CliError::parse(path, e))
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Writes serializable rows as CSV with `\n` line endings.
pub fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> CliResult<()> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    for r in rows {
        wtr.serialize(r).map_err(|e| CliError::parse(path, e))?;
    }
    let bytes = wtr.into_inner().map_err(|e| CliError::parse(path, e))?;
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn write_data(path: &Path, data: &Dataset) -> CliResult<()> {
    write_csv(path, data.values().iter().map(|&y| DataRow { y }))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::parse(path, e))?;
    s.push('\n');
    fs::write(path, s).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::parse(path, e))
}

/// Everything needed to rerun a subcommand: the exact argument vector plus
/// the fully resolved configuration for inspection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seed: Option<u64>,
    pub version: String,
}

impl RunManifest {
    pub fn new(
        subcommand: &str,
        args: &[String],
        config: serde_json::Value,
        seed: Option<u64>,
    ) -> Self {
        RunManifest {
            subcommand: subcommand.to_string(),
            args: args.to_vec(),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn file_name(subcommand: &str) -> String {
        format!("{subcommand}.manifest.json")
    }

    /// Writes the manifest into `dir` and returns its path.
    pub fn write(&self, dir: &Path) -> CliResult<PathBuf> {
        let path = dir.join(Self::file_name(&self.subcommand));
        write_json(&path, self)?;
        Ok(path)
    }
}
