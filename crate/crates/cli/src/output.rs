//! Artifacts on disk: payload files and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::commands::{Outcome, SCHEMA_VERSION};
use crate::config::{Format, RunConfig};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes).as_slice())
}

/// Payload as pretty JSON with a trailing newline; identical configs give identical bytes.
pub fn payload_bytes(outcome: &Outcome) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(&outcome.payload)?;
    v.push(b'\n');
    Ok(v)
}

pub fn csv_bytes(outcome: &Outcome) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&outcome.table.header)?;
    for row in &outcome.table.rows {
        w.write_record(row)?;
    }
    Ok(w.into_inner()?)
}

#[derive(Serialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
}

#[derive(Serialize)]
pub struct Manifest<'a> {
    pub schema_version: u32,
    pub tool_version: &'a str,
    pub core_version: &'a str,
    pub config: &'a RunConfig,
    pub config_sha256: String,
    pub started_unix: f64,
    pub wall_time_s: f64,
    pub exit_code: i32,
    pub error: Option<String>,
    pub files: Vec<FileEntry>,
}

/// Hash of the compact config JSON with keys sorted, so readers can recompute it.
pub fn config_hash(cfg: &RunConfig) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(&serde_json::to_value(cfg)?)?))
}

fn write(dir: &Path, name: &str, bytes: &[u8], files: &mut Vec<FileEntry>) -> Result<()> {
    let path: PathBuf = dir.join(name);
    fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
    files.push(FileEntry {
        name: name.into(),
        sha256: sha256_hex(bytes),
    });
    Ok(())
}

pub fn write_artifacts(cfg: &RunConfig, outcome: &Outcome) -> Result<Vec<FileEntry>> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let stem = cfg.command.name();
    let mut files = Vec::new();
    if cfg.writes(Format::Json) {
        write(&cfg.out, &format!("{stem}.json"), &payload_bytes(outcome)?, &mut files)?;
    }
    if cfg.writes(Format::Csv) {
        write(&cfg.out, &format!("{stem}.csv"), &csv_bytes(outcome)?, &mut files)?;
    }
    Ok(files)
}

pub fn write_manifest(cfg: &RunConfig, manifest: &Manifest) -> Result<()> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let mut bytes = serde_json::to_vec_pretty(manifest)?;
    bytes.push(b'\n');
    let path = cfg.out.join("manifest.json");
    fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))
}

pub fn manifest<'a>(cfg: &'a RunConfig, started_unix: f64, wall_time_s: f64, exit_code: i32, error: Option<String>, files: Vec<FileEntry>) -> Result<Manifest<'a>> {
    Ok(Manifest {
        schema_version: SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION"),
        core_version: starnet_core::VERSION,
        config: cfg,
        config_sha256: config_hash(cfg)?,
        started_unix,
        wall_time_s,
        exit_code,
        error,
        files,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn csv_quotes_fields_with_commas() {
        let o = Outcome {
            payload: serde_json::json!({}),
            table: crate::commands::Table {
                header: vec!["check".into(), "pass".into()],
                rows: vec![vec!["a, b".into(), "true".into()]],
            },
            failure: None,
        };
        assert_eq!(String::from_utf8(csv_bytes(&o).unwrap()).unwrap(), "check,pass\n\"a, b\",true\n");
    }
}
