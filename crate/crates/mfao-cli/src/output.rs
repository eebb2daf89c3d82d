//! Output directory bookkeeping and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use mfao::transport::{FieldData, FieldHeader};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Files written by one subcommand, in write order.
pub struct RunDir {
    root: PathBuf,
    files: Vec<String>,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(RunDir { root: root.to_path_buf(), files: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let p = self.path(name);
        fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))?;
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.bytes(name, s.as_bytes())
    }

    pub fn csv<T: Serialize>(&mut self, name: &str, rows: &[T], header: &[&str]) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        if rows.is_empty() {
            // serde cannot name the columns of an empty table
            w.write_record(header)?;
        }
        for r in rows {
            w.serialize(r)?;
        }
        let buf = w.into_inner().map_err(|e| anyhow::anyhow!("csv: {e}"))?;
        self.bytes(name, &buf)
    }

    pub fn field(&mut self, name: &str, header: &FieldHeader, data: &FieldData) -> Result<()> {
        let mut buf = Vec::new();
        mfao::transport::field::write_field(&mut buf, header, data)?;
        self.bytes(name, &buf)
    }

    /// Writes `manifest-<command>.json` listing every file with its hash.
    pub fn finish(mut self, command: &str, config_text: &str, seed: u64, tolerances: serde_json::Value) -> Result<Vec<String>> {
        let mut outputs = Vec::new();
        let mut names = self.files.clone();
        names.sort();
        for name in &names {
            let bytes = fs::read(self.path(name))?;
            outputs.push(OutputEntry { file: name.clone(), bytes: bytes.len(), sha256: sha256_hex(&bytes) });
        }
        let m = Manifest {
            command: command.to_string(),
            config_sha256: sha256_hex(config_text.as_bytes()),
            seed,
            versions: Versions {
                mfao: mfao::VERSION.to_string(),
                mfao_cli: env!("CARGO_PKG_VERSION").to_string(),
                field_format: mfao::transport::field::FORMAT_VERSION,
            },
            tolerances,
            outputs,
        };
        self.json(&format!("manifest-{command}.json"), &m)?;
        Ok(std::mem::take(&mut self.files))
    }
}

#[derive(Serialize)]
struct Manifest {
    command: String,
    config_sha256: String,
    seed: u64,
    versions: Versions,
    tolerances: serde_json::Value,
    outputs: Vec<OutputEntry>,
}

#[derive(Serialize)]
struct Versions {
    mfao: String,
    mfao_cli: String,
    field_format: u16,
}

#[derive(Serialize)]
struct OutputEntry {
    file: String,
    bytes: usize,
    sha256: String,
}
