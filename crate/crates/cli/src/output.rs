//! CSV tables with a JSON manifest next to each.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

pub struct Table {
    pub name: String,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&'static str]) -> Self {
        Self {
            name: name.into(),
            header: header.to_vec(),
            rows: vec![],
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    tool: &'a str,
    version: &'a str,
    seed: u64,
    config_sha256: String,
    config: &'a str,
    files: Vec<String>,
}

pub fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes every table as `<name>.csv` and one `<command>.manifest.json`.
pub fn write_all(out: &Path, command: &str, seed: u64, config: &str, tables: &[Table], extra: &[PathBuf]) -> std::io::Result<()> {
    std::fs::create_dir_all(out)?;
    let mut files = vec![];
    for t in tables {
        let path = out.join(format!("{}.csv", t.name));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(&t.header)?;
        for r in &t.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        files.push(format!("{}.csv", t.name));
    }
    files.extend(extra.iter().filter_map(|p| p.strip_prefix(out).ok()).map(|p| p.display().to_string()));
    let m = Manifest {
        command,
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        seed,
        config_sha256: sha256_hex(config),
        config,
        files,
    };
    let text = serde_json::to_string_pretty(&m).map_err(std::io::Error::other)?;
    std::fs::write(out.join(format!("{command}.manifest.json")), text + "\n")
}

pub fn f(v: f64) -> String {
    format!("{v:.3}")
}
