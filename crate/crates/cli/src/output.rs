//! Run directory writer: CSV and JSON files plus the append-only ledger.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::checks::Criterion;
use crate::config::ScenarioConfig;
use crate::error::Result;

pub const LEDGER: &str = "ledger.jsonl";

/// CSV cell; floats use 17 significant digits.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    F(f64),
    I(i64),
    S(String),
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::F(x)
    }
}

impl From<u32> for Cell {
    fn from(x: u32) -> Self {
        Cell::I(x as i64)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::I(x as i64)
    }
}

impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::S(x.to_string())
    }
}

impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::S(x.to_string())
    }
}

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn push_cell(out: &mut String, c: &Cell) {
    match c {
        Cell::F(x) => out.push_str(&fmt_f64(*x)),
        Cell::I(i) => out.push_str(&i.to_string()),
        Cell::S(s) => {
            if s.contains([',', '"', '\n']) {
                out.push('"');
                out.push_str(&s.replace('"', "\"\""));
                out.push('"');
            } else {
                out.push_str(s);
            }
        }
    }
}

/// Header row plus data rows, LF line endings.
pub fn csv_string(header: &[&str], rows: &[Vec<Cell>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        for (k, c) in row.iter().enumerate() {
            if k > 0 {
                out.push(',');
            }
            push_cell(&mut out, c);
        }
        out.push('\n');
    }
    out
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 of `"blob <len>\0" + bytes`, the git object layout.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| crate::error::CliError::Config(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Sole writer of one run directory.
#[derive(Debug)]
pub struct RunWriter {
    dir: PathBuf,
    files: Vec<FileRecord>,
}

impl RunWriter {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn files(&self) -> &[FileRecord] {
        &self.files
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        fs::write(self.dir.join(name), bytes)?;
        self.files.push(FileRecord { path: name.to_string(), sha256: sha256_hex(bytes), bytes: bytes.len() });
        Ok(())
    }

    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<Cell>]) -> Result<()> {
        self.write(name, csv_string(header, rows).as_bytes())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write(name, json_string(value)?.as_bytes())
    }

    pub fn append_ledger(&self, entry: &LedgerEntry) -> Result<()> {
        let mut line = serde_json::to_string(entry).map_err(|e| crate::error::CliError::Config(e.to_string()))?;
        line.push('\n');
        let mut f = OpenOptions::new().create(true).append(true).open(self.dir.join(LEDGER))?;
        f.write_all(line.as_bytes())?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CriterionSummary {
    pub id: u32,
    pub title: String,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckSummary {
    pub total: usize,
    pub passed: usize,
    pub failed: usize,
    pub criteria: Vec<CriterionSummary>,
}

impl CheckSummary {
    pub fn of(criteria: &[Criterion]) -> Self {
        let passed = criteria.iter().filter(|c| c.passed).count();
        Self {
            total: criteria.len(),
            passed,
            failed: criteria.len() - passed,
            criteria: criteria
                .iter()
                .map(|c| CriterionSummary { id: c.id, title: c.title.clone(), passed: c.passed })
                .collect(),
        }
    }
}

/// One line of `ledger.jsonl`.
#[derive(Debug, Serialize)]
pub struct LedgerEntry<'a> {
    pub command: &'a str,
    /// SHA-256 of the resolved configuration as JSON.
    pub config_hash: String,
    /// Git-style hash of the configuration file as given.
    pub input_hash: String,
    pub files: &'a [FileRecord],
    pub checks: CheckSummary,
    pub exit_code: i32,
    pub threads: usize,
    pub elapsed_s: f64,
    /// Resolved configuration, including every tolerance.
    pub config: &'a ScenarioConfig,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn csv_layout() {
        let s = csv_string(&["a", "b"], &[vec![Cell::F(0.1), Cell::from("x,\"y\"")], vec![Cell::I(-3), Cell::from(true)]]);
        assert_eq!(s, "a,b\n1.0000000000000001e-1,\"x,\"\"y\"\"\"\n-3,true\n");
    }

    #[test]
    fn blob_hash_matches_git_object_layout() {
        // `git hash-object` uses SHA-1; the layout is the same with SHA-256
        assert_eq!(blob_hash(b""), sha256_hex(b"blob 0\0"));
        assert_ne!(blob_hash(b"a"), sha256_hex(b"a"));
    }

    proptest! {
        #[test]
        fn floats_round_trip_exactly(x in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            prop_assert_eq!(fmt_f64(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
    }
}
