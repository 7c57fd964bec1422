//! Artifact collection and writing.
//!
//! Artifacts are assembled in memory and written in one pass, followed by
//! `manifest.json`, which lists every other file with its SHA-256. If any
//! write fails, the files written so far are removed again.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use mfglab::io::Matrix;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::OutputSection;
use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Manifest {
    pub command: String,
    pub files: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serialises");
        s.push('\n');
        s
    }
}

/// Files of one run, keyed by name. Names ending in `.csv`, `.jsonl` or `.bin`
/// are dropped unless their format is enabled.
#[derive(Debug)]
pub struct Artifacts {
    command: String,
    formats: Vec<String>,
    files: BTreeMap<String, Vec<u8>>,
}

impl Artifacts {
    pub fn new(command: &str, output: &OutputSection) -> Self {
        Self { command: command.to_string(), formats: output.formats.clone(), files: BTreeMap::new() }
    }

    fn enabled(&self, name: &str) -> bool {
        match name.rsplit_once('.') {
            Some((_, ext @ ("csv" | "jsonl" | "bin"))) => self.formats.iter().any(|f| f == ext),
            _ => true,
        }
    }

    pub fn add(&mut self, name: &str, bytes: impl Into<Vec<u8>>) {
        if self.enabled(name) {
            self.files.insert(name.to_string(), bytes.into());
        }
    }

    pub fn add_json<S: Serialize>(&mut self, name: &str, value: &S) {
        let mut s = serde_json::to_string_pretty(value).expect("artifact serialises");
        s.push('\n');
        self.add(name, s);
    }

    pub fn add_jsonl<S: Serialize>(&mut self, name: &str, rows: impl IntoIterator<Item = S>) {
        let mut s = String::new();
        for r in rows {
            s.push_str(&serde_json::to_string(&r).expect("artifact serialises"));
            s.push('\n');
        }
        self.add(name, s);
    }

    pub fn add_matrix(&mut self, name: &str, m: &Matrix) {
        if self.enabled(name) {
            self.files.insert(name.to_string(), m.to_bytes());
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.keys().map(|s| s.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.files.get(name).map(|v| v.as_slice())
    }

    pub fn manifest(&self) -> Manifest {
        let files = self
            .files
            .iter()
            .map(|(path, bytes)| ManifestEntry {
                path: path.clone(),
                bytes: bytes.len() as u64,
                sha256: hex::encode(Sha256::digest(bytes)),
            })
            .collect();
        Manifest { command: self.command.clone(), files }
    }

    /// Writes every file and the manifest into `dir`, creating it if needed.
    pub fn write(&self, dir: &Path) -> Result<Manifest, CliError> {
        let manifest = self.manifest();
        let created_dir = !dir.exists();
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let mut written: Vec<PathBuf> = Vec::new();
        let entries = self.files.iter().map(|(n, b)| (n.as_str(), b.clone()));
        let all = entries.chain(std::iter::once((MANIFEST, manifest.to_json().into_bytes())));
        for (name, bytes) in all {
            let path = dir.join(name);
            if let Err(e) = fs::write(&path, &bytes) {
                for p in &written {
                    let _ = fs::remove_file(p);
                }
                if created_dir {
                    let _ = fs::remove_dir(dir);
                }
                return Err(CliError::io(&path, e));
            }
            written.push(path);
        }
        Ok(manifest)
    }
}
