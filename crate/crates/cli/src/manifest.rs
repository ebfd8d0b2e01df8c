//! Run manifest: resolved configuration, stage timings and an inventory of
//! every file the run wrote.

use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub seconds: f64,
    pub status: StageStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    /// Path relative to the output directory.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

impl FileRecord {
    pub fn from_file(dir: &Path, name: &str) -> io::Result<Self> {
        let data = std::fs::read(dir.join(name))?;
        Ok(Self {
            path: name.to_string(),
            bytes: data.len() as u64,
            sha256: sha256_hex(&data),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    /// Resolved configuration as TOML; parsing it reproduces the run.
    pub config: String,
    pub workers: usize,
    pub stages: Vec<StageRecord>,
    pub failed_stage: Option<String>,
    pub files: Vec<FileRecord>,
}

impl RunManifest {
    pub fn new(command: &str, config: String, workers: usize) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config,
            workers,
            stages: Vec::new(),
            failed_stage: None,
            files: Vec::new(),
        }
    }

    pub fn succeeded(&self) -> bool {
        self.failed_stage.is_none()
    }

    pub fn file(&self, name: &str) -> Option<&FileRecord> {
        self.files.iter().find(|f| f.path == name)
    }

    pub fn write(&self, dir: &Path) -> io::Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(io::Error::other)?;
        std::fs::write(dir.join(MANIFEST_FILE), json + "\n")
    }

    pub fn read(dir: &Path) -> io::Result<Self> {
        let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
        serde_json::from_str(&text).map_err(io::Error::other)
    }
}

pub fn sha256_hex(data: &[u8]) -> String {
    Sha256::digest(data)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.csv"), "x\n1\n").unwrap();
        let mut m = RunManifest::new("table1", "[solver]\nseed = 1\n".into(), 2);
        m.stages.push(StageRecord {
            name: "table1".into(),
            seconds: 0.5,
            status: StageStatus::Ok,
            error: None,
        });
        m.files
            .push(FileRecord::from_file(dir.path(), "a.csv").unwrap());
        m.write(dir.path()).unwrap();
        let back = RunManifest::read(dir.path()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.file("a.csv").unwrap().bytes, 4);
    }
}
