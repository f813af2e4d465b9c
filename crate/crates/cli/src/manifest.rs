//! Run manifests. Each output directory gets one `manifest.json` naming
//! the command, its inputs by content hash, and the manifests of the runs
//! that produced those inputs.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{read_json, write_json};
use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
}

impl Artifact {
    pub fn of(path: &Path) -> CliResult<Self> {
        Ok(Artifact { path: path.to_path_buf(), sha256: sha256_file(path)? })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: usize,
    /// Hash over the config and input hashes, in order.
    pub input_hash: String,
    pub inputs: Vec<Artifact>,
    /// Hashes of the manifests next to the inputs, when present.
    pub parents: Vec<String>,
    pub outputs: Vec<Artifact>,
    pub output_dir: PathBuf,
    pub started_unix: u64,
    pub finished_unix: u64,
    #[serde(default)]
    pub resumed: bool,
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    Ok(sha256_bytes(&bytes))
}

pub fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Hash of the manifest in the directory of `input`, if there is one.
pub fn parent_manifest(input: &Path) -> CliResult<Option<String>> {
    let dir = input.parent().unwrap_or(Path::new("."));
    let m = dir.join(MANIFEST_FILE);
    if m.is_file() {
        Ok(Some(sha256_file(&m)?))
    } else {
        Ok(None)
    }
}

pub struct ManifestBuilder {
    m: RunManifest,
}

impl ManifestBuilder {
    pub fn new(command: &str, config_path: Option<&Path>, seed: Option<u64>, workers: usize, out: &Path) -> Self {
        ManifestBuilder {
            m: RunManifest {
                command: command.into(),
                config_path: config_path.map(Path::to_path_buf),
                seed,
                workers,
                input_hash: String::new(),
                inputs: Vec::new(),
                parents: Vec::new(),
                outputs: Vec::new(),
                output_dir: out.to_path_buf(),
                started_unix: now_unix(),
                finished_unix: 0,
                resumed: false,
            },
        }
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        self.m.inputs.push(Artifact::of(path)?);
        if let Some(h) = parent_manifest(path)? {
            if !self.m.parents.contains(&h) {
                self.m.parents.push(h);
            }
        }
        Ok(())
    }

    pub fn resumed(&mut self, yes: bool) {
        self.m.resumed = yes;
    }

    /// Hashes the outputs and writes `manifest.json` into the output
    /// directory.
    pub fn finish(mut self, config_bytes: &[u8], outputs: &[PathBuf]) -> CliResult<RunManifest> {
        let mut h = Sha256::new();
        h.update(config_bytes);
        for a in &self.m.inputs {
            h.update(a.sha256.as_bytes());
        }
        if let Some(s) = self.m.seed {
            h.update(s.to_le_bytes());
        }
        self.m.input_hash = format!("{:x}", h.finalize());
        for p in outputs {
            self.m.outputs.push(Artifact::of(p)?);
        }
        self.m.finished_unix = now_unix();
        write_json(&self.m.output_dir.join(MANIFEST_FILE), &self.m)?;
        Ok(self.m)
    }
}

pub fn read_manifest(dir: &Path) -> CliResult<RunManifest> {
    read_json(&dir.join(MANIFEST_FILE))
}
