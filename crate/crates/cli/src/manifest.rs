//! Per-stage manifests that make reruns skip work whose inputs are unchanged.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{PipelineError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub inputs_hash: String,
    pub parameters: Value,
    pub version: String,
    /// Output files relative to the stage directory.
    pub outputs: Vec<String>,
}

/// Accumulates everything a stage's outputs depend on.
pub struct InputHasher(Sha256);

impl InputHasher {
    pub fn new(stage: &str, parameters: &Value) -> Self {
        let mut h = Sha256::new();
        h.update(stage.as_bytes());
        h.update([0]);
        h.update(parameters.to_string().as_bytes());
        h.update([0]);
        InputHasher(h)
    }

    pub fn file(&mut self, path: &Path) -> Result<()> {
        let mut f = fs::File::open(path)
            .map_err(|e| PipelineError::validation(format!("{}: {e}", path.display())))?;
        let mut buf = vec![0u8; 1 << 16];
        loop {
            let n = f.read(&mut buf)?;
            if n == 0 {
                break;
            }
            self.0.update(&buf[..n]);
        }
        self.0.update([0]);
        Ok(())
    }

    pub fn text(&mut self, s: &str) {
        self.0.update(s.as_bytes());
        self.0.update([0]);
    }

    pub fn finish(self) -> String {
        self.0
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

pub fn manifest_path(stage_dir: &Path) -> PathBuf {
    stage_dir.join(MANIFEST_FILE)
}

pub fn read_manifest(stage_dir: &Path) -> Option<Manifest> {
    let text = fs::read_to_string(manifest_path(stage_dir)).ok()?;
    serde_json::from_str(&text).ok()
}

/// True when a manifest with the same hash, parameters and version exists and
/// all of its outputs are still on disk.
pub fn is_current(stage_dir: &Path, inputs_hash: &str, parameters: &Value) -> bool {
    read_manifest(stage_dir).is_some_and(|m| {
        m.inputs_hash == inputs_hash
            && &m.parameters == parameters
            && m.version == env!("CARGO_PKG_VERSION")
            && m.outputs.iter().all(|o| stage_dir.join(o).is_file())
    })
}

pub fn write_manifest(stage_dir: &Path, inputs_hash: String, parameters: Value, outputs: Vec<String>) -> Result<()> {
    let m = Manifest {
        inputs_hash,
        parameters,
        version: env!("CARGO_PKG_VERSION").to_string(),
        outputs,
    };
    fs::write(manifest_path(stage_dir), serde_json::to_string_pretty(&m)? + "\n")?;
    Ok(())
}
