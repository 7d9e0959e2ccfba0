//! Reproducibility record of a run directory.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageRecord {
    /// SHA-256 of the configuration the stage ran with.
    pub config_sha256: String,
    /// Run-relative path to SHA-256 of every file read.
    pub inputs: BTreeMap<String, String>,
    /// Run-relative path to SHA-256 of every file written.
    pub outputs: BTreeMap<String, String>,
    pub wall_clock_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub config_sha256: String,
    pub versions: BTreeMap<String, String>,
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunManifest {
    pub fn new(config_sha256: String) -> Self {
        let versions = BTreeMap::from([
            ("pacs-core".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            ("format".to_string(), FORMAT_VERSION.to_string()),
        ]);
        Self { config_sha256, versions, stages: BTreeMap::new() }
    }

    pub fn load(run_dir: &Path) -> Result<Option<Self>> {
        let path = run_dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        io::read_json(&path).map(Some)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Digests of `files`, keyed by their path relative to `run_dir`.
pub fn digests<P: AsRef<Path>>(run_dir: &Path, files: &[P]) -> Result<BTreeMap<String, String>> {
    files
        .iter()
        .map(|f| {
            let f = f.as_ref();
            let key = f.strip_prefix(run_dir).unwrap_or(f).to_string_lossy().replace('\\', "/");
            Ok((key, file_digest(f)?))
        })
        .collect()
}

static MANIFEST_LOCK: Mutex<()> = Mutex::new(());

/// Replaces one stage entry of the run manifest. Writers are serialized.
pub fn record_stage(run_dir: &Path, config_sha256: &str, stage: &str, record: StageRecord) -> Result<RunManifest> {
    let _guard = MANIFEST_LOCK.lock().unwrap_or_else(|p| p.into_inner());
    let mut manifest = match RunManifest::load(run_dir)? {
        Some(m) if m.config_sha256 == config_sha256 || stage != "simulate" => m,
        _ => RunManifest::new(config_sha256.to_string()),
    };
    manifest.config_sha256 = config_sha256.to_string();
    manifest.stages.insert(stage.to_string(), record);
    io::write_json(&run_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}
