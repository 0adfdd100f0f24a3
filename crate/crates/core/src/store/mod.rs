//! Persistence: hashed JSON envelopes, binary weight checkpoints, paired
//! datasets, run directories and experiment configs.
//!
//! ```text
//! datasets/<name>/{hq/, lq/, manifest.json}
//! runs/<id>/{config.toml, manifest.json, outputs/, checkpoints/}
//! ```

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod envelope;
pub mod run;

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use checkpoint::{
    load_denoiser, load_estimator, save_denoiser, save_estimator, Checkpoint, CheckpointHeader, Tensor,
};
pub use config::{ExperimentConfig, PathsConfig, SamplerConfig, ScheduleConfig};
pub use dataset::{generate_dataset, Dataset, DatasetEntry, DatasetManifest, DatasetMode};
pub use envelope::{load_json, load_schedule, save_json, save_schedule};
pub use run::{ArtifactRef, RunDir, RunManifest};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes through a sibling temporary file and renames it into place, so
/// readers never observe a partial artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let name = path
        .file_name()
        .ok_or_else(|| Error::Input(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Reads a file and checks it against an expected digest.
pub fn read_verified(path: &Path, expected: &str) -> Result<Vec<u8>> {
    let bytes = read_bytes(path)?;
    let actual = sha256_hex(&bytes);
    if actual != expected {
        return Err(Error::Integrity {
            path: path.to_path_buf(),
            expected: expected.to_string(),
            actual,
        });
    }
    Ok(bytes)
}
