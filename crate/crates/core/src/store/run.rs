//! Run directories: `runs/<id>/{config.toml, manifest.json, outputs/, checkpoints/}`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::config::ExperimentConfig;
use super::envelope::{load_json, save_json};
use super::{read_bytes, read_verified, sha256_hex, write_atomic};
use crate::error::{Error, Result};
use crate::imageio::{self, Image};

pub const RUN_FORMAT: &str = "difface.run";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";

/// A file and its digest. Paths inside the run directory are relative to it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtifactRef {
    pub path: String,
    pub sha256: String,
}

impl ArtifactRef {
    pub fn of_file(path: &Path, label: String) -> Result<Self> {
        Ok(ArtifactRef {
            path: label,
            sha256: sha256_hex(&read_bytes(path)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub id: String,
    pub command: String,
    pub created_unix: u64,
    /// The experiment config as written to `config.toml`.
    pub config: String,
    pub schedule_fingerprint: String,
    pub inputs: Vec<ArtifactRef>,
    pub checkpoints: Vec<ArtifactRef>,
    pub outputs: Vec<ArtifactRef>,
    pub requested_start: Option<usize>,
    pub start: Option<usize>,
    pub steps: Option<usize>,
    pub seeds: Vec<u64>,
    pub metrics: Value,
}

impl RunManifest {
    pub fn new(id: &str, command: &str, config: &ExperimentConfig) -> Result<Self> {
        let mut snapshot = config.clone();
        let fingerprint = config.schedule.build()?.fingerprint();
        snapshot.schedule.fingerprint = Some(fingerprint.clone());
        Ok(RunManifest {
            id: id.to_string(),
            command: command.to_string(),
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            config: snapshot.to_toml()?,
            schedule_fingerprint: fingerprint,
            inputs: Vec::new(),
            checkpoints: Vec::new(),
            outputs: Vec::new(),
            requested_start: None,
            start: None,
            steps: None,
            seeds: Vec::new(),
            metrics: Value::Null,
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    /// Creates `runs_root/id` with its subdirectories. An existing run is an
    /// error unless `force`, which clears it first.
    pub fn create(runs_root: &Path, id: &str, force: bool) -> Result<Self> {
        if id.is_empty() || id.contains(['/', '\\']) || id == "." || id == ".." {
            return Err(Error::Config(format!("invalid run id {id:?}")));
        }
        let root = runs_root.join(id);
        if root.exists() {
            if !force {
                return Err(Error::Config(format!("run {} already exists (use --force)", root.display())));
            }
            fs::remove_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        }
        for sub in ["outputs", "checkpoints"] {
            let p = root.join(sub);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        Ok(RunDir { root })
    }

    pub fn open(root: &Path) -> Result<Self> {
        if !root.join(MANIFEST_FILE).exists() {
            return Err(Error::Config(format!("{} is not a run directory", root.display())));
        }
        Ok(RunDir {
            root: root.to_path_buf(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn outputs_dir(&self) -> PathBuf {
        self.root.join("outputs")
    }

    pub fn checkpoints_dir(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn write_config(&self, config: &ExperimentConfig) -> Result<()> {
        config.save(&self.root.join(CONFIG_FILE))
    }

    /// Writes `outputs/<name>` and returns its reference.
    pub fn write_output(&self, name: &str, bytes: &[u8]) -> Result<ArtifactRef> {
        let rel = format!("outputs/{name}");
        write_atomic(&self.root.join(&rel), bytes)?;
        Ok(ArtifactRef {
            path: rel,
            sha256: sha256_hex(bytes),
        })
    }

    pub fn write_png(&self, name: &str, img: &Image) -> Result<ArtifactRef> {
        self.write_output(name, &imageio::encode_png(img)?)
    }

    /// Writes the manifest once; a run's manifest is never replaced.
    pub fn write_manifest(&self, manifest: &RunManifest) -> Result<()> {
        let p = self.root.join(MANIFEST_FILE);
        if p.exists() {
            return Err(Error::Config(format!("{} is immutable once written", p.display())));
        }
        save_json(&p, RUN_FORMAT, manifest)
    }

    pub fn manifest(&self) -> Result<RunManifest> {
        load_json(&self.root.join(MANIFEST_FILE), RUN_FORMAT)
    }

    /// Re-hashes every output stored in the run directory.
    pub fn verify(&self) -> Result<RunManifest> {
        let m = self.manifest()?;
        for a in &m.outputs {
            read_verified(&self.root.join(&a.path), &a.sha256)?;
        }
        Ok(m)
    }

    pub fn load_output_png(&self, a: &ArtifactRef) -> Result<Image> {
        imageio::decode_png(&read_verified(&self.root.join(&a.path), &a.sha256)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::create(dir.path(), "r1", false).unwrap();
        let mut m = RunManifest::new("r1", "restore", &ExperimentConfig::default()).unwrap();
        m.seeds = vec![1, 2, u64::MAX];
        m.start = Some(400);
        m.metrics = serde_json::json!({"psnr": 0.1 + 0.2, "ssim": 1.0 / 3.0});
        m.outputs.push(run.write_png("a.png", &Image::from_elem((3, 4, 4), 0.5)).unwrap());
        run.write_manifest(&m).unwrap();
        let back = RunDir::open(run.path()).unwrap().verify().unwrap();
        assert_eq!(back, m);
        assert!(matches!(run.write_manifest(&m), Err(Error::Config(_))));
        let cfg = ExperimentConfig::from_toml(&back.config).unwrap();
        assert_eq!(cfg.schedule.fingerprint.as_deref(), Some(back.schedule_fingerprint.as_str()));
    }

    #[test]
    fn existing_run_needs_force() {
        let dir = tempfile::tempdir().unwrap();
        RunDir::create(dir.path(), "x", false).unwrap();
        assert!(RunDir::create(dir.path(), "x", false).is_err());
        assert!(RunDir::create(dir.path(), "x", true).is_ok());
        assert!(RunDir::create(dir.path(), "../x", false).is_err());
    }

    #[test]
    fn tampered_output_fails_verify() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::create(dir.path(), "r", false).unwrap();
        let mut m = RunManifest::new("r", "restore", &ExperimentConfig::default()).unwrap();
        m.outputs.push(run.write_output("o.bin", b"abc").unwrap());
        run.write_manifest(&m).unwrap();
        std::fs::write(run.outputs_dir().join("o.bin"), b"abd").unwrap();
        assert!(matches!(run.verify(), Err(Error::Integrity { .. })));
    }
}
