//! Paired HQ/LQ datasets drawn from the synthetic world.
//!
//! Image `i` uses the streams `(seed, "hq", i)` and `(seed, "degradation", i)`.
//! HQ images are quantized to 8 bits before degradation, so the stored HQ
//! PNG and the manifest spec alone reproduce every LQ file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::envelope::{load_json, save_json};
use super::{read_verified, sha256_hex, write_atomic};
use crate::degradation::{degrade, sample_spec, DegradationRanges, DegradationSpec};
use crate::error::{Error, Result};
use crate::imageio::{self, Image};
use crate::synth::{ImageWorld, WorldConfig};
use crate::{par, seed};

pub const DATASET_FORMAT: &str = "difface.dataset";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetMode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub index: usize,
    /// Paths relative to the dataset directory.
    pub hq: String,
    pub lq: String,
    pub hq_sha256: String,
    pub lq_sha256: String,
    pub spec: DegradationSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub name: String,
    pub mode: DatasetMode,
    pub seed: u64,
    pub world: WorldConfig,
    pub ranges: DegradationRanges,
    pub entries: Vec<DatasetEntry>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
}

fn quantized(img: &Image) -> Result<Image> {
    let (c, h, w) = img.dim();
    imageio::from_u8(&imageio::to_u8(img), c, h, w)
}

/// Writes `count` pairs under `dir`. An existing manifest is an error unless
/// `force`, in which case `hq/`, `lq/` and the manifest are replaced.
pub fn generate_dataset(
    dir: &Path,
    world: &WorldConfig,
    ranges: &DegradationRanges,
    mode: DatasetMode,
    count: usize,
    seed_: u64,
    force: bool,
) -> Result<DatasetManifest> {
    ranges.validate()?;
    let manifest_path = dir.join(MANIFEST_FILE);
    if manifest_path.exists() {
        if !force {
            return Err(Error::Config(format!(
                "dataset {} already exists (use force to overwrite)",
                dir.display()
            )));
        }
        for sub in ["hq", "lq"] {
            let p = dir.join(sub);
            if p.exists() {
                fs::remove_dir_all(&p).map_err(|e| Error::io(&p, e))?;
            }
        }
        fs::remove_file(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    }
    let w = ImageWorld::new(world.clone())?;
    let items = par::try_map_range(count, |i| -> Result<(Vec<u8>, Vec<u8>, DegradationSpec)> {
        let hq = quantized(&w.sample(&mut seed::stage_rng(seed_, "hq", i as u64)))?;
        let spec = sample_spec(ranges, &mut seed::stage_rng(seed_, "degradation", i as u64));
        let lq = degrade(&hq, &spec)?;
        Ok((imageio::encode_png(&hq)?, imageio::encode_png(&lq)?, spec))
    })?;
    for sub in ["hq", "lq"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut entries = Vec::with_capacity(count);
    for (index, (hq_png, lq_png, spec)) in items.into_iter().enumerate() {
        let file = format!("{index:06}.png");
        let (hq, lq) = (format!("hq/{file}"), format!("lq/{file}"));
        write_atomic(&dir.join(&hq), &hq_png)?;
        write_atomic(&dir.join(&lq), &lq_png)?;
        entries.push(DatasetEntry {
            index,
            hq,
            lq,
            hq_sha256: sha256_hex(&hq_png),
            lq_sha256: sha256_hex(&lq_png),
            spec,
        });
    }
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let manifest = DatasetManifest {
        name,
        mode,
        seed: seed_,
        world: world.clone(),
        ranges: ranges.clone(),
        entries,
    };
    save_json(&manifest_path, DATASET_FORMAT, &manifest)?;
    Ok(manifest)
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        if !manifest_path.exists() {
            return Err(Error::Config(format!("no dataset manifest at {}", manifest_path.display())));
        }
        Ok(Dataset {
            root: dir.to_path_buf(),
            manifest: load_json(&manifest_path, DATASET_FORMAT)?,
        })
    }

    pub fn len(&self) -> usize {
        self.manifest.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.entries.is_empty()
    }

    fn load(&self, rel: &str, digest: &str) -> Result<Image> {
        let bytes = read_verified(&self.root.join(rel), digest)?;
        imageio::decode_png(&bytes)
    }

    pub fn hq(&self, i: usize) -> Result<Image> {
        let e = self.entry(i)?;
        self.load(&e.hq, &e.hq_sha256)
    }

    pub fn lq(&self, i: usize) -> Result<Image> {
        let e = self.entry(i)?;
        self.load(&e.lq, &e.lq_sha256)
    }

    fn entry(&self, i: usize) -> Result<&DatasetEntry> {
        self.manifest
            .entries
            .get(i)
            .ok_or_else(|| Error::Input(format!("dataset has {} entries, asked for {i}", self.len())))
    }

    /// All `(hq, lq)` pairs, each file checked against its digest.
    pub fn pairs(&self) -> Result<Vec<(Image, Image)>> {
        par::try_map_range(self.len(), |i| Ok((self.hq(i)?, self.lq(i)?)))
    }

    /// Re-degrades every stored HQ image with its recorded spec and returns
    /// the indices whose encoded LQ bytes differ from the stored file.
    pub fn regenerate_mismatches(&self) -> Result<Vec<usize>> {
        let same = par::try_map_range(self.len(), |i| -> Result<bool> {
            let e = &self.manifest.entries[i];
            let lq = degrade(&self.hq(i)?, &e.spec)?;
            let stored = read_verified(&self.root.join(&e.lq), &e.lq_sha256)?;
            Ok(imageio::encode_png(&lq)? == stored)
        })?;
        Ok(same.iter().enumerate().filter(|(_, &s)| !s).map(|(i, _)| i).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_world() -> WorldConfig {
        WorldConfig {
            size: 16,
            ..WorldConfig::default()
        }
    }

    #[test]
    fn generate_open_regenerate() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().join("toy");
        let m = generate_dataset(&d, &small_world(), &DegradationRanges::evaluation(), DatasetMode::Eval, 5, 3, false)
            .unwrap();
        assert_eq!(m.entries.len(), 5);
        assert_eq!(m.name, "toy");
        let ds = Dataset::open(&d).unwrap();
        assert_eq!(ds.manifest, m);
        assert!(ds.regenerate_mismatches().unwrap().is_empty());
        let pairs = ds.pairs().unwrap();
        assert_eq!(pairs[0].0.dim(), (3, 16, 16));
    }

    #[test]
    fn rerun_is_identical_and_refuses_without_force() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().join("a");
        let r = DegradationRanges::training();
        let m1 = generate_dataset(&d, &small_world(), &r, DatasetMode::Train, 3, 1, false).unwrap();
        assert!(matches!(
            generate_dataset(&d, &small_world(), &r, DatasetMode::Train, 3, 1, false),
            Err(Error::Config(_))
        ));
        let m2 = generate_dataset(&d, &small_world(), &r, DatasetMode::Train, 3, 1, true).unwrap();
        assert_eq!(m1, m2);
    }

    #[test]
    fn empty_dataset_has_valid_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().join("e");
        generate_dataset(&d, &small_world(), &DegradationRanges::training(), DatasetMode::Train, 0, 1, false).unwrap();
        let ds = Dataset::open(&d).unwrap();
        assert!(ds.is_empty());
        assert!(ds.pairs().unwrap().is_empty());
    }

    #[test]
    fn edited_lq_is_caught() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().join("t");
        let m = generate_dataset(&d, &small_world(), &DegradationRanges::evaluation(), DatasetMode::Eval, 2, 4, false)
            .unwrap();
        let p = d.join(&m.entries[1].lq);
        let img = imageio::load_png(&p).unwrap().mapv(|v| 1.0 - v);
        imageio::save_png(&p, &img).unwrap();
        let ds = Dataset::open(&d).unwrap();
        assert!(matches!(ds.lq(1), Err(Error::Integrity { .. })));
        assert!(ds.lq(0).is_ok());
    }
}
