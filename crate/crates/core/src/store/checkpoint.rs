//! Binary weight container.
//!
//! ```text
//! "DFCK" | u32 version | u64 header_len | header JSON
//! | u32 tensor_count | { u32 name_len | name | u32 ndim | u64 dims.. | f64 data.. }*
//! | sha256 of everything before it (32 bytes)
//! ```
//!
//! Integers and floats are little-endian.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{read_bytes, write_atomic};
use crate::error::{Error, Result};
use crate::models::{ConvEstimator, DenoiserConfig, EstimatorConfig, MlpDenoiser, Pca};
use crate::schedule::NoiseSchedule;

pub const MAGIC: &[u8; 4] = b"DFCK";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const DENOISER_ARCH: &str = "mlp-denoiser";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub arch: String,
    pub schedule_fingerprint: Option<String>,
    pub config: Value,
    pub loss_history: Vec<f64>,
    #[serde(default)]
    pub meta: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(name: &str, shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::shape(&shape, &[data.len()]));
        }
        Ok(Tensor {
            name: name.to_string(),
            shape,
            data,
        })
    }

    pub fn vector(name: &str, data: Vec<f64>) -> Self {
        Tensor {
            name: name.to_string(),
            shape: vec![data.len()],
            data,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub tensors: Vec<Tensor>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Corrupt {
                path: self.path.to_path_buf(),
                reason: format!("truncated at byte {}", self.pos),
            }),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| self.corrupt(format!("length {v} too large")))
    }

    fn corrupt(&self, reason: String) -> Error {
        Error::Corrupt {
            path: self.path.to_path_buf(),
            reason,
        }
    }
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Config(format!("checkpoint has no tensor {name:?}")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::with_capacity(64 + header.len() + self.tensors.iter().map(|t| t.data.len() * 8).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(Error::shape(&t.shape, &[t.data.len()]));
            }
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    /// Decodes a container after verifying its trailing digest. `path` only
    /// labels errors.
    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 32 {
            return Err(Error::Corrupt {
                path: path.to_path_buf(),
                reason: "file too short".into(),
            });
        }
        let (body, stored) = bytes.split_at(bytes.len() - 32);
        let actual = hex::encode(Sha256::digest(body));
        let expected = hex::encode(stored);
        if actual != expected {
            return Err(Error::Integrity {
                path: path.to_path_buf(),
                expected,
                actual,
            });
        }
        let mut r = Reader { bytes: body, pos: 0, path };
        if r.take(4)? != MAGIC {
            return Err(r.corrupt("bad magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(r.corrupt(format!("unsupported version {version}")));
        }
        let hlen = r.len()?;
        let header: CheckpointHeader =
            serde_json::from_slice(r.take(hlen)?).map_err(|e| r.corrupt(format!("header: {e}")))?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let nlen = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(nlen)?)
                .map_err(|_| r.corrupt("tensor name is not utf-8".into()))?
                .to_string();
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim.min(16));
            for _ in 0..ndim {
                shape.push(r.len()?);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .and_then(|n| n.checked_mul(8).map(|_| n))
                .ok_or_else(|| r.corrupt(format!("tensor {name:?} too large")))?;
            let raw = r.take(n * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push(Tensor { name, shape, data });
        }
        if r.pos != body.len() {
            return Err(r.corrupt(format!("{} trailing bytes", body.len() - r.pos)));
        }
        Ok(Checkpoint { header, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(path, &read_bytes(path)?)
    }
}

fn parse_config<T: serde::de::DeserializeOwned>(path: &Path, v: &Value) -> Result<T> {
    serde_json::from_value(v.clone()).map_err(|e| Error::Config(format!("{}: config: {e}", path.display())))
}

fn expect_arch(path: &Path, header: &CheckpointHeader, want: &str) -> Result<()> {
    if header.arch != want {
        return Err(Error::Config(format!(
            "{}: expected a {want} checkpoint, found {}",
            path.display(),
            header.arch
        )));
    }
    Ok(())
}

pub fn denoiser_checkpoint(model: &MlpDenoiser) -> Result<Checkpoint> {
    let pca = model.pca();
    Ok(Checkpoint {
        header: CheckpointHeader {
            arch: DENOISER_ARCH.into(),
            schedule_fingerprint: Some(crate::models::Denoiser::schedule_fingerprint(model).to_string()),
            config: serde_json::to_value(model.config())?,
            loss_history: model.loss_history().to_vec(),
            meta: serde_json::json!({ "sample_shape": model.sample_shape() }),
        },
        tensors: vec![
            Tensor::vector("params", model.params().to_vec()),
            Tensor::vector("pca.mean", pca.mean.to_vec()),
            Tensor::new("pca.basis", vec![pca.basis.nrows(), pca.basis.ncols()], pca.basis.iter().copied().collect())?,
            Tensor::vector("pca.eigenvalues", pca.eigenvalues.to_vec()),
            Tensor::vector("pca.residual_variance", vec![pca.residual_variance]),
        ],
    })
}

pub fn save_denoiser(path: &Path, model: &MlpDenoiser) -> Result<()> {
    denoiser_checkpoint(model)?.save(path)
}

/// Loads a denoiser, refusing one trained under a different schedule.
pub fn load_denoiser(path: &Path, schedule: &NoiseSchedule) -> Result<MlpDenoiser> {
    let ck = Checkpoint::load(path)?;
    expect_arch(path, &ck.header, DENOISER_ARCH)?;
    let want = schedule.fingerprint();
    match &ck.header.schedule_fingerprint {
        Some(f) if *f == want => {}
        other => {
            return Err(Error::Config(format!(
                "{}: schedule fingerprint {} does not match {want}",
                path.display(),
                other.as_deref().unwrap_or("<none>")
            )))
        }
    }
    let config: DenoiserConfig = parse_config(path, &ck.header.config)?;
    let sample_shape: Vec<usize> = ck
        .header
        .meta
        .get("sample_shape")
        .cloned()
        .map(serde_json::from_value)
        .transpose()?
        .ok_or_else(|| Error::Config(format!("{}: missing sample_shape", path.display())))?;
    let basis = ck.tensor("pca.basis")?;
    if basis.shape.len() != 2 {
        return Err(Error::shape(&[0, 0], &basis.shape));
    }
    let residual = ck.tensor("pca.residual_variance")?;
    if residual.data.len() != 1 {
        return Err(Error::shape(&[1], &residual.shape));
    }
    let pca = Pca {
        mean: Array1::from(ck.tensor("pca.mean")?.data.clone()),
        basis: Array2::from_shape_vec((basis.shape[0], basis.shape[1]), basis.data.clone())
            .map_err(|e| Error::Config(e.to_string()))?,
        eigenvalues: Array1::from(ck.tensor("pca.eigenvalues")?.data.clone()),
        residual_variance: residual.data[0],
    };
    if pca.mean.len() != pca.dim() || pca.eigenvalues.len() != pca.components() {
        return Err(Error::shape(&[pca.dim(), pca.components()], &[pca.mean.len(), pca.eigenvalues.len()]));
    }
    MlpDenoiser::from_parts(
        config,
        sample_shape,
        pca,
        schedule,
        ck.tensor("params")?.data.clone(),
        ck.header.loss_history,
    )
}

pub fn estimator_arch_tag(cfg: &EstimatorConfig) -> String {
    format!("conv-estimator-{}", cfg.arch.tag())
}

pub fn estimator_checkpoint(model: &ConvEstimator) -> Result<Checkpoint> {
    Ok(Checkpoint {
        header: CheckpointHeader {
            arch: estimator_arch_tag(model.config()),
            schedule_fingerprint: None,
            config: serde_json::to_value(model.config())?,
            loss_history: model.loss_history().to_vec(),
            meta: Value::Null,
        },
        tensors: vec![Tensor::vector("params", model.params().to_vec())],
    })
}

pub fn save_estimator(path: &Path, model: &ConvEstimator) -> Result<()> {
    estimator_checkpoint(model)?.save(path)
}

pub fn load_estimator(path: &Path) -> Result<ConvEstimator> {
    let ck = Checkpoint::load(path)?;
    let config: EstimatorConfig = parse_config(path, &ck.header.config)?;
    expect_arch(path, &ck.header, &estimator_arch_tag(&config))?;
    ConvEstimator::from_parts(config, ck.tensor("params")?.data.clone(), ck.header.loss_history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{train_denoiser, Denoiser};
    use crate::seed;
    use ndarray::{ArrayD, IxDyn};

    fn sample() -> Checkpoint {
        Checkpoint {
            header: CheckpointHeader {
                arch: "test".into(),
                schedule_fingerprint: Some("abc".into()),
                config: serde_json::json!({"a": 1}),
                loss_history: vec![0.5, 0.25, 1.0 / 3.0],
                meta: Value::Null,
            },
            tensors: vec![
                Tensor::new("w", vec![2, 3], vec![1.0, -2.0, 3.5, f64::MIN_POSITIVE, 0.1, -0.0]).unwrap(),
                Tensor::vector("b", vec![]),
            ],
        }
    }

    #[test]
    fn bytes_round_trip() {
        let ck = sample();
        let back = Checkpoint::from_bytes(Path::new("m"), &ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.tensors[0].data[5].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn every_flipped_byte_is_detected() {
        let bytes = sample().to_bytes().unwrap();
        for i in (0..bytes.len()).step_by(7) {
            let mut b = bytes.clone();
            b[i] ^= 0x10;
            let r = Checkpoint::from_bytes(Path::new("m"), &b);
            assert!(matches!(r, Err(Error::Integrity { .. })), "byte {i}");
        }
    }

    #[test]
    fn truncation_is_reported() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(Path::new("m"), &bytes[..10]).is_err());
        assert!(Checkpoint::from_bytes(Path::new("m"), b"DF").is_err());
    }

    #[test]
    fn estimator_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.dfck");
        let cfg = EstimatorConfig {
            features: 4,
            depth: 1,
            ..EstimatorConfig::default()
        };
        let m = ConvEstimator::new(cfg).unwrap();
        save_estimator(&p, &m).unwrap();
        let back = load_estimator(&p).unwrap();
        assert_eq!(back.params(), m.params());
        assert_eq!(back.config(), m.config());
        assert!(matches!(load_denoiser(&p, &NoiseSchedule::default()), Err(Error::Config(_))));
    }

    #[test]
    fn denoiser_file_round_trip_and_fingerprint_guard() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.dfck");
        let schedule = NoiseSchedule::linear(50, 1e-3, 0.2).unwrap();
        let data = ndarray::Array2::from_shape_vec((64, 6), seed::normal_vec(&mut seed::rng(1), 384)).unwrap();
        let cfg = DenoiserConfig {
            components: 3,
            hidden: 8,
            depth: 1,
            time_dim: 4,
            steps: 5,
            batch: 8,
            ..DenoiserConfig::default()
        };
        let m = train_denoiser(&data, &[6], &schedule, &cfg).unwrap();
        save_denoiser(&p, &m).unwrap();
        let back = load_denoiser(&p, &schedule).unwrap();
        assert_eq!(back.params(), m.params());
        assert_eq!(back.pca(), m.pca());
        assert_eq!(back.loss_history(), m.loss_history());
        let x = ArrayD::from_shape_vec(IxDyn(&[6]), vec![0.3; 6]).unwrap();
        assert_eq!(back.predict_noise(&x.view(), 17).unwrap(), m.predict_noise(&x.view(), 17).unwrap());

        let other = NoiseSchedule::linear(50, 1e-3, 0.21).unwrap();
        assert!(matches!(load_denoiser(&p, &other), Err(Error::Config(_))));
    }

    #[test]
    fn tampered_file_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.dfck");
        sample().save(&p).unwrap();
        let mut b = std::fs::read(&p).unwrap();
        let mid = b.len() / 2;
        b[mid] = b[mid].wrapping_add(1);
        std::fs::write(&p, b).unwrap();
        let err = Checkpoint::load(&p).unwrap_err();
        assert!(matches!(err, Error::Integrity { .. }));
        assert!(err.to_string().contains("sha256"));
    }
}
