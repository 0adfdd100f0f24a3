//! TOML experiment configuration. Every section rejects unknown keys.
//!
//! ```toml
//! seed = 0
//!
//! [schedule]
//! steps = 1000
//! beta_start = 1e-4
//! beta_end = 0.02
//! respaced = 250
//!
//! [sampler]
//! start = 400
//! seeds = [0, 1, 2]
//!
//! [paths]
//! dataset = "datasets/toy"
//! estimator = "checkpoints/estimator.dfck"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_bytes, write_atomic};
use crate::degradation::{DegradationRanges, EvaluationSets, TrainingRanges};
use crate::error::{Error, Result};
use crate::models::{DenoiserConfig, EstimatorConfig, ReverseConfig, VarianceKind};
use crate::sampler::{DEFAULT_RESPACED, DEFAULT_START};
use crate::schedule::{self, respace, NoiseSchedule, RespacedSchedule};
use crate::synth::WorldConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Number of sampling steps after respacing.
    pub respaced: usize,
    /// Expected digest of the betas; checked when present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fingerprint: Option<String>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            steps: schedule::DEFAULT_STEPS,
            beta_start: schedule::DEFAULT_BETA_START,
            beta_end: schedule::DEFAULT_BETA_END,
            respaced: DEFAULT_RESPACED,
            fingerprint: None,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        let s = NoiseSchedule::linear(self.steps, self.beta_start, self.beta_end)?;
        if let Some(f) = &self.fingerprint {
            if *f != s.fingerprint() {
                return Err(Error::Config(format!(
                    "schedule fingerprint {f} does not match configured betas ({})",
                    s.fingerprint()
                )));
            }
        }
        Ok(s)
    }

    pub fn chain(&self) -> Result<RespacedSchedule> {
        respace(&self.build()?, self.respaced)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct DegradationConfig {
    pub train: TrainingRanges,
    pub eval: EvaluationSets,
}

impl DegradationConfig {
    pub fn ranges(&self, eval: bool) -> DegradationRanges {
        if eval {
            DegradationRanges::Evaluation(self.eval.clone())
        } else {
            DegradationRanges::Training(self.train.clone())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    /// Starting timestep `N` on the full schedule.
    pub start: usize,
    pub seeds: Vec<u64>,
    pub variance: VarianceKind,
    pub clip_x0: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            start: DEFAULT_START,
            seeds: vec![0],
            variance: VarianceKind::Posterior,
            clip_x0: true,
        }
    }
}

impl SamplerConfig {
    pub fn reverse(&self) -> ReverseConfig {
        ReverseConfig {
            variance: self.variance,
            clip_x0: self.clip_x0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimator: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub denoiser: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub runs: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Root seed; every stochastic stage derives its own stream from it.
    pub seed: u64,
    pub schedule: ScheduleConfig,
    pub degradation: DegradationConfig,
    pub world: WorldConfig,
    pub estimator: EstimatorConfig,
    pub denoiser: DenoiserConfig,
    pub sampler: SamplerConfig,
    pub paths: PathsConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks every section and that the sampler start lies inside the schedule.
    pub fn validate(&self) -> Result<()> {
        let schedule = self.schedule.build().map_err(as_config)?;
        self.schedule.chain().map_err(as_config)?;
        self.degradation.ranges(false).validate().map_err(as_config)?;
        self.degradation.ranges(true).validate().map_err(as_config)?;
        if self.sampler.start == 0 || self.sampler.start >= schedule.steps() {
            return Err(Error::Config(format!(
                "sampler.start must lie in 1..{}, got {}",
                schedule.steps(),
                self.sampler.start
            )));
        }
        if self.sampler.seeds.is_empty() {
            return Err(Error::Config("sampler.seeds must not be empty".into()));
        }
        if self.estimator.channels != self.world.channels {
            return Err(Error::Config(format!(
                "estimator.channels {} differs from world.channels {}",
                self.estimator.channels, self.world.channels
            )));
        }
        Ok(())
    }

    /// Reads a config file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_bytes(path)?;
        let text = String::from_utf8(bytes).map_err(|_| Error::Config(format!("{} is not utf-8", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.paths.resolve(base);
        Ok(cfg)
    }

    /// Writes the config with the schedule fingerprint filled in.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut snapshot = self.clone();
        snapshot.schedule.fingerprint = Some(self.schedule.build()?.fingerprint());
        write_atomic(path, snapshot.to_toml()?.as_bytes())
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

impl PathsConfig {
    fn resolve(&mut self, base: &Path) {
        for p in [&mut self.dataset, &mut self.estimator, &mut self.denoiser, &mut self.runs]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    /// An existing input path, or a configuration error naming the key.
    pub fn require(value: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
        match value {
            Some(p) if p.exists() => Ok(p.clone()),
            Some(p) => Err(Error::Config(format!("paths.{key}: {} does not exist", p.display()))),
            None => Err(Error::Config(format!("paths.{key} is not set"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_all_defaults() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.schedule.chain().unwrap().steps_from(400), 100);
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = ExperimentConfig {
            seed: 99,
            ..ExperimentConfig::default()
        };
        cfg.sampler.seeds = vec![3, 4];
        cfg.sampler.variance = VarianceKind::Beta;
        cfg.paths.dataset = Some("data/x".into());
        cfg.degradation.eval.scale = vec![4.0, 8.0];
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected_everywhere() {
        for doc in [
            "sed = 1",
            "[schedule]\nstep = 10",
            "[sampler]\nstrat = 3",
            "[degradation.train]\nblur = [1.0, 2.0]",
            "[world]\nsise = 8",
            "[paths]\ndata = \"x\"",
        ] {
            assert!(matches!(ExperimentConfig::from_toml(doc), Err(Error::Config(_))), "{doc}");
        }
    }

    #[test]
    fn invalid_values_rejected() {
        for doc in [
            "[sampler]\nstart = 0",
            "[sampler]\nstart = 1000",
            "[sampler]\nseeds = []",
            "[schedule]\nbeta_end = 1.5",
            "[schedule]\nrespaced = 2000",
            "[schedule]\nfingerprint = \"00\"",
            "[estimator]\nchannels = 1",
        ] {
            assert!(matches!(ExperimentConfig::from_toml(doc), Err(Error::Config(_))), "{doc}");
        }
    }

    #[test]
    fn save_records_fingerprint_and_load_resolves_paths() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("exp.toml");
        let mut cfg = ExperimentConfig::default();
        cfg.paths.estimator = Some("ck/e.dfck".into());
        cfg.save(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains(&NoiseSchedule::default().fingerprint()));
        let back = ExperimentConfig::load(&p).unwrap();
        assert_eq!(back.paths.estimator.as_deref(), Some(dir.path().join("ck/e.dfck").as_path()));
        assert!(matches!(PathsConfig::require(&back.paths.estimator, "estimator"), Err(Error::Config(_))));
        assert!(matches!(PathsConfig::require(&None, "denoiser"), Err(Error::Config(_))));
    }
}
