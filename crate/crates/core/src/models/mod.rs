//! The two learnable roles of the restoration pipeline: a noise predictor
//! for the reverse chain and an estimator mapping a degraded input to an
//! initial clean guess. Both operate in the signed diffusion space.

mod denoiser;
mod estimator;
mod gmm;
mod pca;

use ndarray::{ArrayD, ArrayViewD, Zip};
use serde::{Deserialize, Serialize};

pub use denoiser::{train_denoiser, DenoiserConfig, MlpDenoiser};
pub use estimator::{train_estimator, ConvEstimator, EstimatorArch, EstimatorConfig};
pub use gmm::{gm_optimal_denoiser, GaussianMixtureWorld, GmOptimalDenoiser, MAX_DIM};
pub use pca::Pca;

use crate::error::{Error, Result};
use crate::schedule::{NoiseSchedule, RespacedSchedule};

/// Predicts the noise component `ε` of a diffused state `x_t`.
pub trait Denoiser: Send + Sync {
    /// `t` is a base-schedule timestep in `1..=T`.
    fn predict_noise(&self, x_t: &ArrayViewD<f64>, t: usize) -> Result<ArrayD<f64>>;

    /// Hex digest of the betas the model was built for.
    fn schedule_fingerprint(&self) -> &str;
}

/// Maps a degraded observation to an estimate of the clean signal.
pub trait DiffusedEstimator: Send + Sync {
    fn predict(&self, y0: &ArrayViewD<f64>) -> Result<ArrayD<f64>>;
}

/// Returns a fixed output regardless of its input. With the clean target as
/// output this is a zero-error estimator; with `x0 - e` it has error `e`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantEstimator {
    pub output: ArrayD<f64>,
}

impl DiffusedEstimator for ConstantEstimator {
    fn predict(&self, y0: &ArrayViewD<f64>) -> Result<ArrayD<f64>> {
        if y0.shape() != self.output.shape() {
            return Err(Error::shape(self.output.shape(), y0.shape()));
        }
        Ok(self.output.clone())
    }
}

/// `f(y) = y`.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityEstimator;

impl DiffusedEstimator for IdentityEstimator {
    fn predict(&self, y0: &ArrayViewD<f64>) -> Result<ArrayD<f64>> {
        Ok(y0.to_owned())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceKind {
    /// `β̃_t = (1-ᾱ_{t-1}) / (1-ᾱ_t) · β_t`
    #[default]
    Posterior,
    /// `β_t`
    Beta,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReverseConfig {
    pub variance: VarianceKind,
    /// Clamp the `x̂0` estimate to `[-1, 1]` before forming the mean.
    pub clip_x0: bool,
}

impl Default for ReverseConfig {
    fn default() -> Self {
        ReverseConfig {
            variance: VarianceKind::Posterior,
            clip_x0: true,
        }
    }
}

impl ReverseConfig {
    /// No clipping; for worlds that do not live in `[-1, 1]`.
    pub fn unclipped() -> Self {
        ReverseConfig {
            clip_x0: false,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReverseMoments {
    pub mean: ArrayD<f64>,
    pub variance: f64,
    pub x0_hat: ArrayD<f64>,
}

/// Gaussian reverse transition from cumulative α `a_t` to `a_prev` given a
/// noise estimate.
pub fn moments_from_noise(
    x_t: &ArrayViewD<f64>,
    eps: &ArrayViewD<f64>,
    a_t: f64,
    a_prev: f64,
    cfg: &ReverseConfig,
) -> Result<ReverseMoments> {
    if x_t.shape() != eps.shape() {
        return Err(Error::shape(x_t.shape(), eps.shape()));
    }
    if eps.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("noise prediction is not finite".into()));
    }
    let beta = 1.0 - a_t / a_prev;
    let (sa, sn) = (a_t.sqrt(), (1.0 - a_t).sqrt());
    let x0_hat = Zip::from(x_t).and(eps).map_collect(|&x, &e| {
        let v = (x - sn * e) / sa;
        if cfg.clip_x0 {
            v.clamp(-1.0, 1.0)
        } else {
            v
        }
    });
    let c0 = a_prev.sqrt() * beta / (1.0 - a_t);
    let ct = (1.0 - beta).sqrt() * (1.0 - a_prev) / (1.0 - a_t);
    let mean = Zip::from(&x0_hat)
        .and(x_t)
        .map_collect(|&x0, &x| c0 * x0 + ct * x);
    let variance = match cfg.variance {
        VarianceKind::Posterior => (1.0 - a_prev) / (1.0 - a_t) * beta,
        VarianceKind::Beta => beta,
    };
    Ok(ReverseMoments {
        mean,
        variance,
        x0_hat,
    })
}

/// Moments of `p(x_{t-1} | x_t)` on the full base schedule.
pub fn reverse_moments(
    x_t: &ArrayViewD<f64>,
    t: usize,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    cfg: &ReverseConfig,
) -> Result<ReverseMoments> {
    let a_t = schedule.alpha_cum(t)?;
    let a_prev = schedule.alpha_cum(t - 1)?;
    let eps = denoiser.predict_noise(x_t, t)?;
    moments_from_noise(x_t, &eps.view(), a_t, a_prev, cfg)
}

/// Moments for chain position `i` (1-based) of a respaced schedule.
pub fn reverse_moments_respaced(
    x_t: &ArrayViewD<f64>,
    i: usize,
    denoiser: &dyn Denoiser,
    chain: &RespacedSchedule,
    cfg: &ReverseConfig,
) -> Result<ReverseMoments> {
    if i == 0 || i > chain.len() {
        return Err(Error::Parameter(format!(
            "chain position {i} outside 1..={}",
            chain.len()
        )));
    }
    let t = chain.kept_timesteps()[i - 1];
    let eps = denoiser.predict_noise(x_t, t)?;
    moments_from_noise(
        x_t,
        &eps.view(),
        chain.alpha_cum_at(i),
        chain.alpha_cum_at(i - 1),
        cfg,
    )
}

/// Rejects a denoiser built for a different schedule.
pub fn check_fingerprint(denoiser: &dyn Denoiser, schedule: &NoiseSchedule) -> Result<()> {
    let want = schedule.fingerprint();
    if denoiser.schedule_fingerprint() != want {
        return Err(Error::Config(format!(
            "denoiser schedule fingerprint {} does not match {}",
            denoiser.schedule_fingerprint(),
            want
        )));
    }
    Ok(())
}

/// Simple moving average with window `w` (shorter at the start).
pub fn smooth(history: &[f64], w: usize) -> Vec<f64> {
    let w = w.max(1);
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(history.len());
    for (i, &v) in history.iter().enumerate() {
        acc += v;
        if i >= w {
            acc -= history[i - w];
        }
        out.push(acc / (i + 1).min(w) as f64);
    }
    out
}
