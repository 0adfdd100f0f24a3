//! Discrete-time noise schedules, forward diffusion and step respacing.
//!
//! Timesteps are 1-based throughout: `t = 1..=T`, with `alpha_cum(0) == 1`.

use std::io::Write;

use ndarray::{ArrayD, ArrayViewD, Zip};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Default linear schedule: 1000 steps from 1e-4 to 0.02.
pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

/// Immutable β / cumulative-α tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleRepr", into = "ScheduleRepr")]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas_cum: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleRepr {
    betas: Vec<f64>,
}

impl TryFrom<ScheduleRepr> for NoiseSchedule {
    type Error = Error;
    fn try_from(r: ScheduleRepr) -> Result<Self> {
        NoiseSchedule::from_betas(r.betas)
    }
}

impl From<NoiseSchedule> for ScheduleRepr {
    fn from(s: NoiseSchedule) -> Self {
        ScheduleRepr { betas: s.betas }
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule::linear(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END)
            .expect("default schedule is valid")
    }
}

impl NoiseSchedule {
    /// Betas linearly spaced from `beta_start` to `beta_end`, both inclusive.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Parameter("schedule needs at least one step".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Parameter(format!(
                "need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
            )));
        }
        let betas = (0..steps)
            .map(|i| {
                if i + 1 == steps {
                    beta_end
                } else {
                    let frac = i as f64 / (steps - 1) as f64;
                    beta_start + (beta_end - beta_start) * frac
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    /// Builds a schedule from explicit betas, validating every invariant.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::Parameter("empty beta sequence".into()));
        }
        let mut alphas_cum = Vec::with_capacity(betas.len());
        let mut prod = 1.0f64;
        for (i, &b) in betas.iter().enumerate() {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Parameter(format!("beta[{}] = {b} not in (0,1)", i + 1)));
            }
            let next = prod * (1.0 - b);
            if !(next < prod && next > 0.0) {
                return Err(Error::Parameter(format!(
                    "cumulative alpha stalls at t={} (beta too small to represent)",
                    i + 1
                )));
            }
            prod = next;
            alphas_cum.push(prod);
        }
        Ok(NoiseSchedule { betas, alphas_cum })
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas_cum(&self) -> &[f64] {
        &self.alphas_cum
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::Parameter(format!(
                "timestep {t} outside 1..={}",
                self.steps()
            )));
        }
        Ok(())
    }

    /// β_t for `t` in `1..=T`.
    pub fn beta(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.betas[t - 1])
    }

    /// Cumulative α_t; `alpha_cum(0) == 1`.
    pub fn alpha_cum(&self, t: usize) -> Result<f64> {
        if t == 0 {
            return Ok(1.0);
        }
        self.check_t(t)?;
        Ok(self.alphas_cum[t - 1])
    }

    /// κ_N = α_N / (1 - α_N), the weight of the squared estimator error in
    /// the transition KL.
    pub fn kappa(&self, n: usize) -> Result<f64> {
        let a = self.alpha_cum(n)?;
        if n == 0 {
            return Err(Error::Parameter("kappa is unbounded at t=0".into()));
        }
        Ok(a / (1.0 - a))
    }

    /// Hex SHA-256 of the little-endian beta bytes.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for b in &self.betas {
            h.update(b.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Writes `t,beta,alpha_cum,kappa` rows for every timestep.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,beta,alpha_cum,kappa")?;
        for t in 1..=self.steps() {
            let a = self.alphas_cum[t - 1];
            writeln!(w, "{t},{:e},{:e},{:e}", self.betas[t - 1], a, a / (1.0 - a))?;
        }
        Ok(())
    }

    /// Identity respacing over all `T` steps.
    pub fn full_chain(&self) -> RespacedSchedule {
        respace(self, self.steps()).expect("identity respacing is always valid")
    }
}

fn check_same_shape(a: &ArrayViewD<f64>, b: &ArrayViewD<f64>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(a.shape(), b.shape()));
    }
    Ok(())
}

/// Samples the marginal `q(x_N | x_0)`: `sqrt(α_N) x0 + sqrt(1-α_N) noise`.
pub fn diffuse(
    x0: &ArrayViewD<f64>,
    n: usize,
    schedule: &NoiseSchedule,
    noise: &ArrayViewD<f64>,
) -> Result<ArrayD<f64>> {
    check_same_shape(x0, noise)?;
    if n == 0 {
        return Err(Error::Parameter("diffuse needs N >= 1".into()));
    }
    let a = schedule.alpha_cum(n)?;
    Ok(affine_mix(x0, a.sqrt(), noise, (1.0 - a).sqrt()))
}

/// One Markov step `q(x_t | x_{t-1})`: `sqrt(1-β_t) x_prev + sqrt(β_t) noise`.
pub fn diffuse_step(
    x_prev: &ArrayViewD<f64>,
    t: usize,
    schedule: &NoiseSchedule,
    noise: &ArrayViewD<f64>,
) -> Result<ArrayD<f64>> {
    check_same_shape(x_prev, noise)?;
    let b = schedule.beta(t)?;
    Ok(affine_mix(x_prev, (1.0 - b).sqrt(), noise, b.sqrt()))
}

pub(crate) fn affine_mix(
    x: &ArrayViewD<f64>,
    cx: f64,
    z: &ArrayViewD<f64>,
    cz: f64,
) -> ArrayD<f64> {
    Zip::from(x).and(z).map_collect(|&a, &b| cx * a + cz * b)
}

/// A shortened sampling chain over a subset of the base timesteps.
///
/// Effective betas are recomputed so that the cumulative α at each kept step
/// equals the base schedule's value.
#[derive(Debug, Clone, PartialEq)]
pub struct RespacedSchedule {
    base: NoiseSchedule,
    kept: Vec<usize>,
    effective_betas: Vec<f64>,
}

/// Keeps `target_steps` evenly strided timesteps, always including `T`.
///
/// The i-th kept step is `i*T/target` rounded to nearest with ties going to
/// the earlier timestep.
pub fn respace(schedule: &NoiseSchedule, target_steps: usize) -> Result<RespacedSchedule> {
    let total = schedule.steps();
    if target_steps == 0 || target_steps > total {
        return Err(Error::Parameter(format!(
            "cannot respace {total} steps to {target_steps}"
        )));
    }
    let kept: Vec<usize> = (1..=target_steps)
        .map(|i| {
            let num = i * total;
            let (q, r) = (num / target_steps, num % target_steps);
            if 2 * r > target_steps {
                q + 1
            } else {
                q
            }
        })
        .collect();
    debug_assert!(kept.windows(2).all(|w| w[0] < w[1]));
    let mut prev = 1.0;
    let effective_betas = kept
        .iter()
        .map(|&k| {
            let a = schedule.alphas_cum[k - 1];
            let b = 1.0 - a / prev;
            prev = a;
            b
        })
        .collect();
    Ok(RespacedSchedule {
        base: schedule.clone(),
        kept,
        effective_betas,
    })
}

impl RespacedSchedule {
    pub fn base(&self) -> &NoiseSchedule {
        &self.base
    }

    /// Kept base timesteps, strictly increasing.
    pub fn kept_timesteps(&self) -> &[usize] {
        &self.kept
    }

    pub fn effective_betas(&self) -> &[f64] {
        &self.effective_betas
    }

    pub fn len(&self) -> usize {
        self.kept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept.is_empty()
    }

    /// Number of kept steps at or below base timestep `n`. Starting the chain
    /// at `n` runs exactly this many reverse steps.
    pub fn steps_from(&self, n: usize) -> usize {
        self.kept.partition_point(|&k| k <= n)
    }

    /// The kept timestep the chain actually enters at for a requested `n`
    /// (the largest kept step `<= n`).
    pub fn start_timestep(&self, n: usize) -> Result<usize> {
        match self.steps_from(n) {
            0 => Err(Error::Parameter(format!(
                "N={n} is below the first kept timestep {}",
                self.kept[0]
            ))),
            j => Ok(self.kept[j - 1]),
        }
    }

    /// Cumulative α at chain position `i` (1-based); position 0 gives 1.
    pub fn alpha_cum_at(&self, i: usize) -> f64 {
        if i == 0 {
            1.0
        } else {
            self.base.alphas_cum[self.kept[i - 1] - 1]
        }
    }

    /// Cumulative α rebuilt from the effective betas alone.
    pub fn recomputed_alphas_cum(&self) -> Vec<f64> {
        let mut prod = 1.0;
        self.effective_betas
            .iter()
            .map(|b| {
                prod *= 1.0 - b;
                prod
            })
            .collect()
    }
}
