//! Posterior sampling from a degraded observation: diffuse the estimator's
//! output to timestep `N`, then run the reverse chain back to `t = 0`.

use ndarray::{ArrayD, ArrayViewD, IxDyn, Zip};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio::{from_signed, to_signed, Image};
use crate::models::{
    check_fingerprint, reverse_moments_respaced, Denoiser, DiffusedEstimator, ReverseConfig,
};
use crate::schedule::{affine_mix, diffuse, NoiseSchedule, RespacedSchedule};
use crate::{par, seed};

/// Starting timestep on the base schedule.
pub const DEFAULT_START: usize = 400;
/// Respaced chain length.
pub const DEFAULT_RESPACED: usize = 250;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerOptions {
    pub reverse: ReverseConfig,
    /// Keep every intermediate state.
    pub record_trajectory: bool,
}

/// One restoration: what went in, which chain ran, and what came out.
#[derive(Debug, Clone, PartialEq)]
pub struct RestorationRun {
    pub requested_start: usize,
    /// The kept timestep the chain entered at.
    pub start: usize,
    pub steps: usize,
    pub seed: u64,
    pub schedule_fingerprint: String,
    pub x_n: ArrayD<f64>,
    pub output: ArrayD<f64>,
    /// States from `x_N` down to the output, if requested.
    pub trajectory: Option<Vec<ArrayD<f64>>>,
}

fn normal_like(shape: &[usize], rng: &mut seed::Rng) -> ArrayD<f64> {
    ArrayD::from_shape_simple_fn(IxDyn(shape), || StandardNormal.sample(rng))
}

fn check_start(n: usize, schedule: &NoiseSchedule) -> Result<()> {
    if n == 0 || n >= schedule.steps() {
        return Err(Error::Parameter(format!(
            "starting timestep must lie in 1..{}, got {n}",
            schedule.steps()
        )));
    }
    Ok(())
}

/// `x_N = √α_N f(y0) + √(1-α_N) noise`.
pub fn sample_xn(
    y0: &ArrayViewD<f64>,
    n: usize,
    estimator: &dyn DiffusedEstimator,
    schedule: &NoiseSchedule,
    noise: &ArrayViewD<f64>,
) -> Result<ArrayD<f64>> {
    check_start(n, schedule)?;
    let f = estimator.predict(y0)?;
    if f.shape() != noise.shape() {
        return Err(Error::shape(f.shape(), noise.shape()));
    }
    let a = schedule.alpha_cum(n)?;
    Ok(affine_mix(&f.view(), a.sqrt(), noise, (1.0 - a).sqrt()))
}

/// Ancestral sampling from `x_n` down to `x_0` over the kept steps `<= n`.
/// Final state and, if recorded, the trajectory.
pub type ChainOutput = (ArrayD<f64>, Option<Vec<ArrayD<f64>>>);

/// The final step returns the mean without added noise.
pub fn reverse_chain(
    x_n: &ArrayViewD<f64>,
    n: usize,
    denoiser: &dyn Denoiser,
    chain: &RespacedSchedule,
    seed_: u64,
    opts: &SamplerOptions,
) -> Result<ChainOutput> {
    if x_n.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { step: n });
    }
    let steps = chain.steps_from(n);
    let mut rng = seed::rng(seed_);
    let mut x = x_n.to_owned();
    let mut trace = opts.record_trajectory.then(|| vec![x.clone()]);
    for i in (1..=steps).rev() {
        let t = chain.kept_timesteps()[i - 1];
        let m = reverse_moments_respaced(&x.view(), i, denoiser, chain, &opts.reverse)
            .map_err(|e| match e {
                Error::Numeric(_) => Error::NonFinite { step: t },
                other => other,
            })?;
        x = if i > 1 && m.variance > 0.0 {
            let sd = m.variance.sqrt();
            let z = normal_like(x.shape(), &mut rng);
            Zip::from(&m.mean).and(&z).map_collect(|&mu, &e| mu + sd * e)
        } else {
            m.mean
        };
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: t });
        }
        if let Some(tr) = trace.as_mut() {
            tr.push(x.clone());
        }
    }
    Ok((x, trace))
}

/// Full restoration of one observation. The noise for `x_N` and for the
/// chain both derive from `seed_`.
pub fn difface_restore(
    y0: &ArrayViewD<f64>,
    n: usize,
    estimator: &dyn DiffusedEstimator,
    denoiser: &dyn Denoiser,
    chain: &RespacedSchedule,
    seed_: u64,
    opts: &SamplerOptions,
) -> Result<RestorationRun> {
    let schedule = chain.base();
    check_fingerprint(denoiser, schedule)?;
    check_start(n, schedule)?;
    let start = chain.start_timestep(n)?;
    let f = estimator.predict(y0)?;
    let noise = normal_like(f.shape(), &mut seed::stage_rng(seed_, "start-noise", 0));
    let x_n = sample_xn(y0, start, &ConstOutput(&f), schedule, &noise.view())?;
    let chain_seed = seed::derive(seed_, "chain", 0);
    let (output, trajectory) = reverse_chain(&x_n.view(), start, denoiser, chain, chain_seed, opts)?;
    Ok(RestorationRun {
        requested_start: n,
        start,
        steps: chain.steps_from(start),
        seed: seed_,
        schedule_fingerprint: schedule.fingerprint(),
        x_n,
        output,
        trajectory,
    })
}

/// Reuses an already computed estimate.
struct ConstOutput<'a>(&'a ArrayD<f64>);

impl DiffusedEstimator for ConstOutput<'_> {
    fn predict(&self, _: &ArrayViewD<f64>) -> Result<ArrayD<f64>> {
        Ok(self.0.clone())
    }
}

/// Diffuses a clean signal to `n` and reconstructs it. `n = 0` is a no-op.
pub fn reconstruct_probe(
    x0: &ArrayViewD<f64>,
    n: usize,
    denoiser: &dyn Denoiser,
    chain: &RespacedSchedule,
    seed_: u64,
    opts: &SamplerOptions,
) -> Result<ArrayD<f64>> {
    if n == 0 {
        return Ok(x0.to_owned());
    }
    let schedule = chain.base();
    check_fingerprint(denoiser, schedule)?;
    let start = chain.start_timestep(n)?;
    let noise = normal_like(x0.shape(), &mut seed::stage_rng(seed_, "start-noise", 0));
    let x_n = diffuse(x0, start, schedule, &noise.view())?;
    let chain_seed = seed::derive(seed_, "chain", 0);
    Ok(reverse_chain(&x_n.view(), start, denoiser, chain, chain_seed, opts)?.0)
}

/// One restoration per seed; seeds must be distinct.
pub fn pluralistic_restore(
    y0: &ArrayViewD<f64>,
    n: usize,
    estimator: &dyn DiffusedEstimator,
    denoiser: &dyn Denoiser,
    chain: &RespacedSchedule,
    seeds: &[u64],
    opts: &SamplerOptions,
) -> Result<Vec<ArrayD<f64>>> {
    let mut sorted = seeds.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Parameter("pluralistic seeds must be distinct".into()));
    }
    par::try_map_range(seeds.len(), |i| {
        difface_restore(y0, n, estimator, denoiser, chain, seeds[i], opts).map(|r| r.output)
    })
}

/// Restores a batch of canonical-range images; image `i` uses the sub-seed
/// `(root, "restore", i)`. Outputs are clamped to `[0, 1]`.
pub fn restore_images(
    lq: &[Image],
    n: usize,
    estimator: &dyn DiffusedEstimator,
    denoiser: &dyn Denoiser,
    chain: &RespacedSchedule,
    root: u64,
    opts: &SamplerOptions,
) -> Result<Vec<Image>> {
    par::try_map_range(lq.len(), |i| {
        let y = to_signed(&lq[i]).into_dyn();
        let s = seed::derive(root, "restore", i as u64);
        let run = difface_restore(&y.view(), n, estimator, denoiser, chain, s, opts)?;
        Ok(signed_to_image(run.output))
    })
}

/// Estimator-only outputs for a batch, in canonical range.
pub fn estimate_images(lq: &[Image], estimator: &dyn DiffusedEstimator) -> Result<Vec<Image>> {
    par::try_map_range(lq.len(), |i| {
        let y = to_signed(&lq[i]).into_dyn();
        Ok(signed_to_image(estimator.predict(&y.view())?))
    })
}

fn signed_to_image(x: ArrayD<f64>) -> Image {
    let img = x
        .into_dimensionality::<ndarray::Ix3>()
        .expect("image-shaped state");
    from_signed(&img)
}
