//! Metrics and diagnostics: transition KL, error contraction, PSNR, SSIM,
//! a Fréchet distance on fixed random features, and starting-timestep
//! sweeps.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayD, ArrayViewD};
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio::{luma, Image};
use crate::models::{Denoiser, DiffusedEstimator};
use crate::sampler::{estimate_images, restore_images, SamplerOptions};
use crate::schedule::{NoiseSchedule, RespacedSchedule};
use crate::{par, seed};

/// `½ κ_N ‖e‖²`: KL from the estimator-centred start distribution to the
/// true marginal at `N`.
pub fn kl_transition(e_norm_sq: f64, n: usize, schedule: &NoiseSchedule) -> Result<f64> {
    if e_norm_sq.is_nan() || e_norm_sq < 0.0 {
        return Err(Error::Parameter(format!("squared norm must be >= 0, got {e_norm_sq}")));
    }
    Ok(0.5 * schedule.kappa(n)? * e_norm_sq)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub n: usize,
    pub alpha_cum: f64,
    pub num_samples: usize,
    /// Monte Carlo mean of `x_N - √α_N x0`.
    pub measured_shift: Vec<f64>,
    /// `-√α_N e`.
    pub expected_shift: Vec<f64>,
    /// Per-element standard error of the mean, `√((1-α_N)/n)`.
    pub standard_error: f64,
    /// Discrepancy along the error direction in standard-error units.
    pub projected_z: f64,
    pub max_abs_z: f64,
}

impl ContractionReport {
    pub fn agrees(&self, within_se: f64) -> bool {
        self.projected_z.abs() <= within_se
    }
}

const CHUNK: usize = 64;

/// Estimates the mean shift of `x_N` relative to `√α_N x0` by sampling the
/// start distribution `num_samples` times.
pub fn contraction_report(
    x0: &ArrayViewD<f64>,
    y0: &ArrayViewD<f64>,
    estimator: &dyn DiffusedEstimator,
    n: usize,
    schedule: &NoiseSchedule,
    num_samples: usize,
    seed_: u64,
) -> Result<ContractionReport> {
    if num_samples < 1000 {
        return Err(Error::Parameter(format!(
            "contraction needs at least 1000 samples, got {num_samples}"
        )));
    }
    let a = schedule.alpha_cum(n)?;
    if n >= schedule.steps() {
        return Err(Error::Parameter(format!("N={n} must be below T")));
    }
    let f = estimator.predict(y0)?;
    if f.shape() != x0.shape() {
        return Err(Error::shape(x0.shape(), f.shape()));
    }
    let d = f.len();
    let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
    let chunks = num_samples.div_ceil(CHUNK);
    let partial = par::map_range(chunks, |c| {
        let mut acc = vec![0.0; d];
        for i in c * CHUNK..((c + 1) * CHUNK).min(num_samples) {
            let mut rng = seed::stage_rng(seed_, "contraction", i as u64);
            for (slot, (&fv, &xv)) in acc.iter_mut().zip(f.iter().zip(x0.iter())) {
                let z: f64 = StandardNormal.sample(&mut rng);
                *slot += sa * fv + sn * z - sa * xv;
            }
        }
        acc
    });
    let mut measured = vec![0.0; d];
    for p in partial {
        for (m, v) in measured.iter_mut().zip(p) {
            *m += v;
        }
    }
    measured.iter_mut().for_each(|m| *m /= num_samples as f64);
    let expected: Vec<f64> = f.iter().zip(x0.iter()).map(|(&fv, &xv)| sa * (fv - xv)).collect();
    let se = (sn * sn / num_samples as f64).sqrt();
    let e_norm = expected.iter().map(|v| v * v).sum::<f64>().sqrt();
    let dir: Vec<f64> = if e_norm > 0.0 {
        expected.iter().map(|v| v / e_norm).collect()
    } else {
        vec![1.0 / (d as f64).sqrt(); d]
    };
    let proj: f64 = measured
        .iter()
        .zip(&expected)
        .zip(&dir)
        .map(|((m, e), u)| (m - e) * u)
        .sum();
    let max_abs_z = measured
        .iter()
        .zip(&expected)
        .map(|(m, e)| ((m - e) / se).abs())
        .fold(0.0, f64::max);
    Ok(ContractionReport {
        n,
        alpha_cum: a,
        num_samples,
        measured_shift: measured,
        expected_shift: expected,
        standard_error: se,
        projected_z: proj / se,
        max_abs_z,
    })
}

fn same_shape(a: &Image, b: &Image) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(a.shape(), b.shape()));
    }
    Ok(())
}

/// PSNR in dB with peak 1; `+∞` for identical inputs.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    same_shape(a, b)?;
    let mse = (a - b).mapv(|v| v * v).mean().unwrap_or(0.0);
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    })
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let w: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Separable "valid" correlation.
fn filter_valid(x: &Array2<f64>, w: &[f64]) -> Array2<f64> {
    let (h, wd) = x.dim();
    let k = w.len();
    let (oh, ow) = (h + 1 - k, wd + 1 - k);
    let rows = Array2::from_shape_fn((h, ow), |(y, xx)| (0..k).map(|i| w[i] * x[[y, xx + i]]).sum::<f64>());
    Array2::from_shape_fn((oh, ow), |(y, xx)| (0..k).map(|i| w[i] * rows[[y + i, xx]]).sum::<f64>())
}

/// Mean SSIM on luma with an 11-tap Gaussian window (σ = 1.5), shrunk to the
/// largest odd size that fits smaller images.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    same_shape(a, b)?;
    let (x, y) = (luma(a), luma(b));
    let side = x.nrows().min(x.ncols());
    if side == 0 {
        return Err(Error::Input("empty image".into()));
    }
    let size = SSIM_WINDOW.min(if side % 2 == 0 { side - 1 } else { side });
    let w = gaussian_window(size, SSIM_SIGMA);
    let mx = filter_valid(&x, &w);
    let my = filter_valid(&y, &w);
    let sxx = filter_valid(&(&x * &x), &w) - &mx * &mx;
    let syy = filter_valid(&(&y * &y), &w) - &my * &my;
    let sxy = filter_valid(&(&x * &y), &w) - &mx * &my;
    let map = ndarray::Zip::from(&mx)
        .and(&my)
        .and(&sxx)
        .and(&syy)
        .and(&sxy)
        .map_collect(|&mx, &my, &sxx, &syy, &sxy| {
            ((2.0 * mx * my + SSIM_C1) * (2.0 * sxy + SSIM_C2))
                / ((mx * mx + my * my + SSIM_C1) * (sxx + syy + SSIM_C2))
        });
    Ok(map.mean().unwrap_or(1.0))
}

pub const FEATURE_DIM: usize = 64;
pub const FEATURE_KERNEL: usize = 5;
pub const FEATURE_SEED: u64 = 0x5eed_f1d0;
/// Each set needs at least this many images.
pub const MIN_SET: usize = 65;

/// Fixed random convolution, ReLU and global average pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    channels: usize,
    weights: Array2<f64>,
    bias: Array1<f64>,
}

impl FeatureExtractor {
    pub fn new(channels: usize, seed_: u64) -> Self {
        let fan_in = channels * FEATURE_KERNEL * FEATURE_KERNEL;
        let mut rng = seed::stage_rng(seed_, "features", 0);
        let wd = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("finite");
        let weights = Array2::from_shape_simple_fn((FEATURE_DIM, fan_in), || wd.sample(&mut rng));
        let bd = Normal::new(0.0, 0.1).expect("finite");
        let bias = Array1::from_shape_simple_fn(FEATURE_DIM, || bd.sample(&mut rng));
        FeatureExtractor {
            channels,
            weights,
            bias,
        }
    }

    pub fn features(&self, img: &Image) -> Result<Array1<f64>> {
        let (c, h, w) = img.dim();
        let k = FEATURE_KERNEL;
        if c != self.channels || h < k || w < k {
            return Err(Error::Input(format!(
                "feature extractor expects {} channels and sides >= {k}, got {c}x{h}x{w}",
                self.channels
            )));
        }
        let (oh, ow) = (h + 1 - k, w + 1 - k);
        let mut cols = Array2::zeros((c * k * k, oh * ow));
        for ci in 0..c {
            for dy in 0..k {
                for dx in 0..k {
                    let row = (ci * k + dy) * k + dx;
                    for y in 0..oh {
                        for x in 0..ow {
                            cols[[row, y * ow + x]] = img[[ci, y + dy, x + dx]];
                        }
                    }
                }
            }
        }
        let mut act = self.weights.dot(&cols);
        act += &self.bias.view().insert_axis(ndarray::Axis(1));
        Ok(act.mapv(|v| v.max(0.0)).mean_axis(ndarray::Axis(1)).expect("positions"))
    }
}

/// Mean and unbiased covariance of the rows.
pub fn gaussian_fit(rows: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = rows.nrows();
    let mean = rows.mean_axis(ndarray::Axis(0)).expect("nonempty");
    let c = rows - &mean.view().insert_axis(ndarray::Axis(0));
    let cov = c.t().dot(&c) / (n as f64 - 1.0);
    (mean, cov)
}

fn sym_sqrt(m: &Array2<f64>) -> Array2<f64> {
    let d = m.nrows();
    let eig = SymmetricEigen::new(DMatrix::from_fn(d, d, |i, j| 0.5 * (m[[i, j]] + m[[j, i]])));
    let v = &eig.eigenvectors;
    let s: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).collect();
    Array2::from_shape_fn((d, d), |(i, j)| (0..d).map(|k| v[(i, k)] * s[k] * v[(j, k)]).sum())
}

fn trace_sqrt_product(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let ra = sym_sqrt(a);
    let m = ra.dot(b).dot(&ra);
    let d = m.nrows();
    let eig = SymmetricEigen::new(DMatrix::from_fn(d, d, |i, j| 0.5 * (m[[i, j]] + m[[j, i]])));
    eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).sum()
}

/// `‖μ1-μ2‖² + tr(Σ1 + Σ2 - 2 (Σ1^½ Σ2 Σ1^½)^½)`, with negative eigenvalues
/// clipped to zero and the cross term averaged over both orderings.
pub fn frechet_distance(
    mu1: &Array1<f64>,
    cov1: &Array2<f64>,
    mu2: &Array1<f64>,
    cov2: &Array2<f64>,
) -> Result<f64> {
    if mu1.len() != mu2.len() || cov1.dim() != cov2.dim() || cov1.nrows() != mu1.len() {
        return Err(Error::shape(&[mu1.len()], &[mu2.len()]));
    }
    let diff = mu1 - mu2;
    let cross = 0.5 * (trace_sqrt_product(cov1, cov2) + trace_sqrt_product(cov2, cov1));
    let d = diff.dot(&diff) + cov1.diag().sum() + cov2.diag().sum() - 2.0 * cross;
    Ok(d.max(0.0))
}

pub fn feature_matrix(set: &[Image], extractor: &FeatureExtractor) -> Result<Array2<f64>> {
    let rows = par::try_map_range(set.len(), |i| extractor.features(&set[i]))?;
    let mut m = Array2::zeros((set.len(), FEATURE_DIM));
    for (i, r) in rows.into_iter().enumerate() {
        m.row_mut(i).assign(&r);
    }
    Ok(m)
}

/// Fréchet distance between Gaussian fits of fixed random features.
pub fn fid_proxy(set_a: &[Image], set_b: &[Image]) -> Result<f64> {
    for (name, set) in [("first", set_a), ("second", set_b)] {
        if set.len() < MIN_SET {
            return Err(Error::Input(format!(
                "{name} set has {} images; at least {MIN_SET} needed",
                set.len()
            )));
        }
    }
    let channels = set_a[0].dim().0;
    let ex = FeatureExtractor::new(channels, FEATURE_SEED);
    let (m1, c1) = gaussian_fit(&feature_matrix(set_a, &ex)?);
    let (m2, c2) = gaussian_fit(&feature_matrix(set_b, &ex)?);
    frechet_distance(&m1, &c1, &m2, &c2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub psnr: f64,
    pub ssim: f64,
    /// Present when both sets are large enough.
    pub fid_proxy: Option<f64>,
    pub per_image: Vec<ImageScore>,
}

/// Scores `outputs` against `references` pairwise. Mean PSNR skips
/// infinite (exact) matches.
pub fn evaluate(outputs: &[Image], references: &[Image]) -> Result<MetricsReport> {
    if outputs.len() != references.len() || outputs.is_empty() {
        return Err(Error::Input(format!(
            "need equally sized nonempty sets, got {} and {}",
            outputs.len(),
            references.len()
        )));
    }
    let per_image = par::try_map_range(outputs.len(), |i| {
        Ok::<_, Error>(ImageScore {
            psnr: psnr(&outputs[i], &references[i])?,
            ssim: ssim(&outputs[i], &references[i])?,
        })
    })?;
    let finite: Vec<f64> = per_image.iter().map(|s| s.psnr).filter(|p| p.is_finite()).collect();
    let psnr_mean = if finite.is_empty() {
        f64::INFINITY
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    };
    let ssim_mean = per_image.iter().map(|s| s.ssim).sum::<f64>() / per_image.len() as f64;
    let fid = if outputs.len() >= MIN_SET {
        Some(fid_proxy(outputs, references)?)
    } else {
        None
    };
    Ok(MetricsReport {
        psnr: psnr_mean,
        ssim: ssim_mean,
        fid_proxy: fid,
        per_image,
    })
}

/// Mean RMS distance over all pairs.
pub fn mean_pairwise_rms(items: &[ArrayD<f64>]) -> f64 {
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..items.len() {
        for j in i + 1..items.len() {
            total += (&items[i] - &items[j]).mapv(|v| v * v).mean().unwrap_or(0.0).sqrt();
            pairs += 1;
        }
    }
    if pairs == 0 {
        0.0
    } else {
        total / pairs as f64
    }
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len()) as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&ranks(x), &ranks(y))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub fid_proxy: Option<f64>,
    /// Mean pairwise RMS distance between restorations under different seeds.
    pub diversity: f64,
}

/// Inputs shared by every point of a sweep.
pub struct SweepSetup<'a> {
    pub lq: &'a [Image],
    pub hq: &'a [Image],
    pub estimator: &'a dyn DiffusedEstimator,
    pub denoiser: &'a dyn Denoiser,
    pub chain: &'a RespacedSchedule,
    pub seed: u64,
    /// Restorations per image for the diversity column (>= 2 to measure it).
    pub diversity_seeds: usize,
    pub options: SamplerOptions,
}

/// Metrics of the restorations at each starting timestep in `grid`.
pub fn sweep_n(setup: &SweepSetup<'_>, grid: &[usize]) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::Parameter("empty N grid".into()));
    }
    grid.iter()
        .map(|&n| {
            let mut runs = Vec::with_capacity(setup.diversity_seeds.max(1));
            for k in 0..setup.diversity_seeds.max(1) {
                let root = seed::derive(setup.seed, "sweep", k as u64);
                runs.push(restore_images(
                    setup.lq,
                    n,
                    setup.estimator,
                    setup.denoiser,
                    setup.chain,
                    root,
                    &setup.options,
                )?);
            }
            let report = evaluate(&runs[0], setup.hq)?;
            let diversity = if runs.len() > 1 {
                let per: Vec<f64> = (0..setup.lq.len())
                    .map(|i| {
                        let outs: Vec<ArrayD<f64>> =
                            runs.iter().map(|r| r[i].clone().into_dyn()).collect();
                        mean_pairwise_rms(&outs)
                    })
                    .collect();
                per.iter().sum::<f64>() / per.len() as f64
            } else {
                0.0
            };
            Ok(SweepRow {
                n,
                psnr: report.psnr,
                ssim: report.ssim,
                fid_proxy: report.fid_proxy,
                diversity,
            })
        })
        .collect()
}

/// Metrics of the estimator alone on the same inputs.
pub fn estimator_baseline(lq: &[Image], hq: &[Image], estimator: &dyn DiffusedEstimator) -> Result<MetricsReport> {
    evaluate(&estimate_images(lq, estimator)?, hq)
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "n,psnr,ssim,fid_proxy,diversity")?;
    for r in rows {
        let fid = r.fid_proxy.map(|v| v.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{},{},{}", r.n, r.psnr, r.ssim, fid, r.diversity)?;
    }
    Ok(())
}

/// Views a `(C, H, W)` state as an image.
pub fn as_image(x: &ArrayD<f64>) -> Result<Image> {
    x.clone()
        .into_dimensionality::<ndarray::Ix3>()
        .map_err(|_| Error::shape(&[0, 0, 0], x.shape()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ConstantEstimator;
    use ndarray::{Array3, IxDyn};

    fn rand_img(seed_: u64, c: usize, h: usize, w: usize) -> Image {
        let mut rng = seed::rng(seed_);
        Array3::from_shape_simple_fn((c, h, w), || rand::Rng::gen::<f64>(&mut rng))
    }

    /// Direct per-window SSIM without separable filtering.
    fn ssim_brute(a: &Image, b: &Image) -> f64 {
        let (x, y) = (luma(a), luma(b));
        let w = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
        let k = SSIM_WINDOW;
        let (oh, ow) = (x.nrows() + 1 - k, x.ncols() + 1 - k);
        let mut total = 0.0;
        for i in 0..oh {
            for j in 0..ow {
                let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for u in 0..k {
                    for v in 0..k {
                        let g = w[u] * w[v];
                        let (p, q) = (x[[i + u, j + v]], y[[i + u, j + v]]);
                        mx += g * p;
                        my += g * q;
                        xx += g * p * p;
                        yy += g * q * q;
                        xy += g * p * q;
                    }
                }
                let (vx, vy, cxy) = (xx - mx * mx, yy - my * my, xy - mx * my);
                total += ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                    / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
            }
        }
        total / (oh * ow) as f64
    }

    #[test]
    fn kl_examples() {
        let s = NoiseSchedule::default();
        assert_eq!(kl_transition(0.0, 400, &s).unwrap(), 0.0);
        assert!(kl_transition(-1.0, 400, &s).is_err());
        let half = NoiseSchedule::from_betas(vec![0.5]).unwrap();
        assert!((kl_transition(2.0, 1, &half).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn psnr_examples() {
        let a = rand_img(1, 3, 8, 8).mapv(|v| v * 0.9);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let b = a.mapv(|v| v + 1.0 / 255.0);
        let want = 20.0 * 255f64.log10();
        assert!((psnr(&a, &b).unwrap() - want).abs() < 1e-9);
        assert!((want - 48.13).abs() < 0.01);
        assert!(psnr(&a, &rand_img(1, 3, 8, 9)).is_err());
    }

    #[test]
    fn ssim_matches_brute_force() {
        for s in 0..3 {
            let a = rand_img(s, 3, 16, 16);
            let b = rand_img(s + 10, 3, 16, 16);
            assert!((ssim(&a, &b).unwrap() - ssim_brute(&a, &b)).abs() < 1e-9);
            assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ssim_of_negation_is_negative() {
        let a = Array3::from_shape_fn((1, 16, 16), |(_, y, x)| (x as f64 * 2.5).sin() * (y as f64 * 2.1).cos() * 0.3);
        let a = &a - a.mean().unwrap();
        assert!(ssim(&a, &a.mapv(|v| -v)).unwrap() < 0.0);
    }

    #[test]
    fn spearman_and_ranks() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 100.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn frechet_zero_for_identical_and_shift_for_translation() {
        let set: Vec<Image> = (0..70).map(|i| rand_img(i, 3, 8, 8)).collect();
        assert!(fid_proxy(&set, &set).unwrap() < 1e-9);
        let mut rng = seed::rng(4);
        let rows = Array2::from_shape_simple_fn((200, 5), || StandardNormal.sample(&mut rng));
        let (m, c) = gaussian_fit(&rows);
        let shift = Array1::from(vec![1.0, -2.0, 0.5, 0.0, 3.0]);
        let d = frechet_distance(&m, &c, &(&m + &shift), &c).unwrap();
        assert!((d - shift.dot(&shift)).abs() < 1e-8);
        assert!(fid_proxy(&set[..10], &set).is_err());
    }

    #[test]
    fn contraction_with_zero_error_has_no_shift() {
        let s = NoiseSchedule::default();
        let x0 = ArrayD::from_shape_vec(IxDyn(&[4]), vec![0.1, 0.2, -0.3, 0.4]).unwrap();
        let est = ConstantEstimator { output: x0.clone() };
        let r = contraction_report(&x0.view(), &x0.view(), &est, 400, &s, 2000, 1).unwrap();
        assert!(r.expected_shift.iter().all(|&v| v == 0.0));
        assert!(r.measured_shift.iter().all(|v| v.abs() < 5.0 * r.standard_error));
        assert!(contraction_report(&x0.view(), &x0.view(), &est, 400, &s, 10, 1).is_err());
    }

    #[test]
    fn pairwise_rms() {
        let a = ArrayD::zeros(IxDyn(&[4]));
        let b = ArrayD::from_elem(IxDyn(&[4]), 2.0);
        assert_eq!(mean_pairwise_rms(&[a.clone(), b.clone()]), 2.0);
        assert_eq!(mean_pairwise_rms(&[a]), 0.0);
    }
}
