//! Low-dimensional Gaussian mixture with an exact Bayes-optimal noise
//! predictor under the forward marginal.

use ndarray::{Array1, Array2, ArrayD, ArrayView1, ArrayViewD, IxDyn};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Denoiser;
use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;
use crate::seed::Rng;

pub const MAX_DIM: usize = 8;

/// `p(x) = Σ_k w_k N(x; μ_k, s² I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixtureWorld {
    means: Array2<f64>,
    scale: f64,
    weights: Vec<f64>,
}

impl GaussianMixtureWorld {
    pub fn new(means: Array2<f64>, scale: f64, weights: Vec<f64>) -> Result<Self> {
        let (k, d) = means.dim();
        if k == 0 || d == 0 || d > MAX_DIM {
            return Err(Error::Parameter(format!(
                "mixture needs 1..={MAX_DIM} dims and at least one component, got {k}x{d}"
            )));
        }
        if weights.len() != k {
            return Err(Error::Parameter("one weight per component".into()));
        }
        if weights.iter().any(|&w| w.is_nan() || w <= 0.0) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Parameter("weights must be positive and sum to 1".into()));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Parameter(format!("component scale must be positive, got {scale}")));
        }
        Ok(GaussianMixtureWorld {
            means,
            scale,
            weights,
        })
    }

    /// Two components at `±offset` along the first axis, equal weights.
    pub fn symmetric_pair(dim: usize, offset: f64, scale: f64) -> Result<Self> {
        let mut means = Array2::zeros((2, dim));
        if dim > 0 {
            means[[0, 0]] = offset;
            means[[1, 0]] = -offset;
        }
        Self::new(means, scale, vec![0.5, 0.5])
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    pub fn components(&self) -> usize {
        self.means.nrows()
    }

    pub fn means(&self) -> &Array2<f64> {
        &self.means
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn sample(&self, rng: &mut Rng) -> Array1<f64> {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut k = self.components() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        let mu = self.means.row(k);
        mu.mapv(|m| {
            let z: f64 = StandardNormal.sample(rng);
            m + self.scale * z
        })
    }

    pub fn sample_n(&self, rng: &mut Rng, n: usize) -> Array2<f64> {
        let mut out = Array2::zeros((n, self.dim()));
        for mut row in out.rows_mut() {
            row.assign(&self.sample(rng));
        }
        out
    }

    /// Density of the forward marginal `q(x_t)` at cumulative α `a`.
    pub fn marginal_density(&self, x: &ArrayView1<f64>, a: f64) -> f64 {
        let v = a * self.scale * self.scale + 1.0 - a;
        let d = self.dim() as f64;
        let norm = (2.0 * std::f64::consts::PI * v).powf(-0.5 * d);
        self.means
            .rows()
            .into_iter()
            .zip(&self.weights)
            .map(|(mu, w)| {
                let q: f64 = x
                    .iter()
                    .zip(mu.iter())
                    .map(|(xi, m)| (xi - a.sqrt() * m).powi(2))
                    .sum();
                w * norm * (-0.5 * q / v).exp()
            })
            .sum()
    }

    /// `E[x_0 | x_t]` at cumulative α `a`.
    pub fn posterior_mean(&self, x: &ArrayView1<f64>, a: f64) -> Array1<f64> {
        let sa = a.sqrt();
        let s2 = self.scale * self.scale;
        let v = a * s2 + 1.0 - a;
        let logits: Vec<f64> = self
            .means
            .rows()
            .into_iter()
            .zip(&self.weights)
            .map(|(mu, w)| {
                let q: f64 = x
                    .iter()
                    .zip(mu.iter())
                    .map(|(xi, m)| (xi - sa * m).powi(2))
                    .sum();
                w.ln() - 0.5 * q / v
            })
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let resp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = resp.iter().sum();
        let gain = sa * s2 / v;
        let mut out = Array1::zeros(self.dim());
        for (mu, r) in self.means.rows().into_iter().zip(resp) {
            let r = r / z;
            for j in 0..self.dim() {
                out[j] += r * (mu[j] + gain * (x[j] - sa * mu[j]));
            }
        }
        out
    }

    /// `E[ε | x_t]`, the minimum-MSE noise prediction.
    pub fn optimal_noise(&self, x: &ArrayView1<f64>, a: f64) -> Array1<f64> {
        let m = self.posterior_mean(x, a);
        let c = (1.0 - a).sqrt();
        ndarray::Zip::from(x)
            .and(&m)
            .map_collect(|&xi, &mi| (xi - a.sqrt() * mi) / c)
    }
}

/// Closed-form noise predictor for a [`GaussianMixtureWorld`].
#[derive(Debug, Clone)]
pub struct GmOptimalDenoiser {
    world: GaussianMixtureWorld,
    schedule: NoiseSchedule,
    fingerprint: String,
}

pub fn gm_optimal_denoiser(world: &GaussianMixtureWorld, schedule: &NoiseSchedule) -> GmOptimalDenoiser {
    GmOptimalDenoiser {
        world: world.clone(),
        schedule: schedule.clone(),
        fingerprint: schedule.fingerprint(),
    }
}

impl GmOptimalDenoiser {
    pub fn world(&self) -> &GaussianMixtureWorld {
        &self.world
    }
}

impl Denoiser for GmOptimalDenoiser {
    fn predict_noise(&self, x_t: &ArrayViewD<f64>, t: usize) -> Result<ArrayD<f64>> {
        let d = self.world.dim();
        if x_t.len() != d {
            return Err(Error::shape(&[d], x_t.shape()));
        }
        let a = self.schedule.alpha_cum(t)?;
        let flat = ArrayView1::from_shape(d, x_t.as_slice().ok_or_else(|| {
            Error::Input("non-contiguous input".into())
        })?)
        .expect("length checked");
        let eps = self.world.optimal_noise(&flat, a);
        Ok(eps.into_shape_with_order(IxDyn(x_t.shape())).expect("same length"))
    }

    fn schedule_fingerprint(&self) -> &str {
        &self.fingerprint
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use ndarray::array;

    #[test]
    fn validation() {
        assert!(GaussianMixtureWorld::new(Array2::zeros((2, 9)), 1.0, vec![0.5, 0.5]).is_err());
        assert!(GaussianMixtureWorld::new(Array2::zeros((2, 2)), 1.0, vec![0.6, 0.5]).is_err());
        assert!(GaussianMixtureWorld::new(Array2::zeros((2, 2)), 0.0, vec![0.5, 0.5]).is_err());
        assert!(GaussianMixtureWorld::new(Array2::zeros((2, 2)), 0.3, vec![0.5, 0.5]).is_ok());
    }

    #[test]
    fn single_component_limit() {
        let world = GaussianMixtureWorld::new(array![[0.7, -0.2]], 0.5, vec![1.0]).unwrap();
        let sched = NoiseSchedule::default();
        let den = gm_optimal_denoiser(&world, &sched);
        let x = ArrayD::from_shape_vec(IxDyn(&[2]), vec![0.4, 1.3]).unwrap();
        let t = sched.steps();
        let a = sched.alpha_cum(t).unwrap();
        let eps = den.predict_noise(&x.view(), t).unwrap();
        for j in 0..2 {
            let mu = world.means()[[0, j]];
            let want = (x[j] - a.sqrt() * mu) / (1.0 - a).sqrt();
            assert!((eps[j] - want).abs() < 1e-3, "{} vs {}", eps[j], want);
        }
    }

    #[test]
    fn symmetric_pair_has_no_axis_component_at_origin() {
        let world = GaussianMixtureWorld::symmetric_pair(3, 1.5, 0.4).unwrap();
        let sched = NoiseSchedule::default();
        let den = gm_optimal_denoiser(&world, &sched);
        let zero = ArrayD::zeros(IxDyn(&[3]));
        for t in [1, 50, 400, 999] {
            let eps = den.predict_noise(&zero.view(), t).unwrap();
            assert!(eps[0].abs() < 1e-15);
        }
    }

    #[test]
    fn samples_have_mixture_moments() {
        let world = GaussianMixtureWorld::symmetric_pair(2, 2.0, 0.5).unwrap();
        let x = world.sample_n(&mut seed::rng(4), 20_000);
        let mean = x.mean_axis(ndarray::Axis(0)).unwrap();
        let var0 = x.column(0).mapv(|v| v * v).mean().unwrap();
        assert!(mean[0].abs() < 0.05 && mean[1].abs() < 0.05);
        assert!((var0 - 4.25).abs() < 0.15, "{var0}");
    }

    #[test]
    fn wrong_dimension_rejected() {
        let world = GaussianMixtureWorld::symmetric_pair(2, 1.0, 0.5).unwrap();
        let den = gm_optimal_denoiser(&world, &NoiseSchedule::default());
        let x = ArrayD::zeros(IxDyn(&[3]));
        assert!(den.predict_noise(&x.view(), 10).is_err());
    }
}
