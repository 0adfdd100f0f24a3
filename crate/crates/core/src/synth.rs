//! Synthetic image world for end-to-end experiments.
//!
//! An image is a fixed mean plus a weighted sum of fixed patterns whose
//! coefficients come from a Gaussian mixture, plus white pixel texture:
//!
//! ```text
//! x = clamp(m + Σ_j a_j z_j b_j + τ ε, 0, 1),   z ~ Σ_k w_k N(μ_k, s² I)
//! ```
//!
//! Patterns mix smooth cosines and hard-edged discs, so degradation destroys
//! both fine edges and texture while leaving a strong low-dimensional prior.

use ndarray::{Array1, Array2, Array3};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio::Image;
use crate::{par, seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub size: usize,
    pub channels: usize,
    pub patterns: usize,
    pub clusters: usize,
    /// Within-cluster standard deviation of the coefficients.
    pub spread: f64,
    /// Coefficient amplitude of the first pattern; later ones decay.
    pub amplitude: f64,
    /// Standard deviation of the white pixel texture.
    pub texture: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            size: 32,
            channels: 3,
            patterns: 12,
            clusters: 6,
            spread: 0.5,
            amplitude: 0.05,
            texture: 0.04,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ImageWorld {
    config: WorldConfig,
    mean: Image,
    patterns: Vec<Image>,
    amplitudes: Vec<f64>,
    centers: Array2<f64>,
}

fn unit_color(rng: &mut seed::Rng, channels: usize) -> Array1<f64> {
    let v: Array1<f64> = (0..channels).map(|_| StandardNormal.sample(rng)).collect();
    let n = v.dot(&v).sqrt().max(1e-12);
    v / n * (channels as f64).sqrt()
}

fn normalize_rms(mut p: Image) -> Image {
    let m = p.mean().unwrap_or(0.0);
    p.mapv_inplace(|v| v - m);
    let rms = p.mapv(|v| v * v).mean().unwrap_or(0.0).sqrt();
    if rms > 0.0 {
        p.mapv_inplace(|v| v / rms);
    }
    p
}

impl ImageWorld {
    pub fn new(config: WorldConfig) -> Result<Self> {
        if config.size == 0 || config.channels == 0 || config.patterns == 0 || config.clusters == 0 {
            return Err(Error::Parameter("world dimensions must be positive".into()));
        }
        if !(config.spread >= 0.0 && config.amplitude >= 0.0 && config.texture >= 0.0) {
            return Err(Error::Parameter("world scales must be nonnegative".into()));
        }
        let (c, n) = (config.channels, config.size);
        let mut rng = seed::stage_rng(config.seed, "world", 0);
        let nf = n as f64;
        let tint = unit_color(&mut rng, c);
        let mean = Array3::from_shape_fn((c, n, n), |(ch, y, x)| {
            let dy = (y as f64 + 0.5) / nf - 0.5;
            let dx = (x as f64 + 0.5) / nf - 0.5;
            0.5 + 0.05 * tint[ch] - 0.15 * (dx * dx + dy * dy)
        });
        let mut patterns = Vec::with_capacity(config.patterns);
        for j in 0..config.patterns {
            let color = unit_color(&mut rng, c);
            let p = if j % 2 == 0 {
                let fx = rng.gen_range(0..=3) as f64;
                let fy = rng.gen_range(if fx == 0.0 { 1 } else { 0 }..=3) as f64;
                let phase = rng.gen_range(0.0..std::f64::consts::TAU);
                Array3::from_shape_fn((c, n, n), |(ch, y, x)| {
                    let arg = std::f64::consts::PI * (fx * x as f64 + fy * y as f64) / nf + phase;
                    color[ch] * arg.cos()
                })
            } else {
                let cy = rng.gen_range(0.2..0.8) * nf;
                let cx = rng.gen_range(0.2..0.8) * nf;
                let r = rng.gen_range(0.12..0.3) * nf;
                Array3::from_shape_fn((c, n, n), |(ch, y, x)| {
                    let d = ((y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2)).sqrt();
                    if d < r {
                        color[ch]
                    } else {
                        0.0
                    }
                })
            };
            patterns.push(normalize_rms(p));
        }
        let amplitudes = (0..config.patterns)
            .map(|j| config.amplitude / (1.0 + j as f64 / 3.0).sqrt())
            .collect();
        let centers = Array2::from_shape_fn((config.clusters, config.patterns), |_| {
            StandardNormal.sample(&mut rng)
        });
        Ok(ImageWorld {
            config,
            mean,
            patterns,
            amplitudes,
            centers,
        })
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.config.channels, self.config.size, self.config.size]
    }

    /// Latent coefficients for one image.
    pub fn sample_latent(&self, rng: &mut seed::Rng) -> Array1<f64> {
        let k = rng.gen_range(0..self.config.clusters);
        self.centers.row(k).mapv(|m| {
            let z: f64 = StandardNormal.sample(rng);
            m + self.config.spread * z
        })
    }

    /// Noise-free image for given coefficients (unclamped).
    pub fn render(&self, z: &Array1<f64>) -> Image {
        let mut img = self.mean.clone();
        for ((p, a), zj) in self.patterns.iter().zip(&self.amplitudes).zip(z) {
            img.scaled_add(a * zj, p);
        }
        img
    }

    pub fn sample(&self, rng: &mut seed::Rng) -> Image {
        let z = self.sample_latent(rng);
        let mut img = self.render(&z);
        let tau = self.config.texture;
        img.mapv_inplace(|v| {
            let e: f64 = StandardNormal.sample(rng);
            (v + tau * e).clamp(0.0, 1.0)
        });
        img
    }

    /// `n` images, image `i` drawn from its own stream `(root, label, i)`.
    pub fn sample_set(&self, root: u64, label: &str, n: usize) -> Vec<Image> {
        par::map_range(n, |i| self.sample(&mut seed::stage_rng(root, label, i as u64)))
    }
}
