//! Anisotropic Gaussian blur kernels parameterized by axis widths and a
//! rotation angle: `Σ = U diag(l_x², l_y²) Uᵀ` with `U` the rotation by θ.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio::Image;

/// 2×2 covariance in (x, y) = (column, row) coordinates.
pub type Cov2 = [[f64; 2]; 2];

pub fn covariance(l_x: f64, l_y: f64, theta: f64) -> Cov2 {
    let (s, c) = theta.sin_cos();
    let (a, b) = (l_x * l_x, l_y * l_y);
    [
        [c * c * a + s * s * b, c * s * (a - b)],
        [c * s * (a - b), s * s * a + c * c * b],
    ]
}

/// Smallest odd integer `>= 8 * max(l_x, l_y) + 1`, capped at the largest odd
/// size that fits inside `limit`.
pub fn default_support(l_max: f64, limit: usize) -> usize {
    let want = (8.0 * l_max + 1.0).ceil() as usize;
    let want = if want.is_multiple_of(2) { want + 1 } else { want };
    let cap = if limit.is_multiple_of(2) { limit.saturating_sub(1) } else { limit };
    want.min(cap.max(1))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlurKernel {
    pub l_x: f64,
    pub l_y: f64,
    pub theta: f64,
    pub support: usize,
    /// Indexed `[row, col]`; sums to one.
    pub weights: Array2<f64>,
}

impl BlurKernel {
    /// Samples the Gaussian density on the integer grid and normalizes it.
    pub fn gaussian(l_x: f64, l_y: f64, theta: f64, support: usize) -> Result<Self> {
        if !(l_x > 0.0 && l_y > 0.0) || !l_x.is_finite() || !l_y.is_finite() {
            return Err(Error::Parameter(format!(
                "kernel widths must be positive, got ({l_x}, {l_y})"
            )));
        }
        if support.is_multiple_of(2) {
            return Err(Error::Parameter(format!(
                "kernel support must be odd, got {support}"
            )));
        }
        let cov = covariance(l_x, l_y, theta);
        let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
        let inv = [
            [cov[1][1] / det, -cov[0][1] / det],
            [-cov[1][0] / det, cov[0][0] / det],
        ];
        let c = (support / 2) as f64;
        let mut weights = Array2::from_shape_fn((support, support), |(row, col)| {
            let dx = col as f64 - c;
            let dy = row as f64 - c;
            let q = inv[0][0] * dx * dx + 2.0 * inv[0][1] * dx * dy + inv[1][1] * dy * dy;
            (-0.5 * q).exp()
        });
        let total = weights.sum();
        weights.mapv_inplace(|w| w / total);
        Ok(BlurKernel {
            l_x,
            l_y,
            theta,
            support,
            weights,
        })
    }

    /// One-hot kernel; convolution with it is the identity.
    pub fn delta() -> Self {
        BlurKernel {
            l_x: 0.0,
            l_y: 0.0,
            theta: 0.0,
            support: 1,
            weights: Array2::ones((1, 1)),
        }
    }

    /// Second moments of the discrete weights about the center.
    pub fn empirical_covariance(&self) -> Cov2 {
        let c = (self.support / 2) as f64;
        let mut m = [[0.0; 2]; 2];
        for ((row, col), &w) in self.weights.indexed_iter() {
            let dx = col as f64 - c;
            let dy = row as f64 - c;
            m[0][0] += w * dx * dx;
            m[0][1] += w * dx * dy;
            m[1][1] += w * dy * dy;
        }
        m[1][0] = m[0][1];
        m
    }

    /// Correlates every channel with the kernel using reflect (mirror, no
    /// edge repeat) padding.
    pub fn apply(&self, img: &Image) -> Result<Image> {
        let (ch, h, w) = img.dim();
        if self.support > h || self.support > w {
            return Err(Error::Input(format!(
                "image {h}x{w} smaller than kernel support {}",
                self.support
            )));
        }
        if self.support == 1 {
            let k = self.weights[[0, 0]];
            return Ok(if k == 1.0 { img.clone() } else { img.mapv(|v| v * k) });
        }
        let r = (self.support / 2) as isize;
        let mut out = Array3::zeros((ch, h, w));
        for c in 0..ch {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for ky in 0..self.support {
                        let sy = reflect(y as isize + ky as isize - r, h);
                        for kx in 0..self.support {
                            let sx = reflect(x as isize + kx as isize - r, w);
                            acc += self.weights[[ky, kx]] * img[[c, sy, sx]];
                        }
                    }
                    out[[c, y, x]] = acc;
                }
            }
        }
        Ok(out)
    }
}

/// Mirror index into `0..n` without repeating the edge sample.
pub(crate) fn reflect(mut i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let period = 2 * (n - 1);
    i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// Serializable kernel description; realized against an image size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    Delta,
    Gaussian {
        l_x: f64,
        l_y: f64,
        theta: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        support: Option<usize>,
    },
}

impl KernelSpec {
    pub fn isotropic(l: f64) -> Self {
        KernelSpec::Gaussian {
            l_x: l,
            l_y: l,
            theta: 0.0,
            support: None,
        }
    }

    /// Builds the kernel for an image whose smaller side is `min_side`.
    pub fn realize(&self, min_side: usize) -> Result<BlurKernel> {
        match *self {
            KernelSpec::Delta => Ok(BlurKernel::delta()),
            KernelSpec::Gaussian {
                l_x,
                l_y,
                theta,
                support,
            } => {
                let support =
                    support.unwrap_or_else(|| default_support(l_x.max(l_y), min_side));
                BlurKernel::gaussian(l_x, l_y, theta, support)
            }
        }
    }
}
