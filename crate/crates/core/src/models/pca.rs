//! Principal subspace of a data matrix. Small dimensions use a dense
//! eigendecomposition of the covariance; large ones use randomized subspace
//! iteration.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, Rng};

const DENSE_LIMIT: usize = 512;
const OVERSAMPLE: usize = 12;
const POWER_ITERS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Array1<f64>,
    /// `(k, D)`, orthonormal rows sorted by decreasing variance.
    pub basis: Array2<f64>,
    pub eigenvalues: Array1<f64>,
    /// Average per-dimension variance left outside the basis.
    pub residual_variance: f64,
}

fn to_na(a: &ArrayView2<f64>) -> DMatrix<f64> {
    let (r, c) = a.dim();
    DMatrix::from_fn(r, c, |i, j| a[[i, j]])
}

impl Pca {
    /// Fits `k` components (clamped to the dimension) to the rows of `data`.
    pub fn fit(data: &ArrayView2<f64>, k: usize, rng: &mut Rng) -> Result<Pca> {
        let (n, d) = data.dim();
        if n == 0 || d == 0 {
            return Err(Error::Input("PCA needs a nonempty data matrix".into()));
        }
        let k = k.clamp(1, d);
        let mean = data.mean_axis(Axis(0)).expect("nonempty");
        let centered = data - &mean.view().insert_axis(Axis(0));
        let total = centered.mapv(|v| v * v).sum() / n as f64;

        let (basis, eigenvalues) = if d <= DENSE_LIMIT || k + OVERSAMPLE >= d.min(n) {
            dense(&centered.view(), k)
        } else {
            randomized(&centered.view(), k, rng)
        };
        let kept: f64 = eigenvalues.sum();
        let residual_variance = if k < d {
            ((total - kept) / (d - k) as f64).max(0.0)
        } else {
            0.0
        };
        Ok(Pca {
            mean,
            basis,
            eigenvalues,
            residual_variance,
        })
    }

    pub fn components(&self) -> usize {
        self.basis.nrows()
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    /// Coefficients of `x - mean` in the basis.
    pub fn project(&self, x: &ArrayView1<f64>) -> Array1<f64> {
        self.basis.dot(&(x - &self.mean))
    }
}

fn dense(centered: &ArrayView2<f64>, k: usize) -> (Array2<f64>, Array1<f64>) {
    let n = centered.nrows() as f64;
    let cov = centered.t().dot(centered) / n;
    let eig = SymmetricEigen::new(to_na(&cov.view()));
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let d = cov.nrows();
    let basis = Array2::from_shape_fn((k, d), |(i, j)| eig.eigenvectors[(j, order[i])]);
    let values = Array1::from_shape_fn(k, |i| eig.eigenvalues[order[i]].max(0.0));
    (basis, values)
}

fn orthonormalize(m: DMatrix<f64>) -> DMatrix<f64> {
    m.qr().q()
}

fn randomized(centered: &ArrayView2<f64>, k: usize, rng: &mut Rng) -> (Array2<f64>, Array1<f64>) {
    let (n, d) = centered.dim();
    let l = k + OVERSAMPLE;
    let x = to_na(centered);
    let omega = DMatrix::from_vec(d, l, seed::normal_vec(rng, d * l));
    let mut q = orthonormalize(&x * omega);
    for _ in 0..POWER_ITERS {
        let z = orthonormalize(x.transpose() * &q);
        q = orthonormalize(&x * z);
    }
    // rows of b span the dominant right singular space
    let b = q.transpose() * &x;
    let small = &b * b.transpose();
    let eig = SymmetricEigen::new(small);
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&a, &c| eig.eigenvalues[c].total_cmp(&eig.eigenvalues[a]));
    let mut basis = Array2::zeros((k, d));
    let mut values = Array1::zeros(k);
    for (i, &o) in order.iter().take(k).enumerate() {
        let s2 = eig.eigenvalues[o].max(0.0);
        let w = eig.eigenvectors.column(o);
        let v = b.transpose() * w;
        let norm = v.norm().max(f64::MIN_POSITIVE);
        for j in 0..d {
            basis[[i, j]] = v[j] / norm;
        }
        values[i] = s2 / n as f64;
    }
    (basis, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(n: usize, d: usize, scales: &[f64], floor: f64, seed_: u64) -> (Array2<f64>, Array2<f64>) {
        let mut rng = seed::rng(seed_);
        let dirs = Array2::from_shape_vec((scales.len(), d), seed::normal_vec(&mut rng, scales.len() * d)).unwrap();
        let q = orthonormalize(to_na(&dirs.t()));
        let dirs = Array2::from_shape_fn((scales.len(), d), |(i, j)| q[(j, i)]);
        let z = seed::normal_vec(&mut rng, n * scales.len());
        let e = seed::normal_vec(&mut rng, n * d);
        let data = Array2::from_shape_fn((n, d), |(r, c)| {
            let mut v = 2.0 + floor * e[r * d + c];
            for (i, s) in scales.iter().enumerate() {
                v += s * z[r * scales.len() + i] * dirs[[i, c]];
            }
            v
        });
        (data, dirs)
    }

    #[test]
    fn dense_and_randomized_agree_on_leading_subspace() {
        let (data, dirs) = synthetic(600, 700, &[5.0, 3.0, 2.0], 0.05, 1);
        let pca = Pca::fit(&data.view(), 3, &mut seed::rng(2)).unwrap();
        // projector overlap with the planted directions
        let overlap = pca.basis.dot(&dirs.t()).mapv(|v| v * v).sum();
        assert!((overlap - 3.0).abs() < 1e-2, "{overlap}");
        let centered = &data - &pca.mean.view().insert_axis(Axis(0));
        let (exact, values) = dense(&centered.view(), 3);
        let agree = pca.basis.dot(&exact.t()).mapv(|v| v * v).sum();
        assert!((agree - 3.0).abs() < 1e-8, "{agree}");
        for i in 0..3 {
            assert!((pca.eigenvalues[i] / values[i] - 1.0).abs() < 1e-8);
        }
        assert!((pca.eigenvalues[0] / 25.0 - 1.0).abs() < 0.2);
        assert!((pca.residual_variance / 0.0025 - 1.0).abs() < 0.1, "{}", pca.residual_variance);
        assert!((pca.mean.mean().unwrap() - 2.0).abs() < 0.05);
    }

    #[test]
    fn basis_rows_orthonormal() {
        let (data, _) = synthetic(300, 20, &[3.0, 1.0], 0.1, 3);
        let pca = Pca::fit(&data.view(), 5, &mut seed::rng(0)).unwrap();
        let g = pca.basis.dot(&pca.basis.t());
        for i in 0..5 {
            for j in 0..5 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g[[i, j]] - want).abs() < 1e-9);
            }
        }
        assert!(pca.eigenvalues.windows(2).into_iter().all(|w| w[0] >= w[1]));
    }

    #[test]
    fn full_rank_has_no_residual() {
        let (data, _) = synthetic(100, 4, &[1.0], 0.3, 5);
        let pca = Pca::fit(&data.view(), 10, &mut seed::rng(0)).unwrap();
        assert_eq!(pca.components(), 4);
        assert_eq!(pca.residual_variance, 0.0);
    }

    #[test]
    fn empty_rejected() {
        let data = Array2::<f64>::zeros((0, 3));
        assert!(Pca::fit(&data.view(), 2, &mut seed::rng(0)).is_err());
    }
}
