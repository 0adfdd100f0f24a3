//! Minimal layers with hand-written backward passes.
//!
//! Every model keeps all of its trainable weights in one flat `Vec<f64>`;
//! layers hold offsets into it. Gradients use the same layout, which keeps
//! the optimizer and the checkpoint format trivial.

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::seed::Rng;

/// Hands out consecutive parameter ranges.
#[derive(Debug, Default)]
pub struct Layout {
    len: usize,
}

impl Layout {
    pub fn alloc(&mut self, n: usize) -> usize {
        let off = self.len;
        self.len += n;
        off
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

fn view2(p: &[f64], off: usize, rows: usize, cols: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((rows, cols), &p[off..off + rows * cols]).expect("layout")
}

fn view2_mut(p: &mut [f64], off: usize, rows: usize, cols: usize) -> ArrayViewMut2<'_, f64> {
    ArrayViewMut2::from_shape((rows, cols), &mut p[off..off + rows * cols]).expect("layout")
}

fn view1(p: &[f64], off: usize, n: usize) -> ArrayView1<'_, f64> {
    ArrayView1::from(&p[off..off + n])
}

fn view1_mut(p: &mut [f64], off: usize, n: usize) -> ArrayViewMut1<'_, f64> {
    ArrayViewMut1::from(&mut p[off..off + n])
}

fn init_normal(p: &mut [f64], off: usize, n: usize, std: f64, rng: &mut Rng) {
    let d = Normal::new(0.0, std).expect("finite std");
    for v in &mut p[off..off + n] {
        *v = d.sample(rng);
    }
}

/// Square `k x k` convolution, stride 1, zero "same" padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    w: usize,
    b: usize,
}

impl Conv2d {
    pub fn new(layout: &mut Layout, cin: usize, cout: usize, k: usize) -> Self {
        assert!(k % 2 == 1, "odd kernels only");
        let w = layout.alloc(cout * cin * k * k);
        let b = layout.alloc(cout);
        Conv2d { cin, cout, k, w, b }
    }

    fn fan_in(&self) -> usize {
        self.cin * self.k * self.k
    }

    /// He-style init scaled by `gain`; bias zero.
    pub fn init(&self, p: &mut [f64], gain: f64, rng: &mut Rng) {
        let std = gain * (2.0 / self.fan_in() as f64).sqrt();
        init_normal(p, self.w, self.cout * self.fan_in(), std, rng);
        p[self.b..self.b + self.cout].fill(0.0);
    }

    fn im2col(&self, x: &Array3<f64>) -> Array2<f64> {
        let (c, h, w) = x.dim();
        debug_assert_eq!(c, self.cin);
        let r = (self.k / 2) as isize;
        let mut cols = Array2::zeros((self.fan_in(), h * w));
        for ci in 0..c {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    let mut dst = cols.row_mut(row);
                    for y in 0..h {
                        let sy = y as isize + ky as isize - r;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for xx in 0..w {
                            let sx = xx as isize + kx as isize - r;
                            if sx >= 0 && sx < w as isize {
                                dst[y * w + xx] = x[[ci, sy as usize, sx as usize]];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &Array2<f64>, h: usize, w: usize) -> Array3<f64> {
        let r = (self.k / 2) as isize;
        let mut x = Array3::zeros((self.cin, h, w));
        for ci in 0..self.cin {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = cols.row((ci * self.k + ky) * self.k + kx);
                    for y in 0..h {
                        let sy = y as isize + ky as isize - r;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for xx in 0..w {
                            let sx = xx as isize + kx as isize - r;
                            if sx >= 0 && sx < w as isize {
                                x[[ci, sy as usize, sx as usize]] += row[y * w + xx];
                            }
                        }
                    }
                }
            }
        }
        x
    }

    /// Returns the output and the im2col buffer needed by `backward`.
    pub fn forward(&self, p: &[f64], x: &Array3<f64>) -> (Array3<f64>, Array2<f64>) {
        let (_, h, w) = x.dim();
        let cols = self.im2col(x);
        let mut out = view2(p, self.w, self.cout, self.fan_in()).dot(&cols);
        out += &view1(p, self.b, self.cout).insert_axis(Axis(1));
        let out = out.into_shape_with_order((self.cout, h, w)).expect("shape");
        (out, cols)
    }

    /// Accumulates weight gradients into `g` and returns the input gradient.
    pub fn backward(
        &self,
        p: &[f64],
        cols: &Array2<f64>,
        gout: &Array3<f64>,
        g: &mut [f64],
    ) -> Array3<f64> {
        let (_, h, w) = gout.dim();
        let gout2 = gout
            .view()
            .into_shape_with_order((self.cout, h * w))
            .expect("contiguous gradient");
        {
            let mut gw = view2_mut(g, self.w, self.cout, self.fan_in());
            ndarray::linalg::general_mat_mul(1.0, &gout2, &cols.t(), 1.0, &mut gw);
        }
        {
            let mut gb = view1_mut(g, self.b, self.cout);
            gb += &gout2.sum_axis(Axis(1));
        }
        let gcols = view2(p, self.w, self.cout, self.fan_in()).t().dot(&gout2);
        self.col2im(&gcols, h, w)
    }
}

/// Fully connected layer over a batch of row vectors: `y = x Wᵀ + b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dense {
    pub inp: usize,
    pub out: usize,
    w: usize,
    b: usize,
}

impl Dense {
    pub fn new(layout: &mut Layout, inp: usize, out: usize) -> Self {
        let w = layout.alloc(out * inp);
        let b = layout.alloc(out);
        Dense { inp, out, w, b }
    }

    pub fn init(&self, p: &mut [f64], gain: f64, rng: &mut Rng) {
        let std = gain / (self.inp as f64).sqrt();
        init_normal(p, self.w, self.out * self.inp, std, rng);
        p[self.b..self.b + self.out].fill(0.0);
    }

    pub fn forward(&self, p: &[f64], x: &ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&view2(p, self.w, self.out, self.inp).t());
        y += &view1(p, self.b, self.out);
        y
    }

    pub fn backward(
        &self,
        p: &[f64],
        x: &ArrayView2<f64>,
        gout: &Array2<f64>,
        g: &mut [f64],
    ) -> Array2<f64> {
        {
            let mut gw = view2_mut(g, self.w, self.out, self.inp);
            ndarray::linalg::general_mat_mul(1.0, &gout.t(), x, 1.0, &mut gw);
        }
        {
            let mut gb = view1_mut(g, self.b, self.out);
            gb += &gout.sum_axis(Axis(0));
        }
        gout.dot(&view2(p, self.w, self.out, self.inp))
    }
}

pub const LEAKY_SLOPE: f64 = 0.2;

pub fn leaky_relu<D: ndarray::Dimension>(x: &ndarray::Array<f64, D>) -> ndarray::Array<f64, D> {
    x.mapv(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v })
}

pub fn leaky_relu_backward<D: ndarray::Dimension>(
    pre: &ndarray::Array<f64, D>,
    gout: &ndarray::Array<f64, D>,
) -> ndarray::Array<f64, D> {
    ndarray::Zip::from(pre)
        .and(gout)
        .map_collect(|&p, &g| if p > 0.0 { g } else { LEAKY_SLOPE * g })
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn silu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v * sigmoid(v))
}

pub fn silu_backward(pre: &Array2<f64>, gout: &Array2<f64>) -> Array2<f64> {
    ndarray::Zip::from(pre).and(gout).map_collect(|&v, &g| {
        let s = sigmoid(v);
        g * (s + v * s * (1.0 - s))
    })
}

/// `(C, H, W) -> (C r², H/r, W/r)`
pub fn pixel_unshuffle(x: &Array3<f64>, r: usize) -> Array3<f64> {
    let (c, h, w) = x.dim();
    let (ho, wo) = (h / r, w / r);
    Array3::from_shape_fn((c * r * r, ho, wo), |(co, y, xx)| {
        let ci = co / (r * r);
        let i = (co / r) % r;
        let j = co % r;
        x[[ci, y * r + i, xx * r + j]]
    })
}

/// Inverse of [`pixel_unshuffle`].
pub fn pixel_shuffle(x: &Array3<f64>, r: usize) -> Array3<f64> {
    let (c, h, w) = x.dim();
    let co = c / (r * r);
    Array3::from_shape_fn((co, h * r, w * r), |(ci, y, xx)| {
        let i = y % r;
        let j = xx % r;
        x[[ci * r * r + i * r + j, y / r, xx / r]]
    })
}

/// Adam with bias correction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Cosine annealing from `lr_max` at step 0 to `lr_min` at `total`.
pub fn cosine_lr(step: usize, total: usize, lr_max: f64, lr_min: f64) -> f64 {
    if total == 0 {
        return lr_max;
    }
    let frac = (step as f64 / total as f64).min(1.0);
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * frac).cos())
}

/// Sinusoidal embedding of a timestep normalized by `total`.
pub fn time_embedding(t: usize, total: usize, dim: usize) -> Array1<f64> {
    let half = dim / 2;
    let pos = 1000.0 * t as f64 / total as f64;
    let mut e = Array1::zeros(dim);
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        e[i] = (pos * freq).sin();
        e[half + i] = (pos * freq).cos();
    }
    e
}

/// Sum of per-worker gradient buffers, folded in index order.
pub fn sum_grads(parts: Vec<Vec<f64>>, n: usize) -> Vec<f64> {
    let mut total = vec![0.0; n];
    for part in parts {
        for (t, g) in total.iter_mut().zip(part) {
            *t += g;
        }
    }
    total
}
