//! Separable bicubic resampling (Catmull-Rom, a = -0.5) with the filter
//! stretched by the scale factor on downscale so it also anti-aliases.

use ndarray::Array3;

use super::kernel::reflect;
use crate::imageio::Image;

fn cubic(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        (((x - 5.0) * x + 8.0) * x - 4.0) * A
    } else {
        0.0
    }
}

/// Per-output-sample (source index, weight) taps for one axis.
fn taps(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = n_in as f64 / n_out as f64;
    let stretch = scale.max(1.0);
    let radius = 2.0 * stretch;
    (0..n_out)
        .map(|o| {
            let center = (o as f64 + 0.5) * scale - 0.5;
            let lo = (center - radius).floor() as isize;
            let hi = (center + radius).ceil() as isize;
            let mut t: Vec<(usize, f64)> = (lo..=hi)
                .filter_map(|i| {
                    let w = cubic((i as f64 - center) / stretch);
                    (w != 0.0).then(|| (reflect(i, n_in), w))
                })
                .collect();
            let total: f64 = t.iter().map(|&(_, w)| w).sum();
            for tap in &mut t {
                tap.1 /= total;
            }
            t
        })
        .collect()
}

/// Resizes every channel to `out_h x out_w`.
pub fn resize_bicubic(img: &Image, out_h: usize, out_w: usize) -> Image {
    let (ch, h, w) = img.dim();
    if (h, w) == (out_h, out_w) {
        return img.clone();
    }
    let tx = taps(w, out_w);
    let ty = taps(h, out_h);
    let mut tmp = Array3::<f64>::zeros((ch, h, out_w));
    for c in 0..ch {
        for y in 0..h {
            for (x, t) in tx.iter().enumerate() {
                tmp[[c, y, x]] = t.iter().map(|&(s, wt)| wt * img[[c, y, s]]).sum();
            }
        }
    }
    let mut out = Array3::<f64>::zeros((ch, out_h, out_w));
    for c in 0..ch {
        for (y, t) in ty.iter().enumerate() {
            for x in 0..out_w {
                out[[c, y, x]] = t.iter().map(|&(s, wt)| wt * tmp[[c, s, x]]).sum();
            }
        }
    }
    out
}

/// Output size for downscaling a side of length `n` by factor `s`.
pub fn scaled_len(n: usize, s: f64) -> usize {
    ((n as f64 / s).round() as usize).max(1)
}
