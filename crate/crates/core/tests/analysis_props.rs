use difface::analysis::{
    fid_proxy, frechet_distance, kl_transition, psnr, spearman, ssim, SSIM_SIGMA, SSIM_WINDOW,
};
use difface::imageio::Image;
use difface::schedule::NoiseSchedule;
use difface::seed;
use ndarray::{Array1, Array2, Array3};
use proptest::prelude::*;

fn image(c: usize, h: usize, w: usize, s: u64) -> Image {
    let mut rng = seed::rng(s);
    let v = seed::normal_vec(&mut rng, c * h * w);
    Array3::from_shape_vec((c, h, w), v.into_iter().map(|z| (0.5 + 0.25 * z).clamp(0.0, 1.0)).collect()).unwrap()
}

fn gray(img: &Image) -> Vec<Vec<f64>> {
    let (c, h, w) = img.dim();
    (0..h)
        .map(|y| {
            (0..w)
                .map(|x| {
                    if c == 3 {
                        0.299 * img[[0, y, x]] + 0.587 * img[[1, y, x]] + 0.114 * img[[2, y, x]]
                    } else {
                        img[[0, y, x]]
                    }
                })
                .collect()
        })
        .collect()
}

/// Direct 2-D windowed SSIM, no separable filtering.
fn ssim_oracle(a: &Image, b: &Image) -> f64 {
    let (x, y) = (gray(a), gray(b));
    let (h, w) = (x.len(), x[0].len());
    let side = h.min(w);
    let k = SSIM_WINDOW.min(if side % 2 == 0 { side - 1 } else { side });
    let c = (k / 2) as f64;
    let g: Vec<f64> = (0..k).map(|i| (-(i as f64 - c).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let gs: f64 = g.iter().sum();
    let (c1, c2) = (1e-4, 9e-4);
    let mut total = 0.0;
    let mut count = 0.0;
    for oy in 0..=h - k {
        for ox in 0..=w - k {
            let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    let wt = g[i] * g[j] / (gs * gs);
                    let (p, q) = (x[oy + i][ox + j], y[oy + i][ox + j]);
                    mx += wt * p;
                    my += wt * q;
                    xx += wt * p * p;
                    yy += wt * q * q;
                    xy += wt * p * q;
                }
            }
            let (vx, vy, cxy) = (xx - mx * mx, yy - my * my, xy - mx * my);
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1.0;
        }
    }
    total / count
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn psnr_matches_brute_force(c in prop::sample::select(vec![1usize, 3]), h in 1usize..20, w in 1usize..20, s in any::<u64>()) {
        let a = image(c, h, w, s);
        let b = image(c, h, w, s.wrapping_add(1));
        let mut sum = 0.0;
        for (p, q) in a.iter().zip(b.iter()) {
            sum += (p - q) * (p - q);
        }
        let want = 10.0 * (1.0 / (sum / (c * h * w) as f64)).log10();
        let got = psnr(&a, &b).unwrap();
        prop_assert!((got - want).abs() <= 1e-9, "{got} vs {want}");
        prop_assert_eq!(got, psnr(&b, &a).unwrap());
        prop_assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
    }

    #[test]
    fn ssim_matches_brute_force(c in prop::sample::select(vec![1usize, 3]), h in 3usize..24, w in 3usize..24, s in any::<u64>(), mix in 0.0f64..1.0) {
        let a = image(c, h, w, s);
        let noise = image(c, h, w, s.wrapping_add(7));
        let b = &a * (1.0 - mix) + &noise * mix;
        let got = ssim(&a, &b).unwrap();
        let want = ssim_oracle(&a, &b);
        prop_assert!((got - want).abs() <= 1e-10, "{got} vs {want}");
        prop_assert!((got - ssim(&b, &a).unwrap()).abs() <= 1e-12);
        prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() <= 1e-12);
        prop_assert!(got <= 1.0 + 1e-12);
    }

    #[test]
    fn frechet_matches_diagonal_closed_form(
        mu1 in prop::collection::vec(-2.0f64..2.0, 6),
        mu2 in prop::collection::vec(-2.0f64..2.0, 6),
        v1 in prop::collection::vec(0.01f64..4.0, 6),
        v2 in prop::collection::vec(0.01f64..4.0, 6),
    ) {
        let (m1, m2) = (Array1::from(mu1.clone()), Array1::from(mu2.clone()));
        let (c1, c2) = (Array2::from_diag(&Array1::from(v1.clone())), Array2::from_diag(&Array1::from(v2.clone())));
        let want: f64 = (0..6).map(|i| (mu1[i] - mu2[i]).powi(2) + (v1[i].sqrt() - v2[i].sqrt()).powi(2)).sum();
        let got = frechet_distance(&m1, &c1, &m2, &c2).unwrap();
        prop_assert!((got - want).abs() <= 1e-9 * (1.0 + want), "{got} vs {want}");
        let back = frechet_distance(&m2, &c2, &m1, &c1).unwrap();
        prop_assert!((got - back).abs() <= 1e-9 * (1.0 + want));
    }

    #[test]
    fn frechet_is_symmetric_for_full_covariances(s in any::<u64>()) {
        let mut rng = seed::rng(s);
        let mut fit = || {
            let a = Array2::from_shape_vec((5, 5), seed::normal_vec(&mut rng, 25)).unwrap();
            let mu = Array1::from(seed::normal_vec(&mut rng, 5));
            (mu, a.dot(&a.t()) + Array2::<f64>::eye(5) * 0.1)
        };
        let (m1, c1) = fit();
        let (m2, c2) = fit();
        let ab = frechet_distance(&m1, &c1, &m2, &c2).unwrap();
        let ba = frechet_distance(&m2, &c2, &m1, &c1).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-9 * (1.0 + ab));
        prop_assert!(frechet_distance(&m1, &c1, &m1, &c1).unwrap() <= 1e-8);
    }

    #[test]
    fn kl_grows_with_error_and_shrinks_with_n(e1 in 0.0f64..100.0, de in 1e-3f64..50.0, n in 1usize..999, dn in 1usize..100) {
        let s = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
        let n2 = (n + dn).min(1000);
        prop_assume!(n2 > n);
        let e2 = e1 + de;
        prop_assert!(kl_transition(e2, n, &s).unwrap() > kl_transition(e1, n, &s).unwrap());
        prop_assert!(kl_transition(e2, n2, &s).unwrap() < kl_transition(e2, n, &s).unwrap());
        let a: f64 = (1..=n).map(|t| 1.0 - (1e-4 + (0.02 - 1e-4) * (t - 1) as f64 / 999.0)).product();
        let want = 0.5 * a / (1.0 - a) * e2;
        let got = kl_transition(e2, n, &s).unwrap();
        prop_assert!((got - want).abs() <= 1e-10 * want.max(1e-12));
    }

    #[test]
    fn spearman_is_rank_invariant(xs in prop::collection::vec(-100.0f64..100.0, 3..40), s in any::<u64>()) {
        let mut rng = seed::rng(s);
        let ys: Vec<f64> = seed::normal_vec(&mut rng, xs.len());
        let r = spearman(&xs, &ys);
        let warped: Vec<f64> = xs.iter().map(|x| (x / 30.0).exp() + x.powi(3)).collect();
        let rw = spearman(&warped, &ys);
        prop_assume!(r.is_finite());
        prop_assert!((r - rw).abs() <= 1e-12);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
        prop_assert!((spearman(&xs, &xs) - 1.0).abs() <= 1e-12);
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        prop_assert!((spearman(&xs, &neg) + 1.0).abs() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn fid_proxy_is_symmetric(s in any::<u64>()) {
        let a: Vec<Image> = (0..65).map(|i| image(3, 8, 8, s.wrapping_add(i))).collect();
        let b: Vec<Image> = (0..70).map(|i| image(3, 8, 8, s.wrapping_add(1000 + i)).mapv(|v| v * 0.8)).collect();
        let ab = fid_proxy(&a, &b).unwrap();
        let ba = fid_proxy(&b, &a).unwrap();
        prop_assert!(ab > 0.0);
        prop_assert!((ab - ba).abs() <= 1e-9 * ab);
        prop_assert!(fid_proxy(&a, &a).unwrap() <= 1e-9);
    }
}
