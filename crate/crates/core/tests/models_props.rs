use difface::models::{
    gm_optimal_denoiser, moments_from_noise, ConstantEstimator, Denoiser, GaussianMixtureWorld,
    ReverseConfig, VarianceKind,
};
use difface::sampler::{difface_restore, pluralistic_restore, reconstruct_probe, SamplerOptions};
use difface::schedule::{respace, NoiseSchedule};
use difface::seed;
use ndarray::{arr1, Array1, Array2, ArrayD, IxDyn};
use proptest::prelude::*;

fn schedule() -> NoiseSchedule {
    NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap()
}

/// `E[x0 | x_t]` for a 1-D mixture by trapezoidal quadrature over `x0`.
fn posterior_mean_quadrature(means: &[f64], weights: &[f64], s: f64, x: f64, a: f64) -> f64 {
    let (lo, hi, n) = (-8.0, 8.0, 400_000usize);
    let h = (hi - lo) / n as f64;
    let (sa, v) = (a.sqrt(), 1.0 - a);
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..=n {
        let x0 = lo + h * i as f64;
        let prior: f64 = means
            .iter()
            .zip(weights)
            .map(|(m, w)| w * (-0.5 * ((x0 - m) / s).powi(2)).exp() / s)
            .sum();
        let lik = (-0.5 * (x - sa * x0).powi(2) / v).exp();
        let wt = if i == 0 || i == n { 0.5 } else { 1.0 };
        num += wt * x0 * prior * lik;
        den += wt * prior * lik;
    }
    num / den
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn optimal_denoiser_matches_quadrature(
        means in prop::collection::vec(-2.0f64..2.0, 1..4),
        raw_w in prop::collection::vec(0.1f64..1.0, 4),
        s in 0.2f64..0.8,
        t in 1usize..=1000,
        z in -3.0f64..3.0,
        pick in 0usize..4,
    ) {
        let k = means.len();
        let total: f64 = raw_w[..k].iter().sum();
        let weights: Vec<f64> = raw_w[..k].iter().map(|w| w / total).collect();
        let world = GaussianMixtureWorld::new(
            Array2::from_shape_vec((k, 1), means.clone()).unwrap(), s, weights.clone(),
        ).unwrap();
        let sched = schedule();
        let a = sched.alpha_cum(t).unwrap();
        let x = a.sqrt() * means[pick % k] + (1.0 - a).sqrt() * z;
        let m = posterior_mean_quadrature(&means, &weights, s, x, a);
        let want_eps = (x - a.sqrt() * m) / (1.0 - a).sqrt();
        let den = gm_optimal_denoiser(&world, &sched);
        let xt = ArrayD::from_shape_vec(IxDyn(&[1]), vec![x]).unwrap();
        let eps = den.predict_noise(&xt.view(), t).unwrap();
        prop_assert!((eps[0] - want_eps).abs() <= 1e-6, "t={t}: {} vs {want_eps}", eps[0]);
        let pm = world.posterior_mean(&arr1(&[x]).view(), a);
        prop_assert!((pm[0] - m).abs() <= 1e-8);
    }

    #[test]
    fn true_noise_recovers_x0_and_posterior_variance_is_bounded(
        x0 in prop::collection::vec(-3.0f64..3.0, 1..8), t in 2usize..=1000, s in any::<u64>(),
    ) {
        let sched = schedule();
        let (a_t, a_prev) = (sched.alpha_cum(t).unwrap(), sched.alpha_cum(t - 1).unwrap());
        let d = x0.len();
        let mut rng = seed::rng(s);
        let eps = Array1::from(seed::normal_vec(&mut rng, d)).into_dyn();
        let x0 = Array1::from(x0).into_dyn();
        let xt = &x0 * a_t.sqrt() + &eps * (1.0 - a_t).sqrt();
        let m = moments_from_noise(&xt.view(), &eps.view(), a_t, a_prev, &ReverseConfig::unclipped()).unwrap();
        let beta = sched.beta(t).unwrap();
        for j in 0..d {
            prop_assert!((m.x0_hat[j] - x0[j]).abs() <= 1e-9 / a_t.sqrt());
            let c0 = a_prev.sqrt() * beta / (1.0 - a_t);
            let ct = (1.0 - beta).sqrt() * (1.0 - a_prev) / (1.0 - a_t);
            prop_assert!((m.mean[j] - (c0 * x0[j] + ct * xt[j])).abs() <= 1e-8);
        }
        prop_assert!(m.variance > 0.0 && m.variance <= beta);
        let b = moments_from_noise(
            &xt.view(), &eps.view(), a_t, a_prev,
            &ReverseConfig { variance: VarianceKind::Beta, clip_x0: false },
        ).unwrap();
        prop_assert!((b.variance - beta).abs() <= 1e-15);
    }

    #[test]
    fn clipping_bounds_the_x0_estimate(x in prop::collection::vec(-20.0f64..20.0, 1..8), t in 2usize..=1000, s in any::<u64>()) {
        let sched = schedule();
        let mut rng = seed::rng(s);
        let eps = Array1::from(seed::normal_vec(&mut rng, x.len())).into_dyn();
        let xt = Array1::from(x).into_dyn();
        let m = moments_from_noise(
            &xt.view(), &eps.view(), sched.alpha_cum(t).unwrap(), sched.alpha_cum(t - 1).unwrap(), &ReverseConfig::default(),
        ).unwrap();
        prop_assert!(m.x0_hat.iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn exact_estimate_makes_restore_equal_probe(x0 in prop::collection::vec(-1.5f64..1.5, 2), n in 1usize..999, s in any::<u64>()) {
        let world = GaussianMixtureWorld::symmetric_pair(2, 1.0, 0.3).unwrap();
        let sched = schedule();
        let den = gm_optimal_denoiser(&world, &sched);
        let chain = respace(&sched, 50).unwrap();
        prop_assume!(chain.steps_from(n) > 0);
        let x0 = Array1::from(x0).into_dyn();
        let est = ConstantEstimator { output: x0.clone() };
        let opts = SamplerOptions { reverse: ReverseConfig::unclipped(), ..Default::default() };
        let run = difface_restore(&x0.view(), n, &est, &den, &chain, s, &opts).unwrap();
        let probe = reconstruct_probe(&x0.view(), n, &den, &chain, s, &opts).unwrap();
        prop_assert_eq!(&run.output, &probe);
        prop_assert_eq!(run.steps, chain.steps_from(n));
        let again = difface_restore(&x0.view(), n, &est, &den, &chain, s, &opts).unwrap();
        prop_assert_eq!(&again.output, &run.output);
        let plural = pluralistic_restore(&x0.view(), n, &est, &den, &chain, &[s, s.wrapping_add(1)], &opts).unwrap();
        prop_assert_eq!(&plural[0], &run.output);
        prop_assert_ne!(&plural[1], &run.output);
    }
}
