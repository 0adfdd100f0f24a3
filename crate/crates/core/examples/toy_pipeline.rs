//! End-to-end run on the synthetic world: train both models, restore an
//! evaluation set, and compare against the estimator alone.
//!
//! Sizes come from the environment: `TRAIN`, `TEST`, `EST_STEPS`, `DEN_STEPS`,
//! `EST_LR`, `START`.

use std::time::Instant;

use difface::analysis::{estimator_baseline, evaluate};
use difface::degradation::{degrade, sample_spec, DegradationRanges};
use difface::imageio::{from_u8, to_u8, Image};
use difface::models::{train_denoiser, train_estimator, DenoiserConfig, EstimatorConfig};
use difface::sampler::{restore_images, SamplerOptions};
use difface::schedule::{respace, NoiseSchedule};
use difface::synth::{ImageWorld, WorldConfig};
use difface::{par, seed};
use ndarray::Array2;

fn env<T: std::str::FromStr>(key: &str, default: T) -> T {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn pairs(world: &ImageWorld, root: u64, n: usize) -> Vec<(Image, Image)> {
    let ranges = DegradationRanges::evaluation();
    par::map_range(n, |i| {
        let x = world.sample(&mut seed::stage_rng(root, "hq", i as u64));
        let x = from_u8(&to_u8(&x), 3, x.dim().1, x.dim().2).unwrap();
        let spec = sample_spec(&ranges, &mut seed::stage_rng(root, "degradation", i as u64));
        let y = degrade(&x, &spec).unwrap();
        (x, y)
    })
}

fn main() -> difface::Result<()> {
    let (n_train, n_test) = (env("TRAIN", 2000usize), env("TEST", 400usize));
    let world = ImageWorld::new(WorldConfig::default())?;
    let t0 = Instant::now();
    let train = pairs(&world, 1, n_train);
    let test = pairs(&world, 2, n_test);
    eprintln!("data {:?}", t0.elapsed());

    let est_cfg = EstimatorConfig {
        steps: env("EST_STEPS", 2000usize),
        lr_max: env("EST_LR", 1e-4f64),
        ..EstimatorConfig::default()
    };
    let t = Instant::now();
    let est = train_estimator(&train, &est_cfg)?;
    let h = est.loss_history();
    eprintln!("estimator {:?} loss {:.5} -> {:.5}", t.elapsed(), h[..20].iter().sum::<f64>() / 20.0, h[h.len() - 50..].iter().sum::<f64>() / 50.0);

    let schedule = NoiseSchedule::default();
    let clean = env("CLEAN", n_train);
    let imgs = world.sample_set(3, "clean", clean);
    let d = imgs[0].len();
    let mut data = Array2::zeros((clean, d));
    for (i, im) in imgs.iter().enumerate() {
        let q = from_u8(&to_u8(im), 3, 32, 32)?;
        data.row_mut(i).assign(&q.mapv(|v| 2.0 * v - 1.0).into_shape_with_order(d).unwrap());
    }
    let den_cfg = DenoiserConfig {
        steps: env("DEN_STEPS", 4000usize),
        ..DenoiserConfig::default()
    };
    let t = Instant::now();
    let den = train_denoiser(&data, &[3, 32, 32], &schedule, &den_cfg)?;
    let h = den.loss_history();
    eprintln!("denoiser {:?} loss {:.5} -> {:.5}", t.elapsed(), h[..20].iter().sum::<f64>() / 20.0, h[h.len() - 50..].iter().sum::<f64>() / 50.0);

    let chain = respace(&schedule, 250)?;
    let lq: Vec<Image> = test.iter().map(|p| p.1.clone()).collect();
    let hq: Vec<Image> = test.iter().map(|p| p.0.clone()).collect();
    let base = estimator_baseline(&lq, &hq, &est)?;
    eprintln!("estimator-only psnr {:.3} ssim {:.4} fid {:?}", base.psnr, base.ssim, base.fid_proxy);
    let lqm = evaluate(&lq, &hq)?;
    eprintln!("lq psnr {:.3} fid {:?}", lqm.psnr, lqm.fid_proxy);
    for n in env("STARTS", "100,200,300,400".to_string()).split(',').map(|s| s.parse::<usize>().unwrap()) {
        let t = Instant::now();
        let out = restore_images(&lq, n, &est, &den, &chain, 11, &SamplerOptions::default())?;
        let m = evaluate(&out, &hq)?;
        eprintln!("N={n} psnr {:.3} ssim {:.4} fid {:?} ({:?})", m.psnr, m.ssim, m.fid_proxy, t.elapsed());
    }
    let hq2: Vec<Image> = world.sample_set(9, "ref", n_test);
    eprintln!("hq-vs-fresh fid {:?}", evaluate(&hq2, &hq)?.fid_proxy);
    Ok(())
}
