//! Rayon global pool against a single-thread pool on the data-parallel hot
//! paths.

use criterion::{criterion_group, criterion_main, Criterion};
use difface::analysis::{feature_matrix, FeatureExtractor, FEATURE_SEED};
use difface::imageio::{to_signed, Image};
use difface::models::{train_denoiser, ConvEstimator, DenoiserConfig, DiffusedEstimator, EstimatorConfig};
use difface::sampler::{estimate_images, restore_images, SamplerOptions};
use difface::schedule::{respace, NoiseSchedule};
use difface::synth::{ImageWorld, WorldConfig};
use ndarray::Array2;

fn single() -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("pool")
}

fn bench(c: &mut Criterion) {
    let world = ImageWorld::new(WorldConfig::default()).expect("world");
    let images: Vec<Image> = world.sample_set(1, "bench", 96);
    let schedule = NoiseSchedule::default();
    let d = images[0].len();
    let mut data = Array2::zeros((images.len(), d));
    for (i, im) in images.iter().enumerate() {
        data.row_mut(i).assign(&to_signed(im).into_shape_with_order(d).expect("flat"));
    }
    let den_cfg = DenoiserConfig { steps: 1, ..DenoiserConfig::default() };
    let denoiser = train_denoiser(&data, &[3, 32, 32], &schedule, &den_cfg).expect("denoiser");
    let estimator = ConvEstimator::new(EstimatorConfig::default()).expect("estimator");
    let chain = respace(&schedule, 250).expect("chain");
    let lq = &images[..8];
    let opts = SamplerOptions::default();
    let extractor = FeatureExtractor::new(3, FEATURE_SEED);
    let pool = single();

    let mut g = c.benchmark_group("restore_images");
    g.sample_size(10);
    g.bench_function("parallel", |b| {
        b.iter(|| restore_images(lq, 100, &estimator, &denoiser, &chain, 0, &opts).expect("restore"))
    });
    g.bench_function("sequential", |b| {
        b.iter(|| pool.install(|| restore_images(lq, 100, &estimator, &denoiser, &chain, 0, &opts).expect("restore")))
    });
    g.finish();

    let mut g = c.benchmark_group("feature_matrix");
    g.bench_function("parallel", |b| b.iter(|| feature_matrix(&images, &extractor).expect("features")));
    g.bench_function("sequential", |b| {
        b.iter(|| pool.install(|| feature_matrix(&images, &extractor).expect("features")))
    });
    g.finish();

    let mut g = c.benchmark_group("estimator_forward");
    g.sample_size(20);
    g.bench_function("parallel", |b| b.iter(|| estimate_images(lq, &estimator).expect("estimate")));
    g.bench_function("sequential", |b| {
        b.iter(|| pool.install(|| estimate_images(lq, &estimator).expect("estimate")))
    });
    let y = to_signed(&lq[0]).into_dyn();
    g.bench_function("single_image", |b| b.iter(|| estimator.predict(&y.view()).expect("predict")));
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
