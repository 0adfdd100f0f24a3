use std::fs;
use std::path::{Path, PathBuf};

use difface::analysis::{self, SweepSetup};
use difface::imageio::{self, from_signed, to_signed, Image};
use difface::models::{
    gm_optimal_denoiser, train_denoiser, train_estimator, ConvEstimator, Denoiser, GaussianMixtureWorld,
    MlpDenoiser, ReverseConfig,
};
use difface::sampler::{pluralistic_restore, reconstruct_probe, SamplerOptions};
use difface::schedule::NoiseSchedule;
use difface::seed;
use difface::store::{
    self, generate_dataset, load_denoiser, load_estimator, save_denoiser, save_estimator, ArtifactRef, Dataset,
    DatasetMode, ExperimentConfig, PathsConfig, RunDir, RunManifest,
};
use ndarray::{Array2, ArrayD};
use serde_json::{json, Value};

use crate::args::{Cli, Command, Curves, GenData, Mode, Models, Probe, Report, Restore, Sweep, Train};
use crate::error::{CliError, CliResult};
use crate::plot;

struct Ctx {
    config: ExperimentConfig,
    root: u64,
    run_dir: PathBuf,
}

fn load_config(path: Option<&Path>) -> CliResult<ExperimentConfig> {
    match path {
        None => Ok(ExperimentConfig::default()),
        Some(p) if !p.exists() => Err(CliError::config(format!("config {} does not exist", p.display()))),
        Some(p) => Ok(ExperimentConfig::load(p)?),
    }
}

pub fn dispatch(cli: &Cli) -> CliResult<Value> {
    let config = load_config(cli.config.as_deref())?;
    let ctx = Ctx {
        root: cli.seed.unwrap_or(config.seed),
        config,
        run_dir: cli.run_dir.clone(),
    };
    match &cli.command {
        Command::GenData(a) => gen_data(&ctx, a),
        Command::TrainEstimator(a) => train_estimator_cmd(&ctx, a),
        Command::TrainDenoiser(a) => train_denoiser_cmd(&ctx, a),
        Command::Restore(a) => restore(&ctx, a),
        Command::Probe(a) => probe(&ctx, a),
        Command::Sweep(a) => sweep(&ctx, a),
        Command::Curves(a) => curves(cli, a),
        Command::Report(a) => report(a),
    }
}

fn input_path(flag: &Option<PathBuf>, configured: &Option<PathBuf>, key: &str) -> CliResult<PathBuf> {
    let chosen = flag.clone().or_else(|| configured.clone());
    Ok(PathsConfig::require(&chosen, key)?)
}

fn refuse_existing(path: &Path, force: bool) -> CliResult<()> {
    if path.exists() && !force {
        return Err(CliError::config(format!("{} exists (use --force)", path.display())));
    }
    Ok(())
}

fn file_digest(path: &Path) -> CliResult<String> {
    Ok(store::sha256_hex(&store::read_bytes(path)?))
}

fn gen_data(ctx: &Ctx, a: &GenData) -> CliResult<Value> {
    let (mode, eval) = match a.mode {
        Mode::Train => (DatasetMode::Train, false),
        Mode::Eval => (DatasetMode::Eval, true),
    };
    let ranges = ctx.config.degradation.ranges(eval);
    let label = if eval { "dataset-eval" } else { "dataset-train" };
    let seed_ = seed::derive(ctx.root, label, 0);
    let manifest = generate_dataset(&a.out, &ctx.config.world, &ranges, mode, a.count, seed_, a.force)?;
    let manifest_path = a.out.join(store::dataset::MANIFEST_FILE);
    Ok(json!({
        "dataset": a.out,
        "mode": manifest.mode,
        "count": manifest.entries.len(),
        "seed": seed_,
        "manifest_sha256": file_digest(&manifest_path)?,
    }))
}

fn open_dataset(flag: &Option<PathBuf>, cfg: &ExperimentConfig) -> CliResult<Dataset> {
    let dir = input_path(flag, &cfg.paths.dataset, "dataset")?;
    Ok(Dataset::open(&dir)?)
}

fn loss_summary(history: &[f64]) -> Value {
    json!({
        "steps": history.len(),
        "first": history.first(),
        "last": history.last(),
    })
}

fn train_estimator_cmd(ctx: &Ctx, a: &Train) -> CliResult<Value> {
    refuse_existing(&a.out, a.force)?;
    let ds = open_dataset(&a.dataset, &ctx.config)?;
    if ds.is_empty() {
        return Err(CliError::data("dataset is empty"));
    }
    let pairs = ds.pairs()?;
    let mut cfg = ctx.config.estimator.clone();
    cfg.seed = seed::derive(ctx.root, "estimator", cfg.seed);
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    let model = train_estimator(&pairs, &cfg)?;
    save_estimator(&a.out, &model)?;
    Ok(json!({
        "checkpoint": a.out,
        "sha256": file_digest(&a.out)?,
        "parameters": model.params().len(),
        "loss": loss_summary(model.loss_history()),
    }))
}

fn train_denoiser_cmd(ctx: &Ctx, a: &Train) -> CliResult<Value> {
    refuse_existing(&a.out, a.force)?;
    let ds = open_dataset(&a.dataset, &ctx.config)?;
    if ds.is_empty() {
        return Err(CliError::data("dataset is empty"));
    }
    let images = (0..ds.len()).map(|i| ds.hq(i)).collect::<Result<Vec<_>, _>>()?;
    let (c, h, w) = images[0].dim();
    if images.iter().any(|im| im.dim() != (c, h, w)) {
        return Err(CliError::data("dataset images differ in shape"));
    }
    let mut data = Array2::zeros((images.len(), c * h * w));
    for (i, im) in images.iter().enumerate() {
        data.row_mut(i).iter_mut().zip(to_signed(im).iter()).for_each(|(d, &v)| *d = v);
    }
    let schedule = ctx.config.schedule.build()?;
    let mut cfg = ctx.config.denoiser.clone();
    cfg.seed = seed::derive(ctx.root, "denoiser", cfg.seed);
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    let model = train_denoiser(&data, &[c, h, w], &schedule, &cfg)?;
    save_denoiser(&a.out, &model)?;
    Ok(json!({
        "checkpoint": a.out,
        "sha256": file_digest(&a.out)?,
        "schedule_fingerprint": schedule.fingerprint(),
        "components": model.pca().components(),
        "loss": loss_summary(model.loss_history()),
    }))
}

struct Loaded {
    estimator: ConvEstimator,
    denoiser: MlpDenoiser,
    refs: Vec<ArtifactRef>,
}

fn load_models(m: &Models, cfg: &ExperimentConfig, schedule: &NoiseSchedule) -> CliResult<Loaded> {
    let ep = input_path(&m.estimator, &cfg.paths.estimator, "estimator")?;
    let dp = input_path(&m.denoiser, &cfg.paths.denoiser, "denoiser")?;
    let refs = vec![
        ArtifactRef::of_file(&ep, ep.display().to_string())?,
        ArtifactRef::of_file(&dp, dp.display().to_string())?,
    ];
    Ok(Loaded {
        estimator: load_estimator(&ep)?,
        denoiser: load_denoiser(&dp, schedule)?,
        refs,
    })
}

fn state_to_image(x: &ArrayD<f64>) -> CliResult<Image> {
    Ok(from_signed(&analysis::as_image(x)?))
}

fn restore(ctx: &Ctx, a: &Restore) -> CliResult<Value> {
    let cfg = &ctx.config;
    let schedule = cfg.schedule.build()?;
    let chain = cfg.schedule.chain()?;
    let models = load_models(&a.models, cfg, &schedule)?;
    let n = a.n.unwrap_or(cfg.sampler.start);
    let seeds = a.seeds.clone().unwrap_or_else(|| cfg.sampler.seeds.clone());
    if seeds.is_empty() {
        return Err(CliError::config("no seeds given"));
    }
    let input = imageio::load_png(&a.input)?;
    let reference = a.reference.as_deref().map(imageio::load_png).transpose()?;
    let start = chain.start_timestep(n)?;

    let stem = a
        .input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "input".into());
    let id = a.run_id.clone().unwrap_or_else(|| format!("restore-{stem}-n{n}"));
    let opts = SamplerOptions {
        reverse: cfg.sampler.reverse(),
        record_trajectory: false,
    };
    let y0 = to_signed(&input).into_dyn();
    let outs = pluralistic_restore(&y0.view(), n, &models.estimator, &models.denoiser, &chain, &seeds, &opts)?;

    let run = RunDir::create(&ctx.run_dir, &id, a.force)?;
    run.write_config(cfg)?;
    let mut manifest = RunManifest::new(&id, "restore", cfg)?;
    manifest.inputs.push(ArtifactRef::of_file(&a.input, abs(&a.input))?);
    if let Some(r) = &a.reference {
        manifest.inputs.push(ArtifactRef::of_file(r, abs(r))?);
    }
    manifest.checkpoints = models.refs;
    manifest.requested_start = Some(n);
    manifest.start = Some(start);
    manifest.steps = Some(chain.steps_from(start));
    manifest.seeds = seeds.clone();
    let mut images = Vec::with_capacity(outs.len());
    for (s, out) in seeds.iter().zip(&outs) {
        // metrics are taken on the 8-bit image that is actually stored
        let img = quantize(&state_to_image(out)?)?;
        manifest.outputs.push(run.write_png(&format!("{stem}_seed{s}.png"), &img)?);
        images.push(img);
    }
    let diversity = analysis::mean_pairwise_rms(&images.iter().map(|i| i.clone().into_dyn()).collect::<Vec<_>>());
    manifest.metrics = match &reference {
        Some(r) => {
            let scores = images
                .iter()
                .map(|img| Ok(json!({"psnr": finite(analysis::psnr(img, r)?), "ssim": analysis::ssim(img, r)?})))
                .collect::<CliResult<Vec<Value>>>()?;
            json!({"diversity": diversity, "per_output": scores})
        }
        None => json!({"diversity": diversity}),
    };
    run.write_manifest(&manifest)?;
    Ok(json!({
        "run": run.path(),
        "outputs": manifest.outputs.iter().map(|o| &o.path).collect::<Vec<_>>(),
        "requested_start": n,
        "start": start,
        "steps": manifest.steps,
        "metrics": manifest.metrics,
    }))
}

fn quantize(img: &Image) -> CliResult<Image> {
    let (c, h, w) = img.dim();
    Ok(imageio::from_u8(&imageio::to_u8(img), c, h, w)?)
}

fn abs(p: &Path) -> String {
    fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf()).display().to_string()
}

/// JSON has no infinity; identical images report `null`.
fn finite(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn write_csv(path: &Path, header: &str, rows: &[String]) -> CliResult<()> {
    let mut text = String::with_capacity(64 * (rows.len() + 1));
    text.push_str(header);
    text.push('\n');
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    store::write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn probe(ctx: &Ctx, a: &Probe) -> CliResult<Value> {
    let cfg = &ctx.config;
    let schedule = cfg.schedule.build()?;
    let chain = cfg.schedule.chain()?;
    let mut rows = Vec::with_capacity(a.grid.len());
    let mut errors = Vec::with_capacity(a.grid.len());
    if a.oracle {
        let world = GaussianMixtureWorld::symmetric_pair(4, 1.5, 0.3)?;
        let den = gm_optimal_denoiser(&world, &schedule);
        let opts = SamplerOptions {
            reverse: ReverseConfig::unclipped(),
            record_trajectory: false,
        };
        let x0s = world.sample_n(&mut seed::stage_rng(ctx.root, "probe-oracle", 0), a.samples.max(1));
        for &n in &a.grid {
            let mut total = 0.0;
            for (i, row) in x0s.rows().into_iter().enumerate() {
                let x0 = row.to_owned().into_dyn();
                let out = reconstruct_probe(&x0.view(), n, &den, &chain, seed::derive(ctx.root, "probe", i as u64), &opts)?;
                total += (&out - &x0).mapv(|v| v * v).mean().unwrap_or(0.0);
            }
            errors.push(total / x0s.nrows() as f64);
        }
    } else {
        let input = a.input.as_ref().ok_or_else(|| CliError::config("--input is required without --oracle"))?;
        let images = probe_inputs(input, a.samples)?;
        let dp = input_path(&a.denoiser, &cfg.paths.denoiser, "denoiser")?;
        let den = load_denoiser(&dp, &schedule)?;
        check_shape(&den, &images)?;
        let opts = SamplerOptions {
            reverse: cfg.sampler.reverse(),
            record_trajectory: false,
        };
        for &n in &a.grid {
            let mut total = 0.0;
            for (i, img) in images.iter().enumerate() {
                let x0 = to_signed(img).into_dyn();
                let out = reconstruct_probe(&x0.view(), n, &den, &chain, seed::derive(ctx.root, "probe", i as u64), &opts)?;
                let rec = state_to_image(&out)?;
                total += (&rec - img).mapv(|v| v * v).mean().unwrap_or(0.0);
            }
            errors.push(total / images.len() as f64);
        }
    }
    for (&n, &mse) in a.grid.iter().zip(&errors) {
        rows.push(format!("{n},{mse},{}", -10.0 * mse.log10()));
    }
    write_csv(&a.out, "n,mse,psnr", &rows)?;
    let ns: Vec<f64> = a.grid.iter().map(|&n| n as f64).collect();
    Ok(json!({
        "csv": a.out,
        "oracle": a.oracle,
        "mse": errors,
        "spearman_n_mse": finite(analysis::spearman(&ns, &errors)),
    }))
}

fn probe_inputs(path: &Path, cap: usize) -> CliResult<Vec<Image>> {
    if path.is_dir() {
        let ds = Dataset::open(path)?;
        if ds.is_empty() {
            return Err(CliError::data("dataset is empty"));
        }
        (0..ds.len().min(cap.max(1))).map(|i| Ok(ds.hq(i)?)).collect()
    } else {
        Ok(vec![imageio::load_png(path)?])
    }
}

fn check_shape(den: &MlpDenoiser, images: &[Image]) -> CliResult<()> {
    for img in images {
        let (c, h, w) = img.dim();
        if den.sample_shape() != [c, h, w] {
            return Err(CliError::data(format!(
                "image shape {:?} does not match denoiser shape {:?}",
                [c, h, w],
                den.sample_shape()
            )));
        }
    }
    Ok(())
}

fn sweep(ctx: &Ctx, a: &Sweep) -> CliResult<Value> {
    let cfg = &ctx.config;
    let schedule = cfg.schedule.build()?;
    let chain = cfg.schedule.chain()?;
    let models = load_models(&a.models, cfg, &schedule)?;
    let ds = open_dataset(&a.dataset, cfg)?;
    let mut pairs = ds.pairs()?;
    if let Some(l) = a.limit {
        pairs.truncate(l);
    }
    if pairs.is_empty() {
        return Err(CliError::data("dataset is empty"));
    }
    let (hq, lq): (Vec<Image>, Vec<Image>) = pairs.into_iter().unzip();
    check_shape(&models.denoiser, &hq)?;
    let setup = SweepSetup {
        lq: &lq,
        hq: &hq,
        estimator: &models.estimator,
        denoiser: &models.denoiser as &dyn Denoiser,
        chain: &chain,
        seed: seed::derive(ctx.root, "sweep", 0),
        diversity_seeds: a.diversity_seeds,
        options: SamplerOptions {
            reverse: cfg.sampler.reverse(),
            record_trajectory: false,
        },
    };
    let rows = analysis::sweep_n(&setup, &a.grid)?;
    let mut buf = Vec::new();
    analysis::write_sweep_csv(&rows, &mut buf)?;
    store::write_atomic(&a.out, &buf)?;
    let baseline = analysis::estimator_baseline(&lq, &hq, &models.estimator)?;
    Ok(json!({
        "csv": a.out,
        "images": hq.len(),
        "rows": rows,
        "estimator_only": {
            "psnr": finite(baseline.psnr),
            "ssim": baseline.ssim,
            "fid_proxy": baseline.fid_proxy,
        },
    }))
}

fn curves(cli: &Cli, a: &Curves) -> CliResult<Value> {
    let cfg = load_config(a.schedule_config.as_deref().or(cli.config.as_deref()))?;
    let schedule = cfg.schedule.build()?;
    let stem = a.out.display().to_string();
    let (csv, png) = (PathBuf::from(format!("{stem}.csv")), PathBuf::from(format!("{stem}.png")));
    let mut buf = Vec::new();
    schedule.write_csv(&mut buf)?;
    store::write_atomic(&csv, &buf)?;
    if let Some(parent) = png.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    plot::schedule_curves(&schedule, &png)?;
    Ok(json!({
        "csv": csv,
        "png": png,
        "steps": schedule.steps(),
        "schedule_fingerprint": schedule.fingerprint(),
    }))
}

/// Verifies every stored output and recomputes per-output metrics against
/// the reference input when the run has one.
fn report(a: &Report) -> CliResult<Value> {
    let run = RunDir::open(&a.run)?;
    let m = run.verify()?;
    let stored = m.metrics.get("per_output").cloned();
    let recomputed = match (&stored, m.inputs.get(1)) {
        (Some(_), Some(r)) => {
            let bytes = store::read_verified(Path::new(&r.path), &r.sha256)?;
            let reference = imageio::decode_png(&bytes)?;
            let scores = m
                .outputs
                .iter()
                .map(|o| {
                    let img = run.load_output_png(o)?;
                    Ok(json!({"psnr": finite(analysis::psnr(&img, &reference)?), "ssim": analysis::ssim(&img, &reference)?}))
                })
                .collect::<CliResult<Vec<Value>>>()?;
            Some(Value::Array(scores))
        }
        _ => None,
    };
    let consistent = match (&stored, &recomputed) {
        (Some(s), Some(r)) => Some(s == r),
        _ => None,
    };
    let mean = |key: &str| -> Option<f64> {
        let arr = recomputed.as_ref()?.as_array()?;
        let vals: Vec<f64> = arr.iter().filter_map(|v| v.get(key)?.as_f64()).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    let summary = json!({
        "id": m.id,
        "command": m.command,
        "created_unix": m.created_unix,
        "schedule_fingerprint": m.schedule_fingerprint,
        "requested_start": m.requested_start,
        "start": m.start,
        "steps": m.steps,
        "seeds": m.seeds,
        "outputs": m.outputs.len(),
        "verified": true,
        "metrics": m.metrics,
        "recomputed": recomputed,
        "psnr_mean": mean("psnr"),
        "ssim_mean": mean("ssim"),
        "consistent": consistent,
    });
    let mut text = serde_json::to_vec_pretty(&summary).map_err(|e| CliError::data(e.to_string()))?;
    text.push(b'\n');
    store::write_atomic(&run.path().join("summary.json"), &text)?;
    if consistent == Some(false) {
        return Err(CliError::data("recomputed metrics differ from the stored ones"));
    }
    Ok(summary)
}
