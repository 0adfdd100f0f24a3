//! Trainable noise predictor.
//!
//! Inputs are projected onto a principal subspace fitted to the training
//! data. Inside the subspace a small MLP corrects the Gaussian-optimal
//! prediction `√(1-a) u / (aλ + 1 - a)`; the orthogonal residual is scaled by
//! a learned gain around the same Gaussian baseline for the residual
//! variance.

use ndarray::{s, Array1, Array2, ArrayD, ArrayView1, ArrayViewD, Axis, IxDyn};
use rand::Rng as _;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Denoiser, Pca};
use crate::error::{Error, Result};
use crate::nn::{self, Adam, Dense, Layout};
use crate::schedule::NoiseSchedule;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiserConfig {
    /// Rank of the principal subspace; clamped to the data dimension.
    pub components: usize,
    pub hidden: usize,
    /// Number of hidden layers.
    pub depth: usize,
    pub time_dim: usize,
    pub steps: usize,
    pub batch: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub seed: u64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            components: 32,
            hidden: 128,
            depth: 2,
            time_dim: 16,
            steps: 4000,
            batch: 128,
            lr_max: 1e-3,
            lr_min: 1e-5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MlpDenoiser {
    config: DenoiserConfig,
    sample_shape: Vec<usize>,
    pca: Pca,
    schedule: NoiseSchedule,
    fingerprint: String,
    layers: Vec<Dense>,
    params: Vec<f64>,
    loss_history: Vec<f64>,
}

fn build_layers(cfg: &DenoiserConfig, k: usize) -> (Vec<Dense>, usize) {
    let mut layout = Layout::default();
    let mut layers = Vec::with_capacity(cfg.depth + 1);
    let mut width = k + cfg.time_dim;
    for _ in 0..cfg.depth {
        layers.push(Dense::new(&mut layout, width, cfg.hidden));
        width = cfg.hidden;
    }
    layers.push(Dense::new(&mut layout, width, k + 1));
    (layers, layout.len())
}

/// Activations kept for the backward pass.
struct Tape {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

impl MlpDenoiser {
    fn new(
        config: DenoiserConfig,
        sample_shape: Vec<usize>,
        pca: Pca,
        schedule: &NoiseSchedule,
        rng: &mut seed::Rng,
    ) -> Self {
        let (layers, n) = build_layers(&config, pca.components());
        let mut params = vec![0.0; n];
        let last = layers.len() - 1;
        for (i, layer) in layers.iter().enumerate() {
            let gain = if i == last { 1e-2 } else { 2f64.sqrt() };
            layer.init(&mut params, gain, rng);
        }
        MlpDenoiser {
            config,
            sample_shape,
            pca,
            fingerprint: schedule.fingerprint(),
            schedule: schedule.clone(),
            layers,
            params,
            loss_history: Vec::new(),
        }
    }

    /// Rebuilds a model from stored parts.
    pub fn from_parts(
        config: DenoiserConfig,
        sample_shape: Vec<usize>,
        pca: Pca,
        schedule: &NoiseSchedule,
        params: Vec<f64>,
        loss_history: Vec<f64>,
    ) -> Result<Self> {
        let (layers, n) = build_layers(&config, pca.components());
        if params.len() != n {
            return Err(Error::shape(&[n], &[params.len()]));
        }
        if sample_shape.iter().product::<usize>() != pca.dim() {
            return Err(Error::shape(&[pca.dim()], &sample_shape));
        }
        Ok(MlpDenoiser {
            config,
            sample_shape,
            pca,
            fingerprint: schedule.fingerprint(),
            schedule: schedule.clone(),
            layers,
            params,
            loss_history,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.sample_shape
    }

    pub fn pca(&self) -> &Pca {
        &self.pca
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn loss_history(&self) -> &[f64] {
        &self.loss_history
    }

    fn k(&self) -> usize {
        self.pca.components()
    }

    fn has_residual(&self) -> bool {
        self.k() < self.pca.dim()
    }

    fn residual_gain(&self, a: f64) -> f64 {
        (1.0 - a).sqrt() / (a * self.pca.residual_variance + 1.0 - a)
    }

    /// Network input rows `[u / √(aλ+1-a), emb(t)]`.
    fn features(&self, u: &Array2<f64>, ts: &[usize]) -> Array2<f64> {
        let k = self.k();
        let e = self.config.time_dim;
        let total = self.schedule.steps();
        let mut x = Array2::zeros((u.nrows(), k + e));
        for (r, &t) in ts.iter().enumerate() {
            let a = self.schedule.alphas_cum()[t - 1];
            for j in 0..k {
                let v = a * self.pca.eigenvalues[j] + 1.0 - a;
                x[[r, j]] = u[[r, j]] / v.sqrt();
            }
            x.slice_mut(s![r, k..])
                .assign(&nn::time_embedding(t, total, e));
        }
        x
    }

    fn forward(&self, x: Array2<f64>) -> (Array2<f64>, Tape) {
        let mut tape = Tape {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let pre = layer.forward(&self.params, &h.view());
            tape.inputs.push(h);
            if i == last {
                return (pre, tape);
            }
            h = nn::silu(&pre);
            tape.pre.push(pre);
        }
        unreachable!("at least one layer")
    }

    fn backward(&self, tape: &Tape, gout: Array2<f64>, grads: &mut [f64]) {
        let mut g = gout;
        for i in (0..self.layers.len()).rev() {
            let gin = self.layers[i].backward(&self.params, &tape.inputs[i].view(), &g, grads);
            if i > 0 {
                g = nn::silu_backward(&tape.pre[i - 1], &gin);
            }
        }
    }

    /// Subspace noise and residual gain for rows of projected coordinates.
    fn heads(&self, u: &Array2<f64>, ts: &[usize]) -> (Array2<f64>, Array1<f64>, Tape) {
        let k = self.k();
        let (out, tape) = self.forward(self.features(u, ts));
        let mut eps_u = out.slice(s![.., ..k]).to_owned();
        let mut gain = out.column(k).to_owned();
        for (r, &t) in ts.iter().enumerate() {
            let a = self.schedule.alphas_cum()[t - 1];
            for j in 0..k {
                let v = a * self.pca.eigenvalues[j] + 1.0 - a;
                eps_u[[r, j]] += (1.0 - a).sqrt() * u[[r, j]] / v;
            }
            gain[r] += self.residual_gain(a);
        }
        (eps_u, gain, tape)
    }

    fn predict_flat(&self, x: &ArrayView1<f64>, t: usize) -> Result<Array1<f64>> {
        let a = self.schedule.alpha_cum(t)?;
        let z = x - &(&self.pca.mean * a.sqrt());
        let u = self.pca.basis.dot(&z);
        let (eps_u, gain, _) = self.heads(&u.clone().insert_axis(Axis(0)), &[t]);
        let eps_u = eps_u.row(0);
        let mut eps = self.pca.basis.t().dot(&eps_u);
        if self.has_residual() {
            let r = &z - &self.pca.basis.t().dot(&u);
            eps.scaled_add(gain[0], &r);
        }
        Ok(eps)
    }
}

impl Denoiser for MlpDenoiser {
    fn predict_noise(&self, x_t: &ArrayViewD<f64>, t: usize) -> Result<ArrayD<f64>> {
        if x_t.shape() != self.sample_shape.as_slice() {
            return Err(Error::shape(&self.sample_shape, x_t.shape()));
        }
        if t == 0 || t > self.schedule.steps() {
            return Err(Error::Parameter(format!("timestep {t} out of range")));
        }
        let flat: Array1<f64> = x_t.iter().copied().collect();
        let eps = self.predict_flat(&flat.view(), t)?;
        Ok(eps
            .into_shape_with_order(IxDyn(&self.sample_shape))
            .expect("same length"))
    }

    fn schedule_fingerprint(&self) -> &str {
        &self.fingerprint
    }
}

/// Fits the noise predictor to `data` (one flattened sample per row, signed
/// range) with the ε-MSE objective over uniformly drawn timesteps.
pub fn train_denoiser(
    data: &Array2<f64>,
    sample_shape: &[usize],
    schedule: &NoiseSchedule,
    config: &DenoiserConfig,
) -> Result<MlpDenoiser> {
    let (n, d) = data.dim();
    if n == 0 {
        return Err(Error::Input("empty training set".into()));
    }
    if sample_shape.iter().product::<usize>() != d {
        return Err(Error::shape(sample_shape, &[d]));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("training data contains non-finite values".into()));
    }
    if config.batch == 0 || config.hidden == 0 {
        return Err(Error::Parameter("batch and hidden width must be positive".into()));
    }
    let pca = Pca::fit(&data.view(), config.components, &mut seed::stage_rng(config.seed, "pca", 0))?;
    let mut model = MlpDenoiser::new(
        config.clone(),
        sample_shape.to_vec(),
        pca,
        schedule,
        &mut seed::stage_rng(config.seed, "denoiser-init", 0),
    );
    let k = model.k();
    let centered = data - &model.pca.mean.view().insert_axis(Axis(0));
    let coords = centered.dot(&model.pca.basis.t());
    let perp: Vec<f64> = (0..n)
        .map(|i| {
            let full = centered.row(i).mapv(|v| v * v).sum();
            let inside = coords.row(i).mapv(|v| v * v).sum();
            (full - inside).max(0.0)
        })
        .collect();
    let dof = d - k;
    let chi = (dof > 0).then(|| ChiSquared::new(dof as f64).expect("positive dof"));

    let mut opt = Adam::new(model.params.len());
    let b = config.batch;
    let scale = 1.0 / (b * d) as f64;
    let total = schedule.steps();
    let mut history = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let mut rng = seed::stage_rng(config.seed, "denoiser-step", step as u64);
        let mut ut = Array2::zeros((b, k));
        let mut eps_u = Array2::zeros((b, k));
        let mut ts = Vec::with_capacity(b);
        let mut perp_terms = Vec::with_capacity(b);
        for r in 0..b {
            let i = rng.gen_range(0..n);
            let t = rng.gen_range(1..=total);
            let a = schedule.alphas_cum()[t - 1];
            for j in 0..k {
                let e: f64 = StandardNormal.sample(&mut rng);
                eps_u[[r, j]] = e;
                ut[[r, j]] = a.sqrt() * coords[[i, j]] + (1.0 - a).sqrt() * e;
            }
            // ‖r‖², ⟨r, ε⊥⟩ and ‖ε⊥‖² for the residual r = √a x0⊥ + √(1-a) ε⊥
            if let Some(chi) = &chi {
                let zeta: f64 = StandardNormal.sample(&mut rng);
                let c = perp[i].sqrt() * zeta;
                let q = chi.sample(&mut rng);
                let rr = a * perp[i] + 2.0 * (a * (1.0 - a)).sqrt() * c + (1.0 - a) * q;
                let re = a.sqrt() * c + (1.0 - a).sqrt() * q;
                perp_terms.push((rr, re, q));
            }
            ts.push(t);
        }
        let (pred_u, gain, tape) = model.heads(&ut, &ts);
        let diff = &pred_u - &eps_u;
        let mut loss = diff.mapv(|v| v * v).sum();
        let mut gout = Array2::zeros((b, k + 1));
        gout.slice_mut(s![.., ..k]).assign(&(&diff * (2.0 * scale)));
        for (r, &(rr, re, q)) in perp_terms.iter().enumerate() {
            let g = gain[r];
            loss += g * g * rr - 2.0 * g * re + q;
            gout[[r, k]] = (2.0 * g * rr - 2.0 * re) * scale;
        }
        let loss = loss * scale;
        if !loss.is_finite() {
            return Err(Error::Training { step, loss });
        }
        history.push(loss);
        let mut grads = vec![0.0; model.params.len()];
        model.backward(&tape, gout, &mut grads);
        let lr = nn::cosine_lr(step, config.steps, config.lr_max, config.lr_min);
        opt.step(&mut model.params, &grads, lr);
    }
    model.loss_history = history;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{gm_optimal_denoiser, smooth, GaussianMixtureWorld};
    use ndarray::array;

    fn small_config() -> DenoiserConfig {
        DenoiserConfig {
            hidden: 32,
            depth: 2,
            time_dim: 8,
            steps: 200,
            batch: 32,
            ..DenoiserConfig::default()
        }
    }

    #[test]
    fn output_shape_matches_input() {
        let data = Array2::from_shape_fn((50, 12), |(i, j)| ((i * 7 + j * 3) as f64 * 0.1).sin());
        let s = NoiseSchedule::default();
        let mut cfg = small_config();
        cfg.components = 4;
        cfg.steps = 5;
        let m = train_denoiser(&data, &[3, 2, 2], &s, &cfg).unwrap();
        let x = ArrayD::from_elem(IxDyn(&[3, 2, 2]), 0.3);
        let e = m.predict_noise(&x.view(), 500).unwrap();
        assert_eq!(e.shape(), &[3, 2, 2]);
        assert!(e.iter().all(|v| v.is_finite()));
        assert!(m.predict_noise(&ArrayD::zeros(IxDyn(&[12])).view(), 5).is_err());
    }

    #[test]
    fn empty_data_is_input_error() {
        let data = Array2::zeros((0, 4));
        let r = train_denoiser(&data, &[4], &NoiseSchedule::default(), &small_config());
        assert!(matches!(r, Err(Error::Input(_))));
    }

    #[test]
    fn diverging_run_is_training_error() {
        let data = Array2::from_shape_fn((10, 3), |(i, j)| (i + j) as f64);
        let mut cfg = small_config();
        cfg.lr_max = f64::INFINITY;
        let r = train_denoiser(&data, &[3], &NoiseSchedule::default(), &cfg);
        assert!(matches!(r, Err(Error::Training { .. })));
        let bad = Array2::from_elem((10, 3), f64::NAN);
        let r = train_denoiser(&bad, &[3], &NoiseSchedule::default(), &small_config());
        assert!(matches!(r, Err(Error::Input(_))));
    }

    #[test]
    fn residual_gain_is_gaussian_optimal_at_init() {
        // pure isotropic data: the untrained model is near the Gaussian optimum
        let mut rng = seed::rng(9);
        let data = Array2::from_shape_vec((400, 20), seed::normal_vec(&mut rng, 8000)).unwrap() * 0.5;
        let s = NoiseSchedule::default();
        let mut cfg = small_config();
        cfg.components = 2;
        cfg.steps = 1;
        let m = train_denoiser(&data, &[20], &s, &cfg).unwrap();
        assert!((m.pca.residual_variance - 0.25).abs() < 0.03);
        let a = s.alpha_cum(300).unwrap();
        assert!((m.residual_gain(a) - (1.0 - a).sqrt() / (0.25 * a + 1.0 - a)).abs() < 0.1);
    }

    #[test]
    fn learns_mixture_noise() {
        let world = GaussianMixtureWorld::new(array![[1.5, 0.5], [-1.0, -1.0]], 0.3, vec![0.4, 0.6]).unwrap();
        let data = world.sample_n(&mut seed::rng(1), 4000);
        let s = NoiseSchedule::default();
        let cfg = DenoiserConfig {
            components: 2,
            hidden: 64,
            depth: 2,
            time_dim: 16,
            steps: 1500,
            batch: 128,
            lr_max: 3e-3,
            lr_min: 1e-5,
            seed: 3,
        };
        let m = train_denoiser(&data, &[2], &s, &cfg).unwrap();
        let sm = smooth(m.loss_history(), 50);
        assert!(sm[sm.len() - 1] < sm[49]);

        let oracle = gm_optimal_denoiser(&world, &s);
        let mut rng = seed::rng(2);
        let (mut err_model, mut err_init) = (0.0, 0.0);
        let mut untrained = m.clone();
        untrained.params.iter_mut().for_each(|p| *p = 0.0);
        for _ in 0..500 {
            let t = rng.gen_range(1..=1000);
            let a = s.alpha_cum(t).unwrap();
            let x0 = world.sample(&mut rng);
            let z = Array1::from(seed::normal_vec(&mut rng, 2));
            let xt = (&x0 * a.sqrt() + &z * (1.0 - a).sqrt()).into_dyn();
            let want = oracle.predict_noise(&xt.view(), t).unwrap();
            let got = m.predict_noise(&xt.view(), t).unwrap();
            let base = untrained.predict_noise(&xt.view(), t).unwrap();
            err_model += (&got - &want).mapv(|v| v * v).sum();
            err_init += (&base - &want).mapv(|v| v * v).sum();
        }
        assert!(err_model < 0.5 * err_init, "{err_model} vs {err_init}");
    }
}
