//! Convolutional estimator of the clean image from a degraded one.
//!
//! Both variants work at quarter resolution after two pixel-unshuffles and
//! return to full resolution with two pixel-shuffles. `Plain` is a straight
//! stack of convolutions; `Residual` uses residual blocks and a global skip
//! from the input.

use ndarray::{Array3, ArrayD, ArrayViewD, Ix3};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::DiffusedEstimator;
use crate::error::{Error, Result};
use crate::imageio::{from_signed, to_signed, Image};
use crate::nn::{self, Adam, Conv2d, Layout};
use crate::{par, seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorArch {
    Plain,
    Residual,
}

impl EstimatorArch {
    pub fn tag(self) -> &'static str {
        match self {
            EstimatorArch::Plain => "plain",
            EstimatorArch::Residual => "residual",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    pub arch: EstimatorArch,
    pub channels: usize,
    pub features: usize,
    /// Body convolutions (plain) or residual blocks (residual).
    pub depth: usize,
    pub steps: usize,
    pub batch: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            arch: EstimatorArch::Residual,
            channels: 3,
            features: 32,
            depth: 2,
            steps: 2000,
            batch: 16,
            lr_max: 1e-4,
            lr_min: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
struct Net {
    head: Conv2d,
    down: Conv2d,
    body: Vec<Conv2d>,
    up: Conv2d,
    tail: Conv2d,
}

fn build(cfg: &EstimatorConfig) -> (Net, usize) {
    let (c, f) = (cfg.channels, cfg.features);
    let mut l = Layout::default();
    let head = Conv2d::new(&mut l, 4 * c, f, 3);
    let down = Conv2d::new(&mut l, 4 * f, f, 3);
    let per = match cfg.arch {
        EstimatorArch::Plain => 1,
        EstimatorArch::Residual => 2,
    };
    let body = (0..cfg.depth * per).map(|_| Conv2d::new(&mut l, f, f, 3)).collect();
    let up = Conv2d::new(&mut l, f, 4 * f, 3);
    let tail = Conv2d::new(&mut l, f, 4 * c, 3);
    (
        Net {
            head,
            down,
            body,
            up,
            tail,
        },
        l.len(),
    )
}

/// im2col buffers per convolution and pre-activations per nonlinearity, in
/// forward order.
struct Tape {
    cols: Vec<ndarray::Array2<f64>>,
    pre: Vec<Array3<f64>>,
}

#[derive(Debug, Clone)]
pub struct ConvEstimator {
    config: EstimatorConfig,
    net: Net,
    params: Vec<f64>,
    loss_history: Vec<f64>,
}

impl ConvEstimator {
    pub fn new(config: EstimatorConfig) -> Result<Self> {
        if config.channels == 0 || config.features == 0 {
            return Err(Error::Parameter("channels and features must be positive".into()));
        }
        let (net, n) = build(&config);
        let mut params = vec![0.0; n];
        let mut rng = seed::stage_rng(config.seed, "estimator-init", 0);
        let relu_gain = (2.0 / (1.0 + nn::LEAKY_SLOPE * nn::LEAKY_SLOPE)).sqrt();
        net.head.init(&mut params, relu_gain, &mut rng);
        net.down.init(&mut params, relu_gain, &mut rng);
        for (i, conv) in net.body.iter().enumerate() {
            let second_of_block = config.arch == EstimatorArch::Residual && i % 2 == 1;
            conv.init(&mut params, if second_of_block { 0.1 } else { relu_gain }, &mut rng);
        }
        net.up.init(&mut params, relu_gain, &mut rng);
        let tail_gain = match config.arch {
            EstimatorArch::Plain => 1.0,
            EstimatorArch::Residual => 1e-3,
        };
        net.tail.init(&mut params, tail_gain, &mut rng);
        Ok(ConvEstimator {
            config,
            net,
            params,
            loss_history: Vec::new(),
        })
    }

    pub fn from_parts(config: EstimatorConfig, params: Vec<f64>, loss_history: Vec<f64>) -> Result<Self> {
        let (net, n) = build(&config);
        if params.len() != n {
            return Err(Error::shape(&[n], &[params.len()]));
        }
        Ok(ConvEstimator {
            config,
            net,
            params,
            loss_history,
        })
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn loss_history(&self) -> &[f64] {
        &self.loss_history
    }

    fn check_input(&self, y: &Image) -> Result<()> {
        let (c, h, w) = y.dim();
        if c != self.config.channels {
            return Err(Error::shape(&[self.config.channels, h, w], &[c, h, w]));
        }
        if h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 {
            return Err(Error::Input(format!(
                "estimator needs sides divisible by 4, got {h}x{w}"
            )));
        }
        Ok(())
    }

    fn conv(&self, conv: &Conv2d, x: &Array3<f64>, tape: &mut Tape) -> Array3<f64> {
        let (out, cols) = conv.forward(&self.params, x);
        tape.cols.push(cols);
        out
    }

    /// Unclamped network output in canonical units.
    fn forward(&self, y: &Image) -> (Image, Tape) {
        let mut tape = Tape {
            cols: Vec::new(),
            pre: Vec::new(),
        };
        let n = &self.net;
        let x = nn::pixel_unshuffle(y, 2);
        let p = self.conv(&n.head, &x, &mut tape);
        let a = nn::leaky_relu(&p);
        tape.pre.push(p);
        let x = nn::pixel_unshuffle(&a, 2);
        let p = self.conv(&n.down, &x, &mut tape);
        let mut h = nn::leaky_relu(&p);
        tape.pre.push(p);
        match self.config.arch {
            EstimatorArch::Plain => {
                for conv in &n.body {
                    let p = self.conv(conv, &h, &mut tape);
                    h = nn::leaky_relu(&p);
                    tape.pre.push(p);
                }
            }
            EstimatorArch::Residual => {
                for pair in n.body.chunks(2) {
                    let p = self.conv(&pair[0], &h, &mut tape);
                    let a = nn::leaky_relu(&p);
                    tape.pre.push(p);
                    let r = self.conv(&pair[1], &a, &mut tape);
                    h = h + r;
                }
            }
        }
        let p = self.conv(&n.up, &h, &mut tape);
        let a = nn::leaky_relu(&p);
        tape.pre.push(p);
        let x = nn::pixel_shuffle(&a, 2);
        let o = self.conv(&n.tail, &x, &mut tape);
        let mut out = nn::pixel_shuffle(&o, 2);
        if self.config.arch == EstimatorArch::Residual {
            out += y;
        }
        (out, tape)
    }

    /// Accumulates the parameter gradient of `<gout, forward(y)>` into `g`.
    fn backward(&self, tape: &Tape, gout: &Image, g: &mut [f64]) {
        let n = &self.net;
        let p = &self.params;
        let mut ci = tape.cols.len();
        let mut pi = tape.pre.len();
        let go = nn::pixel_unshuffle(gout, 2);
        ci -= 1;
        let k = ci;
        let gx = n.tail.backward(p, &tape.cols[k], &go, g);
        let ga = nn::pixel_unshuffle(&gx, 2);
        pi -= 1;
        ci -= 1;
        let k = ci;
        let mut gh = n.up.backward(p, &tape.cols[k], &nn::leaky_relu_backward(&tape.pre[pi], &ga), g);
        match self.config.arch {
            EstimatorArch::Plain => {
                for conv in n.body.iter().rev() {
                    pi -= 1;
                    ci -= 1;
        let k = ci;
                    gh = conv.backward(p, &tape.cols[k], &nn::leaky_relu_backward(&tape.pre[pi], &gh), g);
                }
            }
            EstimatorArch::Residual => {
                for pair in n.body.chunks(2).rev() {
                    ci -= 1;
        let k = ci;
                    let ga = pair[1].backward(p, &tape.cols[k], &gh, g);
                    pi -= 1;
                    ci -= 1;
        let k = ci;
                    let gin = pair[0].backward(p, &tape.cols[k], &nn::leaky_relu_backward(&tape.pre[pi], &ga), g);
                    gh = gh + gin;
                }
            }
        }
        pi -= 1;
        ci -= 1;
        let k = ci;
        let gx = n.down.backward(p, &tape.cols[k], &nn::leaky_relu_backward(&tape.pre[pi], &gh), g);
        let ga = nn::pixel_shuffle(&gx, 2);
        pi -= 1;
        ci -= 1;
        let k = ci;
        n.head.backward(p, &tape.cols[k], &nn::leaky_relu_backward(&tape.pre[pi], &ga), g);
        debug_assert_eq!((ci, pi), (0, 0));
    }

    /// Canonical-range restoration, clamped to `[0, 1]`.
    pub fn restore(&self, y: &Image) -> Result<Image> {
        self.check_input(y)?;
        let (out, _) = self.forward(y);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("estimator produced non-finite output".into()));
        }
        Ok(out.mapv(|v| v.clamp(0.0, 1.0)))
    }

    /// Squared-error loss and its parameter gradient for one pair.
    fn pair_grad(&self, lq: &Image, hq: &Image) -> (f64, Vec<f64>) {
        let (out, tape) = self.forward(lq);
        let diff = &out - hq;
        let numel = diff.len() as f64;
        let loss = diff.mapv(|v| v * v).sum() / numel;
        let mut g = vec![0.0; self.params.len()];
        self.backward(&tape, &(diff * (2.0 / numel)), &mut g);
        (loss, g)
    }
}

impl DiffusedEstimator for ConvEstimator {
    fn predict(&self, y0: &ArrayViewD<f64>) -> Result<ArrayD<f64>> {
        let y = y0
            .to_owned()
            .into_dimensionality::<Ix3>()
            .map_err(|_| Error::shape(&[self.config.channels, 0, 0], y0.shape()))?;
        let out = self.restore(&from_signed(&y))?;
        Ok(to_signed(&out).into_dyn())
    }
}

/// Fits the estimator to `(lq, hq)` pairs with the mean-squared-error loss,
/// Adam and a cosine-annealed learning rate.
pub fn train_estimator(pairs: &[(Image, Image)], config: &EstimatorConfig) -> Result<ConvEstimator> {
    if pairs.is_empty() {
        return Err(Error::Input("empty training set".into()));
    }
    if config.batch == 0 {
        return Err(Error::Parameter("batch must be positive".into()));
    }
    let mut model = ConvEstimator::new(config.clone())?;
    for (lq, hq) in pairs {
        if lq.dim() != hq.dim() {
            let (a, b) = (lq.dim(), hq.dim());
            return Err(Error::shape(&[b.0, b.1, b.2], &[a.0, a.1, a.2]));
        }
        model.check_input(lq)?;
    }
    let mut opt = Adam::new(model.params.len());
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut cursor = order.len();
    let mut shuffle_rng = seed::stage_rng(config.seed, "estimator-shuffle", 0);
    let mut history = Vec::with_capacity(config.steps);
    let np = model.params.len();
    for step in 0..config.steps {
        let mut batch = Vec::with_capacity(config.batch);
        while batch.len() < config.batch {
            if cursor == order.len() {
                order.shuffle(&mut shuffle_rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let parts = par::map_slice(&batch, |&i| model.pair_grad(&pairs[i].0, &pairs[i].1));
        let loss = parts.iter().map(|p| p.0).sum::<f64>() / batch.len() as f64;
        if !loss.is_finite() {
            return Err(Error::Training { step, loss });
        }
        history.push(loss);
        let mut grads = nn::sum_grads(parts.into_iter().map(|p| p.1).collect(), np);
        let inv = 1.0 / batch.len() as f64;
        grads.iter_mut().for_each(|g| *g *= inv);
        let lr = nn::cosine_lr(step, config.steps, config.lr_max, config.lr_min);
        opt.step(&mut model.params, &grads, lr);
    }
    model.loss_history = history;
    Ok(model)
}
