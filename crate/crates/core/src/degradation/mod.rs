//! Synthetic degradation: blur, bicubic downscale, additive Gaussian noise,
//! JPEG compression, bicubic upscale back to the input size.

pub mod kernel;
pub mod resample;

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::imageio::{self, Image};
use crate::seed::{self, Rng};

pub use kernel::{BlurKernel, KernelSpec};

/// JPEG quality factor, or `Skip` to bypass the codec entirely. Quality 100
/// is still lossy and never treated as identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JpegQuality {
    Skip,
    Level(u8),
}

impl Serialize for JpegQuality {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            JpegQuality::Skip => s.serialize_str("skip"),
            JpegQuality::Level(q) => s.serialize_u8(*q),
        }
    }
}

impl<'de> Deserialize<'de> for JpegQuality {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Level(u8),
            Tag(String),
        }
        match Raw::deserialize(d)? {
            Raw::Level(q) if (1..=100).contains(&q) => Ok(JpegQuality::Level(q)),
            Raw::Level(q) => Err(serde::de::Error::custom(format!(
                "jpeg quality {q} outside 1..=100"
            ))),
            Raw::Tag(t) if t == "skip" => Ok(JpegQuality::Skip),
            Raw::Tag(t) => Err(serde::de::Error::custom(format!(
                "unknown jpeg quality tag {t:?}"
            ))),
        }
    }
}

/// Parameters of one degradation draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradationSpec {
    pub kernel: KernelSpec,
    /// Downscale factor `s`.
    pub scale: f64,
    /// Noise standard deviation in 8-bit units.
    pub sigma: f64,
    pub quality: JpegQuality,
    pub seed: u64,
}

impl DegradationSpec {
    /// The pipeline configuration that reproduces its input exactly.
    pub fn identity(seed: u64) -> Self {
        DegradationSpec {
            kernel: KernelSpec::Delta,
            scale: 1.0,
            sigma: 0.0,
            quality: JpegQuality::Skip,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::Parameter(format!("invalid scale {}", self.scale)));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::Parameter(format!("invalid sigma {}", self.sigma)));
        }
        if let JpegQuality::Level(q) = self.quality {
            if !(1..=100).contains(&q) {
                return Err(Error::Parameter(format!("jpeg quality {q} outside 1..=100")));
            }
        }
        Ok(())
    }
}

/// Applies `y = {[(x * k)↓s + n]_JPEG}↑s` to a canonical image.
pub fn degrade(x: &Image, spec: &DegradationSpec) -> Result<Image> {
    spec.validate()?;
    let (_, h, w) = x.dim();
    if h == 0 || w == 0 {
        return Err(Error::Input("empty image".into()));
    }
    let kernel = spec.kernel.realize(h.min(w))?;
    let mut y = kernel.apply(x)?;

    let rescale = spec.scale != 1.0;
    if rescale {
        y = resample::resize_bicubic(
            &y,
            resample::scaled_len(h, spec.scale),
            resample::scaled_len(w, spec.scale),
        );
    }

    if spec.sigma > 0.0 {
        let mut rng = seed::rng(spec.seed);
        let std = spec.sigma / 255.0;
        y.mapv_inplace(|v| {
            let n: f64 = StandardNormal.sample(&mut rng);
            v + std * n
        });
    }
    y.mapv_inplace(|v| v.clamp(0.0, 1.0));

    if let JpegQuality::Level(q) = spec.quality {
        y = imageio::jpeg_roundtrip(&y, q)?;
    }

    if rescale {
        y = resample::resize_bicubic(&y, h, w);
        y.mapv_inplace(|v| v.clamp(0.0, 1.0));
    }
    Ok(y)
}

/// Continuous ranges used to synthesize training pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingRanges {
    pub blur_width: (f64, f64),
    pub scale: (f64, f64),
    pub sigma: (f64, f64),
    pub quality: (u8, u8),
}

impl Default for TrainingRanges {
    fn default() -> Self {
        TrainingRanges {
            blur_width: (0.1, 15.0),
            scale: (0.8, 32.0),
            sigma: (0.0, 20.0),
            quality: (30, 100),
        }
    }
}

/// Discrete sets used to synthesize validation and test pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSets {
    pub scale: Vec<f64>,
    pub sigma: Vec<f64>,
    pub quality: Vec<u8>,
    pub blur_width: Vec<f64>,
    pub theta: Vec<f64>,
}

impl Default for EvaluationSets {
    fn default() -> Self {
        EvaluationSets {
            scale: vec![4.0, 8.0, 16.0, 24.0, 32.0, 36.0, 40.0],
            sigma: vec![1.0, 5.0, 10.0, 15.0, 20.0],
            quality: vec![30, 40, 50, 60, 70],
            blur_width: vec![2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0],
            theta: vec![0.0, 0.25 * PI, 0.5 * PI, 0.75 * PI],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DegradationRanges {
    Training(TrainingRanges),
    Evaluation(EvaluationSets),
}

impl DegradationRanges {
    pub fn training() -> Self {
        DegradationRanges::Training(TrainingRanges::default())
    }

    pub fn evaluation() -> Self {
        DegradationRanges::Evaluation(EvaluationSets::default())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Parameter(format!("empty or invalid range: {what}")));
        match self {
            DegradationRanges::Training(r) => {
                if !(r.blur_width.0 > 0.0 && r.blur_width.0 <= r.blur_width.1) {
                    return bad("blur_width");
                }
                if !(r.scale.0 > 0.0 && r.scale.0 <= r.scale.1) {
                    return bad("scale");
                }
                if !(r.sigma.0 >= 0.0 && r.sigma.0 <= r.sigma.1) {
                    return bad("sigma");
                }
                if !(r.quality.0 >= 1 && r.quality.0 <= r.quality.1 && r.quality.1 <= 100) {
                    return bad("quality");
                }
            }
            DegradationRanges::Evaluation(s) => {
                if s.scale.is_empty() || s.scale.iter().any(|&v| v <= 0.0) {
                    return bad("scale");
                }
                if s.sigma.is_empty() || s.sigma.iter().any(|&v| v < 0.0) {
                    return bad("sigma");
                }
                if s.quality.is_empty() || s.quality.iter().any(|&q| !(1..=100).contains(&q)) {
                    return bad("quality");
                }
                if s.blur_width.is_empty() || s.blur_width.iter().any(|&v| v <= 0.0) {
                    return bad("blur_width");
                }
                if s.theta.is_empty() {
                    return bad("theta");
                }
            }
        }
        Ok(())
    }
}

fn pick<T: Copy>(rng: &mut Rng, set: &[T]) -> T {
    set[rng.gen_range(0..set.len())]
}

fn uniform(rng: &mut Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

/// Draws one degradation. Training mode uses an isotropic kernel
/// (`l_x = l_y = l`); evaluation mode draws each axis width and the angle
/// independently from the discrete sets.
pub fn sample_spec(ranges: &DegradationRanges, rng: &mut Rng) -> DegradationSpec {
    match ranges {
        DegradationRanges::Training(r) => {
            let l = uniform(rng, r.blur_width);
            let scale = uniform(rng, r.scale);
            let sigma = uniform(rng, r.sigma);
            let quality = rng.gen_range(r.quality.0..=r.quality.1);
            DegradationSpec {
                kernel: KernelSpec::isotropic(l),
                scale,
                sigma,
                quality: JpegQuality::Level(quality),
                seed: rng.gen(),
            }
        }
        DegradationRanges::Evaluation(s) => {
            let scale = pick(rng, &s.scale);
            let sigma = pick(rng, &s.sigma);
            let quality = pick(rng, &s.quality);
            let l_x = pick(rng, &s.blur_width);
            let l_y = pick(rng, &s.blur_width);
            let theta = pick(rng, &s.theta);
            DegradationSpec {
                kernel: KernelSpec::Gaussian {
                    l_x,
                    l_y,
                    theta,
                    support: None,
                },
                scale,
                sigma,
                quality: JpegQuality::Level(quality),
                seed: rng.gen(),
            }
        }
    }
}
