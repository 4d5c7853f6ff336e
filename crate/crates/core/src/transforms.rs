//! Conformity transform families.
//!
//! With the localizer scale `s(x) = gamma + |g(x)|^p` (`p` is 1 by default, 2
//! for the toy cubic setup):
//!
//! | family   | `b(a, x)`      | `b^{-1}(b, x)`        | `db/da`                |
//! |----------|----------------|-----------------------|------------------------|
//! | baseline | `a`            | `b`                   | `1`                    |
//! | ER       | `a / s`        | `s b`                 | `1 / s`                |
//! | Gauss    | `ln(a / s)`    | `s e^b`               | `1 / a`                |
//! | Uniform  | `sigmoid(a/s)` | `s logit(b)`          | `sig (1 - sig) / s`    |
//!
//! Gauss floors `a` at [`A_MIN`] so exact-fit residuals keep a finite score.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::cp::ScoreTransform;
use crate::error::{Error, Result};
use crate::localizer::{CubicParams, MlpParams};

/// Floor applied to the residual before taking its logarithm.
pub const A_MIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Baseline,
    Er,
    Gauss,
    Uniform,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Baseline, Family::Er, Family::Gauss, Family::Uniform];

    pub fn name(self) -> &'static str {
        match self {
            Family::Baseline => "baseline",
            Family::Er => "ER",
            Family::Gauss => "Gauss",
            Family::Uniform => "Uniform",
        }
    }

    /// ADAM learning rate used for this family unless configured otherwise.
    pub fn default_learning_rate(self) -> f64 {
        match self {
            Family::Baseline => 0.0,
            Family::Er => 0.01,
            Family::Gauss => 1e-4,
            Family::Uniform => 1e-5,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "baseline" => Ok(Family::Baseline),
            "er" => Ok(Family::Er),
            "gauss" => Ok(Family::Gauss),
            "uniform" => Ok(Family::Uniform),
            other => Err(Error::config("family", format!("unknown family `{other}`"))),
        }
    }
}

/// Trainable `g(x)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Localizer {
    Mlp(MlpParams),
    Cubic(CubicParams),
}

impl Localizer {
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        match self {
            Localizer::Mlp(p) => p.forward(x),
            Localizer::Cubic(c) => c.forward(x),
        }
    }

    pub fn forward_batch(&self, xs: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        match self {
            Localizer::Mlp(p) => p.forward_batch(xs),
            Localizer::Cubic(c) => c.forward_batch(xs),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Localizer::Mlp(p) => p.input_dim(),
            Localizer::Cubic(_) => 1,
        }
    }
}

/// An input-dependent conformity transform of one of the four families.
#[derive(Debug, Clone, PartialEq)]
pub struct ConformityTransform {
    family: Family,
    gamma: f64,
    exponent: u8,
    localizer: Option<Localizer>,
}

impl ConformityTransform {
    pub fn baseline() -> Self {
        Self {
            family: Family::Baseline,
            gamma: 1.0,
            exponent: 1,
            localizer: None,
        }
    }

    /// A non-baseline family with scale `gamma + |g(x)|^exponent`.
    pub fn new(family: Family, gamma: f64, exponent: u8, localizer: Localizer) -> Result<Self> {
        if family == Family::Baseline {
            return Ok(Self::baseline());
        }
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::config("gamma", format!("must be positive, got {gamma}")));
        }
        if !matches!(exponent, 1 | 2) {
            return Err(Error::config("exponent", format!("must be 1 or 2, got {exponent}")));
        }
        Ok(Self {
            family,
            gamma,
            exponent,
            localizer: Some(localizer),
        })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn exponent(&self) -> u8 {
        self.exponent
    }

    pub fn localizer(&self) -> Option<&Localizer> {
        self.localizer.as_ref()
    }

    /// `gamma + |g|^p` for a localizer output `g`.
    pub fn scale_from_output(&self, g: f64) -> f64 {
        match self.exponent {
            1 => self.gamma + g.abs(),
            _ => self.gamma + g * g,
        }
    }

    /// Localizer scale `s(x)`; 1 for the baseline.
    pub fn scale(&self, x: &[f64]) -> Result<f64> {
        match &self.localizer {
            None => Ok(1.0),
            Some(l) => Ok(self.scale_from_output(l.forward(x)?)),
        }
    }

    pub fn scale_batch(&self, xs: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        match &self.localizer {
            None => Ok(Array1::ones(xs.nrows())),
            Some(l) => Ok(l.forward_batch(xs)?.mapv(|g| self.scale_from_output(g))),
        }
    }

    /// `b(a, x)` given a precomputed scale.
    pub fn eval_with_scale(&self, a: f64, s: f64) -> Result<f64> {
        if !a.is_finite() || a < 0.0 {
            return Err(Error::InvalidScore(a));
        }
        Ok(match self.family {
            Family::Baseline => a,
            Family::Er => a / s,
            Family::Gauss => (a.max(A_MIN) / s).ln(),
            Family::Uniform => sigmoid(a / s),
        })
    }

    pub fn invert_with_scale(&self, b: f64, s: f64) -> Result<f64> {
        let out_of_codomain = || Error::OutOfCodomain {
            family: self.family.name(),
            value: b,
        };
        match self.family {
            Family::Baseline | Family::Er => {
                if !b.is_finite() || b < 0.0 {
                    return Err(out_of_codomain());
                }
                Ok(if self.family == Family::Baseline { b } else { s * b })
            }
            Family::Gauss => {
                if b.is_nan() || b == f64::INFINITY {
                    return Err(out_of_codomain());
                }
                Ok(s * b.exp())
            }
            Family::Uniform => {
                if !(b > 0.5 && b < 1.0) {
                    return Err(out_of_codomain());
                }
                Ok(s * (b.ln() - (-b).ln_1p()))
            }
        }
    }

    /// `db/da`; at `a = 0` the Gauss family uses the floored residual.
    pub fn jacobian(&self, a: f64, x: &[f64]) -> Result<f64> {
        if !a.is_finite() || a < 0.0 {
            return Err(Error::InvalidScore(a));
        }
        let s = self.scale(x)?;
        Ok(match self.family {
            Family::Baseline => 1.0,
            Family::Er => 1.0 / s,
            Family::Gauss => 1.0 / a.max(A_MIN),
            Family::Uniform => {
                let sig = sigmoid(a / s);
                sig * (1.0 - sig) / s
            }
        })
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        match &self.localizer {
            Some(l) if l.input_dim() != x.len() => Err(Error::shape(l.input_dim(), x.len())),
            _ => Ok(()),
        }
    }

    /// Writes the versioned JSON parameter file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), &self.to_file())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let parsed: TransformFile = serde_json::from_reader(std::io::BufReader::new(file))?;
        Self::from_file(parsed)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(s)?)
    }

    fn to_file(&self) -> TransformFile {
        TransformFile {
            format: FORMAT_TAG.to_string(),
            version: FORMAT_VERSION,
            family: self.family,
            gamma: self.gamma,
            exponent: self.exponent,
            localizer: self.localizer.as_ref().map(|l| match l {
                Localizer::Mlp(p) => LocalizerFile::Mlp {
                    layer_dims: p.layer_dims().to_vec(),
                    weights: p.weights().iter().map(|w| w.iter().copied().collect()).collect(),
                    biases: p.biases().iter().map(|b| b.to_vec()).collect(),
                },
                Localizer::Cubic(c) => LocalizerFile::Cubic { theta: c.theta },
            }),
        }
    }

    fn from_file(f: TransformFile) -> Result<Self> {
        if f.format != FORMAT_TAG || f.version != FORMAT_VERSION {
            return Err(Error::Format(format!("{} v{}", f.format, f.version)));
        }
        if f.family == Family::Baseline {
            return Ok(Self::baseline());
        }
        let localizer = match f.localizer {
            None => return Err(Error::Format(format!("{} transform without localizer", f.family))),
            Some(LocalizerFile::Cubic { theta }) => Localizer::Cubic(CubicParams::new(theta)),
            Some(LocalizerFile::Mlp {
                layer_dims,
                weights,
                biases,
            }) => {
                if layer_dims.len() < 2 || weights.len() != layer_dims.len() - 1 {
                    return Err(Error::Format("layer count does not match layer_dims".into()));
                }
                let ws = weights
                    .into_iter()
                    .zip(layer_dims.windows(2))
                    .map(|(w, d)| {
                        Array2::from_shape_vec((d[1], d[0]), w)
                            .map_err(|e| Error::Format(format!("weight matrix {}x{}: {e}", d[1], d[0])))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let bs = biases.into_iter().map(Array1::from).collect();
                Localizer::Mlp(MlpParams::from_parts(ws, bs)?)
            }
        };
        Self::new(f.family, f.gamma, f.exponent, localizer)
    }
}

impl ScoreTransform for ConformityTransform {
    fn eval(&self, a: f64, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        self.eval_with_scale(a, self.scale(x)?)
    }

    fn invert(&self, b: f64, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        self.invert_with_scale(b, self.scale(x)?)
    }

    fn eval_batch(&self, a: &[f64], xs: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        if a.len() != xs.nrows() {
            return Err(Error::shape(format!("{} rows", a.len()), xs.nrows()));
        }
        let s = self.scale_batch(xs)?;
        a.iter().zip(&s).map(|(&ai, &si)| self.eval_with_scale(ai, si)).collect()
    }

    fn invert_batch(&self, b: f64, xs: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        let s = self.scale_batch(xs)?;
        s.iter().map(|&si| self.invert_with_scale(b, si)).collect()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Input-independent monotone transforms; they leave interval sizes unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlobalMonotone {
    /// `b(a) = ln a`
    Log,
    /// `b(a) = -1 / a`
    NegReciprocal,
}

impl ScoreTransform for GlobalMonotone {
    fn eval(&self, a: f64, _x: &[f64]) -> Result<f64> {
        if !a.is_finite() || a < 0.0 {
            return Err(Error::InvalidScore(a));
        }
        Ok(match self {
            GlobalMonotone::Log => a.max(A_MIN).ln(),
            GlobalMonotone::NegReciprocal => -1.0 / a.max(A_MIN),
        })
    }

    fn invert(&self, b: f64, _x: &[f64]) -> Result<f64> {
        match self {
            GlobalMonotone::Log if b < f64::INFINITY => Ok(b.exp()),
            GlobalMonotone::NegReciprocal if b < 0.0 => Ok(-1.0 / b),
            _ => Err(Error::OutOfCodomain {
                family: "global monotone",
                value: b,
            }),
        }
    }
}

const FORMAT_TAG: &str = "flowcp-transform";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TransformFile {
    format: String,
    version: u32,
    family: Family,
    gamma: f64,
    exponent: u8,
    localizer: Option<LocalizerFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum LocalizerFile {
    Mlp {
        layer_dims: Vec<usize>,
        /// Row-major `(dims[l + 1], dims[l])` matrices.
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
    },
    Cubic {
        theta: [f64; 3],
    },
}
