use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Dataset, SynthMeta};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Synthetic generators.
///
/// The four polynomial kinds draw `x1 ~ U[-1, 1]`, use the feature row
/// `[1, x1, x1^2]` and labels `y = [1, x1, x1^2] . w + 0.1 + sigma(x1) E` with
/// `E ~ N(0, 1)`. The toy kind draws `x ~ U[0, 1]` and `y ~ N(0, 1)` below 0.5,
/// `xi * N(0, 1)` above.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SynthKind {
    Toy,
    Cos,
    Squared,
    Inverse,
    Linear,
}

impl SynthKind {
    pub const POLYNOMIAL: [SynthKind; 4] = [SynthKind::Cos, SynthKind::Squared, SynthKind::Inverse, SynthKind::Linear];

    pub fn name(self) -> &'static str {
        match self {
            SynthKind::Toy => "toy",
            SynthKind::Cos => "cos",
            SynthKind::Squared => "squared",
            SynthKind::Inverse => "inverse",
            SynthKind::Linear => "linear",
        }
    }

    /// Noise standard deviation at `x1` for the polynomial kinds.
    pub fn noise_scale(self, x1: f64) -> f64 {
        match self {
            SynthKind::Cos if x1 < 0.5 => 2.0 * (PI / 2.0 * x1).cos(),
            SynthKind::Squared if x1 > 0.5 => 2.0 * x1 * x1,
            SynthKind::Inverse if x1 < 0.5 => 2.0 / (0.1 + x1.abs()),
            SynthKind::Linear if x1 > 0.5 => 2.0 * x1.abs(),
            _ => 0.0,
        }
    }
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.strip_prefix("synth-").unwrap_or(&s) {
            "toy" => Ok(SynthKind::Toy),
            "cos" => Ok(SynthKind::Cos),
            "squared" => Ok(SynthKind::Squared),
            "inverse" => Ok(SynthKind::Inverse),
            "linear" => Ok(SynthKind::Linear),
            other => Err(Error::config("kind", format!("unknown synthetic kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub n: usize,
    pub seed: u64,
    /// Fixed coefficients; drawn from N(0, 1) with the seed when absent.
    pub w: Option<[f64; 3]>,
    pub xi: f64,
}

impl SynthSpec {
    pub fn new(kind: SynthKind, n: usize, seed: u64) -> Self {
        Self {
            kind,
            n,
            seed,
            w: None,
            xi: 5.0,
        }
    }
}

pub const LABEL_OFFSET: f64 = 0.1;

pub fn gen_synth(spec: &SynthSpec) -> Result<Dataset> {
    if spec.n == 0 {
        return Err(Error::EmptyDataset);
    }
    // stream 0: coefficients, stream 1: samples
    let mut coef_rng = stream_rng(spec.seed, 0);
    let mut rng = stream_rng(spec.seed, 1);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    if spec.kind == SynthKind::Toy {
        if !(spec.xi.is_finite() && spec.xi > 0.0) {
            return Err(Error::config("xi", "must be positive"));
        }
        let mut x = Vec::with_capacity(spec.n);
        let mut y = Vec::with_capacity(spec.n);
        let mut urng = stream_rng(spec.seed, 2);
        for _ in 0..spec.n {
            let xi: f64 = urng.random_range(0.0..1.0);
            let scale = if xi < 0.5 { 1.0 } else { spec.xi };
            x.push(xi);
            y.push(scale * normal());
        }
        let features = Array2::from_shape_vec((spec.n, 1), x).expect("n x 1");
        return Ok(Dataset::new(features, y)?.with_meta(SynthMeta {
            kind: SynthKind::Toy,
            seed: spec.seed,
            w: Vec::new(),
            xi: spec.xi,
            offset: 0.0,
        }));
    }
    let w = spec
        .w
        .unwrap_or_else(|| [0; 3].map(|_: u8| StandardNormal.sample(&mut coef_rng)));
    let mut urng = stream_rng(spec.seed, 2);
    let mut features = Array2::zeros((spec.n, 3));
    let mut labels = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let x1: f64 = urng.random_range(-1.0..1.0);
        let row = [1.0, x1, x1 * x1];
        for (j, v) in row.iter().enumerate() {
            features[[i, j]] = *v;
        }
        let mean: f64 = row.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + LABEL_OFFSET;
        // the normal draw is consumed even where the noise scale vanishes
        let e = normal();
        labels.push(mean + spec.kind.noise_scale(x1) * e);
    }
    Ok(Dataset::new(features, labels)?.with_meta(SynthMeta {
        kind: spec.kind,
        seed: spec.seed,
        w: w.to_vec(),
        xi: spec.xi,
        offset: LABEL_OFFSET,
    }))
}
