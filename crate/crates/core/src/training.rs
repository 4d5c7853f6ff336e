//! Losses and the ADAM training loop that produce a [`ConformityTransform`].
//!
//! * ER fits the localizer magnitude to the residual: `mean (|g(x)|^p - A)^2`.
//! * Gauss and Uniform maximize the likelihood of the transformed scores under
//!   a standard normal / uniform target. Terms that do not depend on the
//!   localizer (`log p(x)`, and the Gauss Jacobian `1/A`) are dropped, so the
//!   reported value is the parameter-dependent part of the negative
//!   log-likelihood:
//!   - Gauss: `mean b^2 / 2`
//!   - Uniform: `-mean [log sig(z) + log(1 - sig(z)) - log s]`, `z = A / s`.

use ndarray::{Array1, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::localizer::{adam_step, AdamConfig, AdamState, CubicParams, MlpParams, MlpTrace, Parameters};
use crate::rng::stream_rng;
use crate::transforms::{sigmoid, ConformityTransform, Family, Localizer, A_MIN};

/// Which localizer architecture to train.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LocalizerSpec {
    /// ReLU MLP with these hidden widths and a scalar linear output.
    Mlp { hidden: Vec<usize> },
    /// `t1 x + t2 x^2 + t3 x^3`, one-dimensional inputs only.
    Cubic,
}

impl Default for LocalizerSpec {
    fn default() -> Self {
        LocalizerSpec::Mlp { hidden: vec![100; 5] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchSize {
    Full,
    Mini(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub family: Family,
    pub gamma: f64,
    pub learning_rate: f64,
    /// Number of ADAM steps.
    pub iterations: usize,
    pub batch_size: BatchSize,
    pub seed: u64,
    /// `p` in the scale `gamma + |g(x)|^p`.
    pub exponent: u8,
    pub localizer: LocalizerSpec,
    /// Steps without improvement of the held-out loss before stopping; 0 disables.
    pub patience: usize,
    /// Fraction of the training set held out for model selection.
    pub validation_fraction: f64,
}

impl TrainConfig {
    pub fn for_family(family: Family) -> Self {
        Self {
            family,
            gamma: 0.001,
            learning_rate: family.default_learning_rate(),
            iterations: 2000,
            batch_size: BatchSize::Full,
            seed: 0,
            exponent: 1,
            localizer: LocalizerSpec::default(),
            patience: 0,
            validation_fraction: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.family == Family::Baseline {
            return Ok(());
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::config("gamma", "must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if self.iterations == 0 {
            return Err(Error::config("iterations", "must be positive"));
        }
        if !matches!(self.exponent, 1 | 2) {
            return Err(Error::config("exponent", "must be 1 or 2"));
        }
        if self.batch_size == BatchSize::Mini(0) {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::config("validation_fraction", "must lie in [0, 1)"));
        }
        if let LocalizerSpec::Mlp { hidden } = &self.localizer {
            if hidden.contains(&0) {
                return Err(Error::config("hidden", "layer widths must be positive"));
            }
        }
        Ok(())
    }
}

/// `mean (|g_n| - A_n)^2`.
pub fn er_loss(g_out: &[f64], residuals: &[f64]) -> Result<f64> {
    check_lengths(g_out.len(), residuals.len())?;
    Ok(g_out
        .iter()
        .zip(residuals)
        .map(|(g, a)| (g.abs() - a).powi(2))
        .sum::<f64>()
        / g_out.len() as f64)
}

/// Parameter-dependent negative log-likelihood of the transformed scores
/// (Gauss or Uniform family).
pub fn nf_negloglik(t: &ConformityTransform, residuals: &[f64], features: ArrayView2<'_, f64>) -> Result<f64> {
    if !matches!(t.family(), Family::Gauss | Family::Uniform) {
        return Err(Error::config("family", format!("{} has no likelihood objective", t.family())));
    }
    transform_loss(t, residuals, features)
}

/// Training objective of `t` on `(residuals, features)`: the ER loss for the
/// ER family, the negative log-likelihood for Gauss and Uniform.
pub fn transform_loss(t: &ConformityTransform, residuals: &[f64], features: ArrayView2<'_, f64>) -> Result<f64> {
    let g = match t.localizer() {
        Some(l) => l.forward_batch(features)?,
        None => return Err(Error::config("family", "the baseline transform has no trainable loss")),
    };
    check_lengths(g.len(), residuals.len())?;
    let obj = Objective::of(t.family(), t.gamma(), t.exponent());
    let loss = obj.loss(g.view(), residuals, None);
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { iteration: 0 });
    }
    Ok(loss)
}

/// Loss of `t` and its gradient with respect to the localizer parameters,
/// flattened in parameter order.
pub fn loss_and_gradient(
    t: &ConformityTransform,
    residuals: &[f64],
    features: ArrayView2<'_, f64>,
) -> Result<(f64, Vec<f64>)> {
    let obj = Objective::of(t.family(), t.gamma(), t.exponent());
    match t.localizer() {
        Some(Localizer::Mlp(p)) => {
            let (loss, grad) = obj.evaluate(p, features, residuals)?;
            Ok((loss, grad.slices().concat()))
        }
        Some(Localizer::Cubic(c)) => {
            let (loss, grad) = obj.evaluate(c, features, residuals)?;
            Ok((loss, grad.theta.to_vec()))
        }
        None => Err(Error::config("family", "the baseline transform has no trainable loss")),
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape(a, b));
    }
    if a == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(())
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Per-family loss on localizer outputs.
#[derive(Debug, Clone, Copy)]
struct Objective {
    family: Family,
    gamma: f64,
    exponent: u8,
}

impl Objective {
    fn of(family: Family, gamma: f64, exponent: u8) -> Self {
        Self { family, gamma, exponent }
    }

    /// `(|g|^p, d|g|^p / dg)`
    fn magnitude(&self, g: f64) -> (f64, f64) {
        match self.exponent {
            1 => (g.abs(), if g > 0.0 { 1.0 } else if g < 0.0 { -1.0 } else { 0.0 }),
            _ => (g * g, 2.0 * g),
        }
    }

    /// Per-sample loss and its derivative with respect to `g`.
    fn sample(&self, g: f64, a: f64) -> (f64, f64) {
        let (v, dv) = self.magnitude(g);
        match self.family {
            Family::Er => {
                let r = v - a;
                (r * r, 2.0 * r * dv)
            }
            Family::Gauss => {
                let s = self.gamma + v;
                let b = (a.max(A_MIN) / s).ln();
                (0.5 * b * b, -b / s * dv)
            }
            Family::Uniform => {
                let s = self.gamma + v;
                let z = a / s;
                let loss = softplus(z) + softplus(-z) + s.ln();
                let dl_ds = (2.0 * sigmoid(z) - 1.0) * (-z / s) + 1.0 / s;
                (loss, dl_ds * dv)
            }
            Family::Baseline => (0.0, 0.0),
        }
    }

    /// Mean loss; fills `upstream` with `d mean / d g_n` when given.
    fn loss(&self, g: ArrayView1<'_, f64>, a: &[f64], mut upstream: Option<&mut Array1<f64>>) -> f64 {
        let n = a.len() as f64;
        let mut total = 0.0;
        for (k, (&gk, &ak)) in g.iter().zip(a).enumerate() {
            let (l, d) = self.sample(gk, ak);
            total += l;
            if let Some(u) = upstream.as_deref_mut() {
                u[k] = d / n;
            }
        }
        total / n
    }

    fn evaluate<M: Differentiable>(&self, model: &M, xs: ArrayView2<'_, f64>, a: &[f64]) -> Result<(f64, M)> {
        let trace = model.trace(xs)?;
        let g = M::output(&trace);
        check_lengths(g.len(), a.len())?;
        let mut upstream = Array1::zeros(g.len());
        let loss = self.loss(g.view(), a, Some(&mut upstream));
        let grad = model.backward(xs, &trace, upstream.view())?;
        Ok((loss, grad))
    }
}

/// A localizer that can report outputs and parameter gradients on a batch.
trait Differentiable: Parameters {
    type Trace;
    fn trace(&self, xs: ArrayView2<'_, f64>) -> Result<Self::Trace>;
    fn output(trace: &Self::Trace) -> Array1<f64>;
    fn backward(&self, xs: ArrayView2<'_, f64>, trace: &Self::Trace, upstream: ArrayView1<'_, f64>) -> Result<Self>;
}

impl Differentiable for MlpParams {
    type Trace = MlpTrace;
    fn trace(&self, xs: ArrayView2<'_, f64>) -> Result<MlpTrace> {
        MlpParams::trace(self, xs)
    }
    fn output(trace: &MlpTrace) -> Array1<f64> {
        trace.output()
    }
    fn backward(&self, _xs: ArrayView2<'_, f64>, trace: &MlpTrace, upstream: ArrayView1<'_, f64>) -> Result<Self> {
        self.backward_batch(trace, upstream)
    }
}

impl Differentiable for CubicParams {
    type Trace = Array1<f64>;
    fn trace(&self, xs: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        self.forward_batch(xs)
    }
    fn output(trace: &Array1<f64>) -> Array1<f64> {
        trace.clone()
    }
    fn backward(&self, xs: ArrayView2<'_, f64>, _trace: &Array1<f64>, upstream: ArrayView1<'_, f64>) -> Result<Self> {
        self.backward_batch(xs, upstream)
    }
}

/// Outcome of a training run.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub transform: ConformityTransform,
    /// Best held-out (or training, without a validation split) loss.
    pub best_loss: f64,
    /// Running best loss after each step; non-increasing.
    pub history: Vec<f64>,
    pub steps: usize,
    pub stopped_early: bool,
}

/// Trains a transform on a dataset disjoint from calibration and test data.
pub fn train_transform(cfg: &TrainConfig, train_set: &Dataset, f_predictions: &[f64]) -> Result<ConformityTransform> {
    Ok(fit_transform(cfg, train_set, f_predictions)?.transform)
}

/// As [`train_transform`], also returning the loss trajectory.
pub fn fit_transform(cfg: &TrainConfig, train_set: &Dataset, f_predictions: &[f64]) -> Result<TrainReport> {
    cfg.validate()?;
    if f_predictions.len() != train_set.len() {
        return Err(Error::shape(train_set.len(), f_predictions.len()));
    }
    if cfg.family == Family::Baseline {
        return Ok(TrainReport {
            transform: ConformityTransform::baseline(),
            best_loss: 0.0,
            history: Vec::new(),
            steps: 0,
            stopped_early: false,
        });
    }
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let residuals: Vec<f64> = train_set
        .labels()
        .iter()
        .zip(f_predictions)
        .map(|(y, f)| (y - f).abs())
        .collect();
    let xs = train_set.features();
    let mut init_rng = stream_rng(cfg.seed, 0);
    let objective = Objective::of(cfg.family, cfg.gamma, cfg.exponent);
    let (localizer, report) = match &cfg.localizer {
        LocalizerSpec::Mlp { hidden } => {
            let mut dims = Vec::with_capacity(hidden.len() + 2);
            dims.push(xs.ncols());
            dims.extend(hidden);
            dims.push(1);
            let init = scale_matched(MlpParams::init(&dims, &mut init_rng)?, &residuals, cfg.exponent)?;
            let (p, r) = run(cfg, objective, init, xs, &residuals)?;
            (Localizer::Mlp(p), r)
        }
        LocalizerSpec::Cubic => {
            if xs.ncols() != 1 {
                return Err(Error::shape("1 feature for the cubic localizer", xs.ncols()));
            }
            let init = CubicParams::new([0; 3].map(|_: u8| init_rng.random_range(-1.0..1.0)));
            let (p, r) = run(cfg, objective, init, xs, &residuals)?;
            (Localizer::Cubic(p), r)
        }
    };
    Ok(TrainReport {
        transform: ConformityTransform::new(cfg.family, cfg.gamma, cfg.exponent, localizer)?,
        ..report
    })
}

/// Shrinks the output layer and sets its bias so that `|g|^p` starts near the
/// mean residual with the same sign everywhere.
fn scale_matched(p: MlpParams, residuals: &[f64], exponent: u8) -> Result<MlpParams> {
    let mean_a = residuals.iter().sum::<f64>() / residuals.len() as f64;
    let mut weights = p.weights().to_vec();
    let mut biases = p.biases().to_vec();
    let last = weights.len() - 1;
    weights[last].mapv_inplace(|w| w * OUTPUT_INIT_SHRINK);
    biases[last].fill(mean_a.max(A_MIN).powf(1.0 / f64::from(exponent)));
    MlpParams::from_parts(weights, biases)
}

const OUTPUT_INIT_SHRINK: f64 = 0.1;

fn run<M: Differentiable>(
    cfg: &TrainConfig,
    objective: Objective,
    mut model: M,
    xs: ArrayView2<'_, f64>,
    residuals: &[f64],
) -> Result<(M, TrainReport)> {
    let n = residuals.len();
    let mut rng = stream_rng(cfg.seed, 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_val = if n >= 10 {
        ((n as f64) * cfg.validation_fraction).round() as usize
    } else {
        0
    };
    let (val_idx, fit_idx) = order.split_at(n_val);
    let fit_x = xs.select(Axis(0), fit_idx);
    let fit_a: Vec<f64> = fit_idx.iter().map(|&i| residuals[i]).collect();
    let val_x = xs.select(Axis(0), val_idx);
    let val_a: Vec<f64> = val_idx.iter().map(|&i| residuals[i]).collect();

    let mut adam = AdamState::new(&model, AdamConfig::with_learning_rate(cfg.learning_rate));
    let mut best = (f64::INFINITY, model.clone());
    let mut history = Vec::with_capacity(cfg.iterations);
    let mut since_improvement = 0;
    let mut stopped_early = false;
    let mut batch_idx: Vec<usize> = (0..fit_idx.len()).collect();

    for iteration in 0..cfg.iterations {
        let (loss, grad) = match cfg.batch_size {
            BatchSize::Mini(b) if b < fit_a.len() => {
                let (chosen, _) = batch_idx.partial_shuffle(&mut rng, b);
                let bx = fit_x.select(Axis(0), chosen);
                let ba: Vec<f64> = chosen.iter().map(|&i| fit_a[i]).collect();
                objective.evaluate(&model, bx.view(), &ba)?
            }
            _ => objective.evaluate(&model, fit_x.view(), &fit_a)?,
        };
        let monitored = if val_a.is_empty() {
            loss
        } else {
            objective.loss(M::output(&model.trace(val_x.view())?).view(), &val_a, None)
        };
        if !loss.is_finite() || !monitored.is_finite() {
            return Err(Error::NonFiniteLoss { iteration });
        }
        if monitored < best.0 {
            best = (monitored, model.clone());
            since_improvement = 0;
        } else {
            since_improvement += 1;
        }
        history.push(best.0);
        if cfg.patience > 0 && since_improvement >= cfg.patience {
            stopped_early = true;
            break;
        }
        adam_step(&mut model, &grad, &mut adam)?;
    }
    let steps = history.len();
    let (best_loss, best_model) = best;
    log::debug!(
        "{} training: {} steps, best loss {:.6}{}",
        cfg.family,
        steps,
        best_loss,
        if stopped_early { " (early stop)" } else { "" }
    );
    let report = TrainReport {
        transform: ConformityTransform::baseline(),
        best_loss,
        history,
        steps,
        stopped_early,
    };
    Ok((best_model, report))
}
