//! The localizer `g(x)`: a fully connected ReLU network (or a cubic
//! polynomial for one-dimensional inputs), its exact gradients, and ADAM.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flat access to a parameter set, in a fixed order.
pub trait Parameters: Clone {
    fn num_params(&self) -> usize;
    fn slices(&self) -> Vec<&[f64]>;
    fn slices_mut(&mut self) -> Vec<&mut [f64]>;

    /// Same shape, all zeros.
    fn zeros_like(&self) -> Self;
}

/// Weights and biases of a ReLU MLP with a scalar linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layer_dims: Vec<usize>,
    /// `weights[l]` has shape `(dims[l + 1], dims[l])`.
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

impl MlpParams {
    /// All-zero network; `layer_dims` is input, hidden widths, then 1.
    pub fn zeros(layer_dims: &[usize]) -> Result<Self> {
        validate_dims(layer_dims)?;
        let weights = layer_dims
            .windows(2)
            .map(|w| Array2::zeros((w[1], w[0])))
            .collect();
        let biases = layer_dims[1..].iter().map(|&d| Array1::zeros(d)).collect();
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
        })
    }

    /// He-style uniform initialization: weights in `±sqrt(6 / fan_in)`, zero biases.
    pub fn init<R: Rng>(layer_dims: &[usize], rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(layer_dims)?;
        for w in &mut p.weights {
            let limit = (6.0 / w.ncols() as f64).sqrt();
            w.mapv_inplace(|_| rng.random_range(-limit..limit));
        }
        Ok(p)
    }

    pub fn from_parts(weights: Vec<Array2<f64>>, biases: Vec<Array1<f64>>) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::shape("one bias per weight matrix", format!("{} and {}", weights.len(), biases.len())));
        }
        let mut dims = vec![weights[0].ncols()];
        for (w, b) in weights.iter().zip(&biases) {
            if w.ncols() != *dims.last().unwrap() || b.len() != w.nrows() {
                return Err(Error::shape(
                    format!("layer chaining from width {}", dims.last().unwrap()),
                    format!("weight {:?}, bias {}", w.dim(), b.len()),
                ));
            }
            dims.push(w.nrows());
        }
        validate_dims(&dims)?;
        let p = Self {
            layer_dims: dims,
            weights,
            biases,
        };
        if p.slices().iter().any(|s| s.iter().any(|v| !v.is_finite())) {
            return Err(Error::Format("non-finite network parameter".into()));
        }
        Ok(p)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.input_dim() {
            return Err(Error::shape(self.input_dim(), x.len()));
        }
        let last = self.weights.len() - 1;
        let mut h = ArrayView1::from(x).to_owned();
        for (l, (w, c)) in self.weights.iter().zip(&self.biases).enumerate() {
            h = w.dot(&h) + c;
            if l < last {
                h.mapv_inplace(relu);
            }
        }
        Ok(h[0])
    }

    /// Outputs for every row of `xs`.
    pub fn forward_batch(&self, xs: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        Ok(self.trace(xs)?.output())
    }

    /// Forward pass keeping the post-activation of every layer for [`Self::backward_batch`].
    pub fn trace(&self, xs: ArrayView2<'_, f64>) -> Result<MlpTrace> {
        if xs.ncols() != self.input_dim() {
            return Err(Error::shape(self.input_dim(), xs.ncols()));
        }
        let last = self.weights.len() - 1;
        let mut acts = Vec::with_capacity(self.weights.len() + 1);
        acts.push(xs.to_owned());
        for (l, (w, c)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = acts[l].dot(&w.t());
            z += c;
            if l < last {
                z.mapv_inplace(relu);
            }
            acts.push(z);
        }
        Ok(MlpTrace { acts })
    }

    /// Gradient of `upstream * g(x)` with respect to every parameter.
    pub fn backward(&self, x: &[f64], upstream: f64) -> Result<MlpParams> {
        if x.len() != self.input_dim() {
            return Err(Error::shape(self.input_dim(), x.len()));
        }
        let xs = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        let trace = self.trace(xs)?;
        self.backward_batch(&trace, ArrayView1::from(&[upstream]))
    }

    /// Sum over rows of `upstream[n] * d g(x_n) / d theta`. ReLU'(0) is taken as 0.
    pub fn backward_batch(&self, trace: &MlpTrace, upstream: ArrayView1<'_, f64>) -> Result<MlpParams> {
        let n = trace.acts[0].nrows();
        if upstream.len() != n {
            return Err(Error::shape(n, upstream.len()));
        }
        let layers = self.weights.len();
        let mut grads = self.zeros_like();
        // delta: d loss / d pre-activation of the current layer, one row per sample
        let mut delta = upstream.to_owned().insert_axis(Axis(1));
        for l in (0..layers).rev() {
            grads.weights[l] = delta.t().dot(&trace.acts[l]).as_standard_layout().into_owned();
            grads.biases[l] = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut back = delta.dot(&self.weights[l]);
                ndarray::Zip::from(&mut back)
                    .and(&trace.acts[l])
                    .for_each(|d, &h| {
                        if h <= 0.0 {
                            *d = 0.0;
                        }
                    });
                delta = back;
            }
        }
        Ok(grads)
    }
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 || dims.contains(&0) || *dims.last().unwrap() != 1 {
        return Err(Error::shape("input width, hidden widths, then 1", format!("{dims:?}")));
    }
    Ok(())
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

/// Activations saved by [`MlpParams::trace`].
#[derive(Debug, Clone)]
pub struct MlpTrace {
    acts: Vec<Array2<f64>>,
}

impl MlpTrace {
    pub fn output(&self) -> Array1<f64> {
        self.acts.last().expect("at least one layer").column(0).to_owned()
    }
}

impl Parameters for MlpParams {
    fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(w.as_slice().expect("standard layout"));
            out.push(b.as_slice().expect("contiguous"));
        }
        out
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w.as_slice_mut().expect("standard layout"));
            out.push(b.as_slice_mut().expect("contiguous"));
        }
        out
    }

    fn zeros_like(&self) -> Self {
        Self::zeros(&self.layer_dims).expect("dims already validated")
    }
}

/// `g(x) = t1 x + t2 x^2 + t3 x^3` on a scalar input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CubicParams {
    pub theta: [f64; 3],
}

impl CubicParams {
    pub fn new(theta: [f64; 3]) -> Self {
        Self { theta }
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        match x {
            [v] => Ok(self.eval_scalar(*v)),
            _ => Err(Error::shape(1, x.len())),
        }
    }

    fn eval_scalar(&self, v: f64) -> f64 {
        let [a, b, c] = self.theta;
        v * (a + v * (b + v * c))
    }

    pub fn forward_batch(&self, xs: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        if xs.ncols() != 1 {
            return Err(Error::shape(1, xs.ncols()));
        }
        Ok(xs.column(0).mapv(|v| self.eval_scalar(v)))
    }

    pub fn backward_batch(&self, xs: ArrayView2<'_, f64>, upstream: ArrayView1<'_, f64>) -> Result<CubicParams> {
        if xs.ncols() != 1 || xs.nrows() != upstream.len() {
            return Err(Error::shape(format!("{} x 1", upstream.len()), format!("{:?}", xs.dim())));
        }
        let mut theta = [0.0; 3];
        for (&v, &u) in xs.column(0).iter().zip(upstream) {
            theta[0] += u * v;
            theta[1] += u * v * v;
            theta[2] += u * v * v * v;
        }
        Ok(CubicParams { theta })
    }
}

impl Parameters for CubicParams {
    fn num_params(&self) -> usize {
        3
    }
    fn slices(&self) -> Vec<&[f64]> {
        vec![&self.theta]
    }
    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.theta]
    }
    fn zeros_like(&self) -> Self {
        CubicParams { theta: [0.0; 3] }
    }
}

/// ADAM hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates, flattened in [`Parameters::slices`] order.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step_count: u64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

impl AdamState {
    pub fn new<P: Parameters>(params: &P, config: AdamConfig) -> Self {
        let n = params.num_params();
        Self {
            config,
            step_count: 0,
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.second_moment
    }
}

/// One bias-corrected ADAM update of `params` along `grads`.
pub fn adam_step<P: Parameters>(params: &mut P, grads: &P, state: &mut AdamState) -> Result<()> {
    if params.num_params() != state.first_moment.len() || grads.num_params() != state.first_moment.len() {
        return Err(Error::shape(state.first_moment.len(), params.num_params()));
    }
    state.step_count += 1;
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let t = state.step_count as i32;
    let correct1 = 1.0 - beta1.powi(t);
    let correct2 = 1.0 - beta2.powi(t);
    let mut k = 0;
    for (p, g) in params.slices_mut().into_iter().zip(grads.slices()) {
        for (pi, &gi) in p.iter_mut().zip(g) {
            let m = &mut state.first_moment[k];
            let v = &mut state.second_moment[k];
            *m = beta1 * *m + (1.0 - beta1) * gi;
            *v = beta2 * *v + (1.0 - beta2) * gi * gi;
            let m_hat = *m / correct1;
            let v_hat = *v / correct2;
            *pi -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            k += 1;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use ndarray::array;

    /// Straightforward per-neuron loops; independent of the matrix code path.
    fn naive_forward(p: &MlpParams, x: &[f64]) -> f64 {
        let mut h = x.to_vec();
        let layers = p.weights.len();
        for l in 0..layers {
            let w = &p.weights[l];
            let mut next = vec![0.0; w.nrows()];
            for (i, out) in next.iter_mut().enumerate() {
                let mut acc = p.biases[l][i];
                for (j, hj) in h.iter().enumerate() {
                    acc += w[[i, j]] * hj;
                }
                *out = if l + 1 < layers { acc.max(0.0) } else { acc };
            }
            h = next;
        }
        h[0]
    }

    #[test]
    fn zero_network_outputs_zero() {
        let p = MlpParams::zeros(&[3, 5, 5, 1]).unwrap();
        assert_eq!(p.forward(&[1.0, -2.0, 3.0]).unwrap(), 0.0);
    }

    #[test]
    fn single_affine_layer() {
        let p = MlpParams::from_parts(vec![array![[2.0]]], vec![array![1.0]]).unwrap();
        assert_eq!(p.forward(&[3.0]).unwrap(), 7.0);
        let g = p.backward(&[3.0], 0.5).unwrap();
        assert_eq!(g.weights[0][[0, 0]], 1.5);
        assert_eq!(g.biases[0][0], 0.5);
    }

    #[test]
    fn shape_errors() {
        let p = MlpParams::zeros(&[2, 4, 1]).unwrap();
        assert!(matches!(p.forward(&[1.0]), Err(Error::ShapeMismatch { .. })));
        assert!(MlpParams::zeros(&[2, 4, 2]).is_err());
        assert!(MlpParams::from_parts(vec![array![[1.0, 2.0]]], vec![array![0.0, 0.0]]).is_err());
    }

    #[test]
    fn forward_matches_naive_reimplementation() {
        let mut rng = rng_from_seed(11);
        for dims in [vec![1, 7, 1], vec![3, 10, 10, 1], vec![4, 20, 20, 20, 1]] {
            let p = MlpParams::init(&dims, &mut rng).unwrap();
            let xs = Array2::from_shape_fn((16, dims[0]), |_| rng.random_range(-2.0..2.0));
            let batch = p.forward_batch(xs.view()).unwrap();
            for (i, row) in xs.rows().into_iter().enumerate() {
                let r = row.to_vec();
                let want = naive_forward(&p, &r);
                assert!((p.forward(&r).unwrap() - want).abs() <= 1e-12 * want.abs().max(1.0));
                assert!((batch[i] - want).abs() <= 1e-12 * want.abs().max(1.0));
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let p = MlpParams::init(&[2, 6, 1], &mut rng_from_seed(2)).unwrap();
        let g = p.backward(&[0.3, -0.1], 0.0).unwrap();
        assert!(g.slices().iter().all(|s| s.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn backward_matches_central_differences() {
        let h = 1e-5;
        let mut rng = rng_from_seed(5);
        let mut checked = 0;
        for trial in 0..6 {
            let dims = [3, 8, 8, 1];
            let p = MlpParams::init(&dims, &mut rng).unwrap();
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
            let upstream = 0.7 + trial as f64 * 0.1;
            let grad = p.backward(&x, upstream).unwrap();
            let flat_grad: Vec<f64> = grad.slices().concat();
            let n = p.num_params();
            for k in 0..n {
                let mut plus = p.clone();
                let mut minus = p.clone();
                set_flat(&mut plus, k, h);
                set_flat(&mut minus, k, -h);
                let fd = upstream * (plus.forward(&x).unwrap() - minus.forward(&x).unwrap()) / (2.0 * h);
                let an = flat_grad[k];
                // ReLU kinks inside [theta - h, theta + h] make the difference quotient meaningless
                if kink_nearby(&p, &x, k, h) {
                    continue;
                }
                let err = (fd - an).abs() / an.abs().max(fd.abs()).max(1e-6);
                assert!(err < 1e-4, "param {k}: fd {fd} vs analytic {an}");
                checked += 1;
            }
        }
        assert!(checked > 500);
    }

    fn set_flat(p: &mut MlpParams, k: usize, delta: f64) {
        let mut k = k;
        for s in p.slices_mut() {
            if k < s.len() {
                s[k] += delta;
                return;
            }
            k -= s.len();
        }
        panic!("index out of range");
    }

    fn kink_nearby(p: &MlpParams, x: &[f64], k: usize, h: f64) -> bool {
        let pattern = |q: &MlpParams| -> Vec<bool> {
            let mut h_act = x.to_vec();
            let mut signs = Vec::new();
            let last = q.weights.len() - 1;
            for l in 0..last {
                let z = q.weights[l].dot(&ArrayView1::from(&h_act[..])) + &q.biases[l];
                signs.extend(z.iter().map(|&v| v > 0.0));
                h_act = z.mapv(relu).to_vec();
            }
            signs
        };
        let mut plus = p.clone();
        let mut minus = p.clone();
        set_flat(&mut plus, k, h);
        set_flat(&mut minus, k, -h);
        pattern(&plus) != pattern(&minus)
    }

    #[test]
    fn cubic_forward_and_gradient() {
        let c = CubicParams::new([1.0, -2.0, 0.5]);
        assert!((c.forward(&[2.0]).unwrap() - (2.0 - 8.0 + 4.0)).abs() < 1e-15);
        let xs = array![[2.0], [-1.0]];
        let g = c.backward_batch(xs.view(), array![1.0, 2.0].view()).unwrap();
        assert_eq!(g.theta, [2.0 - 2.0, 4.0 + 2.0, 8.0 - 2.0]);
        assert!(c.forward(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut p = MlpParams::init(&[2, 3, 1], &mut rng_from_seed(1)).unwrap();
        let before = p.clone();
        let g = p.zeros_like();
        let mut s = AdamState::new(&p, AdamConfig::with_learning_rate(0.01));
        adam_step(&mut p, &g, &mut s).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut p = CubicParams::new([0.0, 1.0, -1.0]);
        let g = CubicParams::new([0.3, -2.0, 1e-3]);
        let mut s = AdamState::new(&p, AdamConfig::with_learning_rate(0.01));
        adam_step(&mut p, &g, &mut s).unwrap();
        // m_hat = g, v_hat = g^2 after bias correction: step = lr * g / (|g| + eps)
        let expected = [-0.01, 1.01, -1.01];
        for (got, want) in p.theta.iter().zip(expected) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
        adam_step(&mut p, &g, &mut s).unwrap();
        assert_eq!(s.step_count(), 2);
    }

    #[test]
    fn init_is_seeded() {
        let a = MlpParams::init(&[3, 10, 1], &mut rng_from_seed(4)).unwrap();
        let b = MlpParams::init(&[3, 10, 1], &mut rng_from_seed(4)).unwrap();
        let c = MlpParams::init(&[3, 10, 1], &mut rng_from_seed(5)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let limit = (6.0f64 / 3.0).sqrt();
        assert!(a.weights[0].iter().all(|w| w.abs() <= limit));
    }
}
