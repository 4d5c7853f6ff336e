//! Base point predictors: a bagged CART forest and the noise-free oracle of
//! the synthetic generators.

use std::path::Path;

use ndarray::ArrayView2;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SynthMeta};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// A fitted point predictor `f(x)`.
pub trait Predictor {
    fn input_dim(&self) -> usize;

    fn predict(&self, x: &[f64]) -> Result<f64>;

    fn predict_batch(&self, xs: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        if xs.ncols() != self.input_dim() {
            return Err(Error::shape(format!("{} columns", self.input_dim()), xs.ncols()));
        }
        xs.rows()
            .into_iter()
            .map(|row| match row.as_slice() {
                Some(s) => self.predict(s),
                None => self.predict(&row.to_vec()),
            })
            .collect()
    }
}

pub fn mae(preds: &[f64], labels: &[f64]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::shape(labels.len(), preds.len()));
    }
    if preds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(preds.iter().zip(labels).map(|(p, y)| (p - y).abs()).sum::<f64>() / preds.len() as f64)
}

/// `f(x) = [1, x1, x1^2] . w + offset`, the conditional mean of the polynomial generators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OraclePredictor {
    pub w: [f64; 3],
    pub offset: f64,
}

impl OraclePredictor {
    pub fn new(w: [f64; 3], offset: f64) -> Self {
        Self { w, offset }
    }

    /// Oracle for a polynomial synthetic dataset; the toy model has conditional mean 0.
    pub fn from_meta(meta: &SynthMeta) -> Result<Self> {
        match meta.w.as_slice() {
            [a, b, c] => Ok(Self::new([*a, *b, *c], meta.offset)),
            [] => Ok(Self::new([0.0; 3], 0.0)),
            w => Err(Error::shape("3 coefficients", w.len())),
        }
    }
}

impl Predictor for OraclePredictor {
    fn input_dim(&self) -> usize {
        3
    }

    fn predict(&self, x: &[f64]) -> Result<f64> {
        match x {
            [a, b, c] => Ok(a * self.w[0] + b * self.w[1] + c * self.w[2] + self.offset),
            _ => Err(Error::shape(3, x.len())),
        }
    }
}

/// Predicts 0 for any input; the conditional mean of the toy model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroPredictor {
    pub dim: usize,
}

impl Predictor for ZeroPredictor {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::shape(self.dim, x.len()));
        }
        Ok(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 12,
            min_leaf: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Flat regression tree; node 0 is the root, `x[feature] <= threshold` goes left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub config: ForestConfig,
    pub input_dim: usize,
    pub trees: Vec<Tree>,
}

const FORMAT_TAG: &str = "flowcp-forest";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ForestFile {
    format: String,
    version: u32,
    #[serde(flatten)]
    model: ForestModel,
}

impl ForestModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ForestFile {
            format: FORMAT_TAG.into(),
            version: FORMAT_VERSION,
            model: self.clone(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: ForestFile = serde_json::from_str(s)?;
        if f.format != FORMAT_TAG || f.version != FORMAT_VERSION {
            return Err(Error::Format(format!("{} v{}", f.format, f.version)));
        }
        Ok(f.model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

impl Predictor for ForestModel {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.input_dim {
            return Err(Error::shape(self.input_dim, x.len()));
        }
        Ok(self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64)
    }
}

/// Bagged CART regression: tree `t` draws its bootstrap and feature subsets
/// from stream `t` of the seed.
pub fn fit_forest(train: &Dataset, cfg: &ForestConfig) -> Result<ForestModel> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.n_trees == 0 || cfg.min_leaf == 0 {
        return Err(Error::config("forest", "n_trees and min_leaf must be positive"));
    }
    let n = train.len();
    if n < 2 * cfg.min_leaf {
        return Err(Error::TooFewSamples {
            needed: 2 * cfg.min_leaf,
            got: n,
        });
    }
    let d = train.dim();
    let mtry = ((d as f64).sqrt().ceil() as usize).clamp(1, d);
    let trees = (0..cfg.n_trees)
        .map(|t| {
            let mut rng = stream_rng(cfg.seed, t as u64);
            let mut idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let mut builder = Builder {
                ds: train,
                cfg,
                mtry,
                rng,
                nodes: Vec::new(),
            };
            builder.grow(&mut idx, 0);
            Tree { nodes: builder.nodes }
        })
        .collect();
    Ok(ForestModel {
        config: *cfg,
        input_dim: d,
        trees,
    })
}

struct Builder<'a, R> {
    ds: &'a Dataset,
    cfg: &'a ForestConfig,
    mtry: usize,
    rng: R,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl<R: Rng> Builder<'_, R> {
    fn grow(&mut self, idx: &mut [usize], depth: usize) -> usize {
        let labels = self.ds.labels();
        let m = idx.len();
        let sum: f64 = idx.iter().map(|&i| labels[i]).sum();
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf { value: sum / m as f64 });
        if depth >= self.cfg.max_depth || m < 2 * self.cfg.min_leaf {
            return at;
        }
        let Some(best) = self.best_split(idx, sum) else {
            return at;
        };
        // partition in place: left block first
        let mut k = 0;
        for j in 0..m {
            if self.ds.row(idx[j])[best.feature] <= best.threshold {
                idx.swap(j, k);
                k += 1;
            }
        }
        let (l, r) = idx.split_at_mut(k);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[at] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        at
    }

    fn best_split(&mut self, idx: &[usize], total: f64) -> Option<BestSplit> {
        let labels = self.ds.labels();
        let m = idx.len();
        let min_leaf = self.cfg.min_leaf;
        // maximizing sum_l^2/n_l + sum_r^2/n_r is maximizing variance reduction
        let parent = total * total / m as f64;
        let mut best: Option<BestSplit> = None;
        let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(m);
        for feature in sample(&mut self.rng, self.ds.dim(), self.mtry) {
            pairs.clear();
            pairs.extend(idx.iter().map(|&i| (self.ds.row(i)[feature], labels[i])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = 0.0;
            for k in 1..m {
                left += pairs[k - 1].1;
                if k < min_leaf || m - k < min_leaf || pairs[k - 1].0 == pairs[k].0 {
                    continue;
                }
                let right = total - left;
                let score = left * left / k as f64 + right * right / (m - k) as f64;
                if score > parent * (1.0 + 1e-12) + 1e-12 && best.as_ref().is_none_or(|b| score > b.score) {
                    let (lo, hi) = (pairs[k - 1].0, pairs[k].0);
                    let mid = lo + (hi - lo) / 2.0;
                    best = Some(BestSplit {
                        feature,
                        // the midpoint can round up to `hi` for adjacent floats
                        threshold: if mid < hi { mid } else { lo },
                        score,
                    });
                }
            }
        }
        best
    }
}
