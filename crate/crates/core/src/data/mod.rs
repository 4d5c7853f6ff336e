//! Datasets: synthetic generators, CSV ingestion, PCA, label scaling and
//! seeded splitting.

mod csv_io;
mod normalize;
mod pca;
mod split;
mod synth;

pub use csv_io::{load_csv, read_meta, write_csv, write_meta};
pub use normalize::{normalize_labels, LabelScaling, LabelTransform};
pub use pca::{pca_reduce, Pca, PcaResult};
pub use split::{split, split_indices};
pub use synth::{gen_synth, SynthKind, SynthSpec};

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Provenance of a synthetic dataset, kept for oracle predictors and checks.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthMeta {
    pub kind: SynthKind,
    pub seed: u64,
    /// True regression coefficients for `[1, x1, x1^2]` (empty for the toy model).
    pub w: Vec<f64>,
    /// Noise multiplier of the toy model.
    pub xi: f64,
    /// Deterministic offset added to the mean.
    pub offset: f64,
}

/// Feature matrix and labels; row counts agree and every value is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<f64>,
    meta: Option<SynthMeta>,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Vec<f64>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::shape(format!("{} labels", features.nrows()), labels.len()));
        }
        if let Some(v) = features.iter().chain(&labels).find(|v| !v.is_finite()) {
            return Err(Error::InvalidScore(*v));
        }
        // rows must be contiguous slices for the per-sample transform API
        let features = if features.is_standard_layout() {
            features
        } else {
            features.as_standard_layout().into_owned()
        };
        Ok(Self {
            features,
            labels,
            meta: None,
        })
    }

    pub fn with_meta(mut self, meta: SynthMeta) -> Self {
        self.meta = Some(meta);
        self
    }

    pub fn meta(&self) -> Option<&SynthMeta> {
        self.meta.as_ref()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.features
            .row(i)
            .to_slice()
            .expect("standard layout rows are contiguous")
    }

    /// Rows at `indices`, in that order; metadata is kept.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            meta: self.meta.clone(),
        }
    }

    pub(crate) fn replace_features(&self, features: Array2<f64>) -> Dataset {
        Dataset {
            features,
            labels: self.labels.clone(),
            meta: self.meta.clone(),
        }
    }

    pub(crate) fn replace_labels(&self, labels: Vec<f64>) -> Dataset {
        Dataset {
            features: self.features.clone(),
            labels,
            meta: self.meta.clone(),
        }
    }
}
