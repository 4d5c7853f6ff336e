use super::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LabelScaling {
    #[default]
    MinMax,
    ZScore,
}

/// Affine map `y' = (y - shift) / scale` applied to the labels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelTransform {
    pub scaling: LabelScaling,
    pub shift: f64,
    pub scale: f64,
}

impl LabelTransform {
    /// Fits the map on `labels`. Min-max uses (min, max - min); z-score uses
    /// the mean and the population standard deviation.
    pub fn fit(labels: &[f64], scaling: LabelScaling) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::TooFewSamples {
                needed: 2,
                got: labels.len(),
            });
        }
        let (shift, scale) = match scaling {
            LabelScaling::MinMax => {
                let min = labels.iter().copied().fold(f64::INFINITY, f64::min);
                let max = labels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (min, max - min)
            }
            LabelScaling::ZScore => {
                let n = labels.len() as f64;
                let mean = labels.iter().sum::<f64>() / n;
                let var = labels.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
                (mean, var.sqrt())
            }
        };
        if !(scale > 0.0) {
            return Err(Error::DegenerateLabels(labels[0]));
        }
        Ok(Self { scaling, shift, scale })
    }

    pub fn apply(&self, y: f64) -> f64 {
        (y - self.shift) / self.scale
    }

    pub fn invert(&self, y: f64) -> f64 {
        y * self.scale + self.shift
    }

    /// Maps an interval size in normalized units back to label units.
    pub fn size_to_original(&self, size: f64) -> f64 {
        size * self.scale
    }

    pub fn apply_to(&self, ds: &Dataset) -> Dataset {
        ds.replace_labels(ds.labels().iter().map(|&y| self.apply(y)).collect())
    }
}

pub fn normalize_labels(ds: &Dataset, scaling: LabelScaling) -> Result<(Dataset, LabelTransform)> {
    let t = LabelTransform::fit(ds.labels(), scaling)?;
    Ok((t.apply_to(ds), t))
}
