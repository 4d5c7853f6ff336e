use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Axis};

use super::Dataset;
use crate::error::{Error, Result};

/// Relative eigenvalue cutoff below which a component counts as absent.
const RANK_TOL: f64 = 1e-12;

/// Fitted projection: rows of `components` are unit principal directions.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Array1<f64>,
    /// k x d projection matrix.
    pub components: Array2<f64>,
    /// All d covariance eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
}

pub struct PcaResult {
    pub dataset: Dataset,
    pub pca: Pca,
    /// `Some(Error::RankDeficient)` when zero rows were padded in.
    pub warning: Option<Error>,
}

impl Pca {
    pub fn fit(features: ndarray::ArrayView2<'_, f64>, k: usize) -> Result<(Self, Option<Error>)> {
        let (n, d) = features.dim();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        if k == 0 || k > d {
            return Err(Error::config("pca_k", format!("need 1 <= k <= {d}, got {k}")));
        }
        let mean = features.mean_axis(Axis(0)).expect("n > 0");
        let centered = &features - &mean;
        let denom = (n.max(2) - 1) as f64;
        let cov = centered.t().dot(&centered) / denom;
        let cov = DMatrix::from_fn(d, d, |i, j| 0.5 * (cov[[i, j]] + cov[[j, i]]));
        let eig = SymmetricEigen::new(cov);

        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let top = eigenvalues[0].max(0.0);
        let rank = eigenvalues.iter().filter(|&&l| l > RANK_TOL * top.max(f64::MIN_POSITIVE)).count();

        let mut components = Array2::zeros((k, d));
        for (r, &i) in order.iter().take(k.min(rank)).enumerate() {
            let v = eig.eigenvectors.column(i);
            // largest-magnitude entry made positive; first index wins ties
            let pivot = (0..d).fold(0, |best, j| if v[j].abs() > v[best].abs() { j } else { best });
            let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
            let norm = v.norm();
            for j in 0..d {
                components[[r, j]] = sign * v[j] / norm;
            }
        }
        let warning = (rank < k).then(|| {
            log::warn!("PCA: only {rank} positive eigenvalues for {k} components; padding with zeros");
            Error::RankDeficient { rank, requested: k }
        });
        Ok((
            Self {
                mean,
                components,
                eigenvalues,
            },
            warning,
        ))
    }

    pub fn transform(&self, features: ndarray::ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if features.ncols() != self.mean.len() {
            return Err(Error::shape(format!("{} columns", self.mean.len()), features.ncols()));
        }
        Ok((&features - &self.mean).dot(&self.components.t()))
    }

    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        Ok(ds.replace_features(self.transform(ds.features())?))
    }

    /// Sum of the top-k eigenvalues (clamped at zero).
    pub fn explained_variance(&self) -> f64 {
        self.eigenvalues
            .iter()
            .take(self.components.nrows())
            .map(|l| l.max(0.0))
            .sum()
    }
}

pub fn pca_reduce(ds: &Dataset, k: usize) -> Result<PcaResult> {
    let (pca, warning) = Pca::fit(ds.features(), k)?;
    Ok(PcaResult {
        dataset: pca.apply(ds)?,
        pca,
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rotated_plane() -> Array2<f64> {
        // points in a 2-d subspace of R^3
        let u = [0.6, 0.0, 0.8];
        let v = [0.0, 1.0, 0.0];
        Array2::from_shape_fn((40, 3), |(i, j)| {
            let a = (i as f64 * 0.37).sin() * 3.0;
            let b = (i as f64 * 1.13).cos();
            a * u[j] + b * v[j] + 1.5
        })
    }

    #[test]
    fn exact_subspace_reconstruction() {
        let x = rotated_plane();
        let (pca, warn) = Pca::fit(x.view(), 2).unwrap();
        assert!(warn.is_none());
        let z = pca.transform(x.view()).unwrap();
        let back = z.dot(&pca.components) + &pca.mean;
        for (a, b) in back.iter().zip(x.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
        let gram = pca.components.dot(&pca.components.t());
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((gram[[i, j]] - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rank_deficiency_pads() {
        let x = rotated_plane();
        let (pca, warn) = Pca::fit(x.view(), 3).unwrap();
        assert!(matches!(warn, Some(Error::RankDeficient { rank: 2, requested: 3 })));
        assert!(pca.components.row(2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sign_convention() {
        let x = rotated_plane();
        let (pca, _) = Pca::fit(x.view(), 2).unwrap();
        for row in pca.components.rows() {
            let big = row.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            assert!(big > 0.0);
        }
    }

    #[test]
    fn bad_k() {
        let x = rotated_plane();
        assert!(Pca::fit(x.view(), 0).is_err());
        assert!(Pca::fit(x.view(), 4).is_err());
    }
}
