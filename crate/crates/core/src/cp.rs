//! Sample quantiles, prediction intervals and the split-conformal pipeline.
//!
//! A [`CalibratedPredictor`] holds a conformity transform `b(A, x)` and the
//! threshold `Q_B`, the `n*`-th smallest transformed calibration score with
//! `n* = ceil((N + 1)(1 - alpha))`. The interval at a test input is obtained by
//! mapping the threshold back to label space, `radius = b^{-1}(Q_B, x)`.

use ndarray::ArrayView2;
use num_rational::Ratio;

use crate::error::{Error, Result};

/// A map `b(A, x)` from absolute residuals to transformed conformity scores,
/// strictly increasing in `A` for every `x`.
pub trait ScoreTransform {
    fn eval(&self, a: f64, x: &[f64]) -> Result<f64>;

    /// Inverse in the score argument: `eval(invert(b, x), x) == b`.
    fn invert(&self, b: f64, x: &[f64]) -> Result<f64>;

    fn eval_batch(&self, a: &[f64], xs: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        if a.len() != xs.nrows() {
            return Err(Error::shape(format!("{} rows", a.len()), xs.nrows()));
        }
        a.iter()
            .enumerate()
            .map(|(i, &ai)| with_row(xs, i, |x| self.eval(ai, x)))
            .collect()
    }

    fn invert_batch(&self, b: f64, xs: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        (0..xs.nrows())
            .map(|i| with_row(xs, i, |x| self.invert(b, x)))
            .collect()
    }
}

impl<T: ScoreTransform + ?Sized> ScoreTransform for &T {
    fn eval(&self, a: f64, x: &[f64]) -> Result<f64> {
        (**self).eval(a, x)
    }
    fn invert(&self, b: f64, x: &[f64]) -> Result<f64> {
        (**self).invert(b, x)
    }
    fn eval_batch(&self, a: &[f64], xs: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        (**self).eval_batch(a, xs)
    }
    fn invert_batch(&self, b: f64, xs: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        (**self).invert_batch(b, xs)
    }
}

/// Runs `f` on row `i` of `xs` as a contiguous slice.
pub(crate) fn with_row<R>(xs: ArrayView2<'_, f64>, i: usize, f: impl FnOnce(&[f64]) -> R) -> R {
    let row = xs.row(i);
    match row.as_slice() {
        Some(s) => f(s),
        None => f(&row.to_vec()),
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<f64> {
    if alpha.is_finite() && alpha > 0.0 && alpha < 1.0 {
        Ok(alpha)
    } else {
        Err(Error::InvalidAlpha(alpha))
    }
}

/// `n* = ceil((n + 1)(1 - alpha))`.
///
/// Products that land within floating-point noise of an integer are treated as
/// that integer, so e.g. `n = 19, alpha = 0.35` gives 13 rather than 14.
pub fn quantile_rank(n: usize, alpha: f64) -> Result<usize> {
    let alpha = check_alpha(alpha)?;
    let v = (n as f64 + 1.0) * (1.0 - alpha);
    let nearest = v.round();
    let rank = if (v - nearest).abs() <= 1e-9 * v.max(1.0) {
        nearest
    } else {
        v.ceil()
    };
    Ok(rank as usize)
}

/// The `n*`-th smallest score, counted with multiplicity.
pub fn sample_quantile(scores: &[f64], alpha: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptyScores);
    }
    let rank = quantile_rank(scores.len(), alpha)?;
    if rank > scores.len() {
        return Err(Error::QuantileOutOfRange {
            n: scores.len(),
            rank,
        });
    }
    if rank == 0 {
        // alpha close to 1: every label is rejected but the order statistic is still the minimum
        return Ok(scores.iter().copied().fold(f64::INFINITY, f64::min));
    }
    // Selection instead of a full sort; the selected value is the same.
    let mut work = scores.to_vec();
    let (_, nth, _) = work.select_nth_unstable_by(rank - 1, f64::total_cmp);
    Ok(*nth)
}

/// Exact coverage of the split-conformal interval, `n* / (n + 1)`, unreduced.
pub fn finite_sample_level(n: usize, alpha: f64) -> Result<Ratio<u64>> {
    let rank = quantile_rank(n, alpha)?;
    if rank > n {
        return Err(Error::QuantileOutOfRange { n, rank });
    }
    Ok(Ratio::new_raw(rank as u64, n as u64 + 1))
}

pub fn ratio_to_f64(r: &Ratio<u64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Symmetric interval `[center - radius, center + radius]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionInterval {
    pub center: f64,
    pub radius: f64,
}

impl PredictionInterval {
    pub fn lower(&self) -> f64 {
        self.center - self.radius
    }

    pub fn upper(&self) -> f64 {
        self.center + self.radius
    }

    pub fn size(&self) -> f64 {
        2.0 * self.radius
    }

    /// Boundary points count as covered.
    pub fn contains(&self, y: f64) -> bool {
        (y - self.center).abs() <= self.radius
    }
}

/// A conformity transform together with its calibrated threshold.
#[derive(Debug, Clone)]
pub struct CalibratedPredictor<T> {
    transform: T,
    threshold: f64,
    alpha: f64,
    n_calib: usize,
}

impl<T: ScoreTransform> CalibratedPredictor<T> {
    pub fn transform(&self) -> &T {
        &self.transform
    }

    /// `Q_B`, in the transformed score space.
    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn n_calib(&self) -> usize {
        self.n_calib
    }

    pub fn level(&self) -> Ratio<u64> {
        finite_sample_level(self.n_calib, self.alpha).expect("validated at calibration")
    }

    pub fn predict_interval(&self, f_x: f64, x: &[f64]) -> Result<PredictionInterval> {
        let radius = self.transform.invert(self.threshold, x)?;
        interval(f_x, radius)
    }

    pub fn predict_intervals(
        &self,
        f_x: &[f64],
        xs: ArrayView2<'_, f64>,
    ) -> Result<Vec<PredictionInterval>> {
        if f_x.len() != xs.nrows() {
            return Err(Error::shape(format!("{} rows", f_x.len()), xs.nrows()));
        }
        let radii = self.transform.invert_batch(self.threshold, xs)?;
        f_x.iter()
            .zip(radii)
            .map(|(&c, r)| interval(c, r))
            .collect()
    }
}

fn interval(center: f64, radius: f64) -> Result<PredictionInterval> {
    if !radius.is_finite() || radius < 0.0 {
        return Err(Error::NonFiniteRadius(radius));
    }
    Ok(PredictionInterval { center, radius })
}

/// Calibrates `transform` on held-out data.
///
/// Scores are `A_n = |y_n - f(x_n)|`, transformed to `B_n = b(A_n, x_n)`; the
/// threshold is the sample quantile of the `B_n`.
pub fn calibrate<T: ScoreTransform>(
    transform: T,
    f_predictions: &[f64],
    labels: &[f64],
    features: ArrayView2<'_, f64>,
    alpha: f64,
) -> Result<CalibratedPredictor<T>> {
    let n = labels.len();
    if f_predictions.len() != n || features.nrows() != n {
        return Err(Error::shape(
            format!("{n} predictions and feature rows"),
            format!("{} and {}", f_predictions.len(), features.nrows()),
        ));
    }
    check_alpha(alpha)?;
    let residuals: Vec<f64> = labels
        .iter()
        .zip(f_predictions)
        .map(|(y, f)| (y - f).abs())
        .collect();
    let scores = transform.eval_batch(&residuals, features)?;
    if let Some((index, &value)) = scores.iter().enumerate().find(|(_, b)| !b.is_finite()) {
        return Err(Error::NonFiniteScore { index, value });
    }
    let threshold = sample_quantile(&scores, alpha)?;
    Ok(CalibratedPredictor {
        transform,
        threshold,
        alpha,
        n_calib: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use proptest::prelude::*;

    struct Identity;

    impl ScoreTransform for Identity {
        fn eval(&self, a: f64, _x: &[f64]) -> Result<f64> {
            Ok(a)
        }
        fn invert(&self, b: f64, _x: &[f64]) -> Result<f64> {
            Ok(b)
        }
    }

    #[test]
    fn quantile_of_hundred_distinct_scores() {
        let scores: Vec<f64> = (1..=100).rev().map(f64::from).collect();
        assert_eq!(quantile_rank(100, 0.05).unwrap(), 96);
        assert_eq!(sample_quantile(&scores, 0.05).unwrap(), 96.0);
    }

    #[test]
    fn quantile_small_cases() {
        assert_eq!(sample_quantile(&[7.0], 0.5).unwrap(), 7.0);
        assert_eq!(sample_quantile(&[0.1, 0.2, 0.3, 0.4], 0.2).unwrap(), 0.4);
    }

    #[test]
    fn quantile_counts_ties_with_multiplicity() {
        // n* = ceil(6 * 0.5) = 3
        assert_eq!(sample_quantile(&[1.0, 1.0, 1.0, 2.0, 2.0], 0.5).unwrap(), 1.0);
        assert_eq!(sample_quantile(&[2.0, 1.0, 2.0, 1.0, 2.0], 0.5).unwrap(), 2.0);
    }

    #[test]
    fn quantile_out_of_range_is_an_error() {
        let err = sample_quantile(&[1.0, 2.0, 3.0], 0.1).unwrap_err();
        assert!(matches!(err, Error::QuantileOutOfRange { n: 3, rank: 4 }));
        assert!(matches!(sample_quantile(&[], 0.1), Err(Error::EmptyScores)));
        assert!(matches!(sample_quantile(&[1.0], 1.5), Err(Error::InvalidAlpha(_))));
    }

    #[test]
    fn levels() {
        let l = finite_sample_level(100, 0.05).unwrap();
        assert_eq!((*l.numer(), *l.denom()), (96, 101));
        let l = finite_sample_level(19, 0.1).unwrap();
        assert_eq!((*l.numer(), *l.denom()), (18, 20));
        assert_eq!(l.to_string(), "18/20");
        let l = finite_sample_level(4, 0.5).unwrap();
        assert_eq!((*l.numer(), *l.denom()), (3, 5));
        assert_eq!(quantile_rank(19, 0.35).unwrap(), 13);
        assert!(finite_sample_level(5, 0.05).is_err());
    }

    #[test]
    fn calibrate_baseline_on_signed_residuals() {
        let residuals: Vec<f64> = (1..=100)
            .map(|k| if k % 2 == 0 { k as f64 } else { -(k as f64) })
            .collect();
        let preds = vec![0.5; 100];
        let labels: Vec<f64> = residuals.iter().map(|r| 0.5 + r).collect();
        let x = Array2::zeros((100, 1));
        let cp = calibrate(Identity, &preds, &labels, x.view(), 0.05).unwrap();
        assert!((cp.threshold() - 96.0).abs() < 1e-12);
        let pi = cp.predict_interval(2.0, &[0.0]).unwrap();
        assert_eq!(pi.center, 2.0);
        assert!((pi.radius - 96.0).abs() < 1e-12);
    }

    #[test]
    fn calibrate_degenerate_residuals() {
        let mut labels = vec![0.0; 9];
        labels[4] = 3.0;
        let preds = vec![0.0; 9];
        let x = Array2::zeros((9, 1));
        // alpha = 0.5: n* = 5 picks a zero; alpha = 0.1: n* = 9 picks the outlier
        let cp = calibrate(Identity, &preds, &labels, x.view(), 0.5).unwrap();
        assert_eq!(cp.threshold(), 0.0);
        let cp = calibrate(Identity, &preds, &labels, x.view(), 0.1).unwrap();
        assert_eq!(cp.threshold(), 3.0);
    }

    #[test]
    fn calibrate_rejects_non_finite_scores() {
        #[derive(Debug)]
        struct Blowup;
        impl ScoreTransform for Blowup {
            fn eval(&self, a: f64, _x: &[f64]) -> Result<f64> {
                Ok(if a > 1.0 { f64::NAN } else { a })
            }
            fn invert(&self, b: f64, _x: &[f64]) -> Result<f64> {
                Ok(b)
            }
        }
        let x = Array2::zeros((3, 1));
        let err = calibrate(Blowup, &[0.0; 3], &[0.5, 2.0, 0.1], x.view(), 0.5).unwrap_err();
        assert!(matches!(err, Error::NonFiniteScore { index: 1, .. }));
    }

    #[test]
    fn interval_geometry() {
        let pi = PredictionInterval { center: 1.0, radius: 0.5 };
        assert_eq!(pi.size(), 1.0);
        assert!(pi.contains(1.5) && pi.contains(0.5) && !pi.contains(1.6));
        assert!(interval(0.0, f64::INFINITY).is_err());
    }

    proptest! {
        #[test]
        fn calibration_is_permutation_invariant(
            scores in prop::collection::vec(0.0f64..100.0, 20..60),
            alpha in 0.1f64..0.6,
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            let n = scores.len();
            let x = Array2::zeros((n, 1));
            let zeros = vec![0.0; n];
            let a = calibrate(Identity, &zeros, &scores, x.view(), alpha).unwrap();
            let mut shuffled = scores.clone();
            shuffled.shuffle(&mut crate::rng::rng_from_seed(seed));
            let b = calibrate(Identity, &zeros, &shuffled, x.view(), alpha).unwrap();
            prop_assert_eq!(a.threshold(), b.threshold());
        }

        #[test]
        fn selection_matches_sorting(scores in prop::collection::vec(-1e3f64..1e3, 1..80), alpha in 0.01f64..0.99) {
            let rank = quantile_rank(scores.len(), alpha).unwrap();
            prop_assume!(rank <= scores.len() && rank >= 1);
            let mut sorted = scores.clone();
            sorted.sort_by(f64::total_cmp);
            prop_assert_eq!(sample_quantile(&scores, alpha).unwrap(), sorted[rank - 1]);
        }
    }
}
