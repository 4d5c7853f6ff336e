//! Split conformal prediction for regression with trainable, input-dependent
//! conformity transforms.
//!
//! The absolute residual `A = |y - f(x)|` of a fixed point predictor is mapped
//! through a transform `b(A, x)` that is strictly increasing in `A`. Calibrating
//! on the transformed scores and inverting at the test input yields intervals
//! that keep exact finite-sample marginal coverage while adapting their width
//! to `x`. Transforms are trained on a separate split, either by fitting the
//! residual magnitude (error reweighting) or by maximum likelihood of the
//! transformed scores under a fixed target density (normalizing flow).

pub mod cp;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod localizer;
pub mod regressor;
pub mod rng;
pub mod theory;
pub mod training;
pub mod transforms;

pub use cp::{calibrate, finite_sample_level, sample_quantile, CalibratedPredictor, PredictionInterval, ScoreTransform};
pub use data::Dataset;
pub use error::{Error, Result};
pub use transforms::{ConformityTransform, Family};
