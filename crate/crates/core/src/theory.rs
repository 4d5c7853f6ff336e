//! Executable checks of the validity results on constructions whose answers
//! are known: exact rank enumeration, bin-wise coverage, a ranking-change
//! witness, and the coverage-gap bound for perturbed flows.

use std::f64::consts::{PI, SQRT_2};
use std::fmt::Write as _;

use ndarray::Array2;
use num_rational::Ratio;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::{erf, erf_inv};

use crate::cp::{calibrate, check_alpha, finite_sample_level, ratio_to_f64, sample_quantile, ScoreTransform};
use crate::error::{Error, Result};
use crate::localizer::CubicParams;
use crate::rng::stream_rng;
use crate::transforms::{ConformityTransform, Family, Localizer};

/// Probability that the test score ranks at or below the calibrated quantile
/// when its rank among `n + 1` exchangeable scores is uniform.
///
/// Enumerates every rank of the test score among the values `1..=n+1` and
/// takes the quantile as the smallest calibration value `q` with
/// `#{c <= q} >= (n + 1)(1 - alpha)`, compared exactly in rationals.
pub fn enumerate_coverage(n: usize, alpha: f64) -> Result<Ratio<u64>> {
    check_alpha(alpha)?;
    if n == 0 {
        return Err(Error::EmptyScores);
    }
    let a = Ratio::<i64>::approximate_float(alpha).ok_or(Error::InvalidAlpha(alpha))?;
    let (num, den) = (*a.numer(), *a.denom());
    let total = n as i64 + 1;
    let mut covered = 0u64;
    for test in 1..=total {
        let calib: Vec<i64> = (1..=total).filter(|&v| v != test).collect();
        // None: no calibration value reaches the level, the interval is unbounded
        let q = calib
            .iter()
            .copied()
            .find(|&q| calib.iter().filter(|&&c| c <= q).count() as i64 * den >= total * (den - num));
        if q.is_none_or(|q| test <= q) {
            covered += 1;
        }
    }
    Ok(Ratio::new_raw(covered, total as u64))
}

/// `ceil((n + 1)(1 - alpha)) / (n + 1)` in exact arithmetic, without the
/// `n* <= n` restriction of [`finite_sample_level`].
pub fn rank_formula_level(n: usize, alpha: f64) -> Result<Ratio<u64>> {
    check_alpha(alpha)?;
    let a = Ratio::<i64>::approximate_float(alpha).ok_or(Error::InvalidAlpha(alpha))?;
    let total = n as i64 + 1;
    let n_star = (Ratio::from_integer(total) * (Ratio::from_integer(1) - a)).ceil().to_integer();
    Ok(Ratio::new_raw(n_star as u64, total as u64))
}

/// Closed-form flow for residuals `A | X ~ |N(0, sigma(X)^2)|` with
/// `sigma(x) = 1` below 0.5 and `xi` above: the half-normal CDF of `A / sigma`,
/// optionally followed by the standard normal quantile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticToyFlow {
    pub xi: f64,
    pub normal_target: bool,
}

impl AnalyticToyFlow {
    pub fn sigma(&self, x: f64) -> f64 {
        if x < 0.5 {
            1.0
        } else {
            self.xi
        }
    }
}

fn std_normal() -> Normal {
    Normal::standard()
}

impl ScoreTransform for AnalyticToyFlow {
    fn eval(&self, a: f64, x: &[f64]) -> Result<f64> {
        let [x] = x else { return Err(Error::shape(1, x.len())) };
        if !(a.is_finite() && a >= 0.0) {
            return Err(Error::InvalidScore(a));
        }
        let u = erf(a / (self.sigma(*x) * SQRT_2));
        Ok(if self.normal_target { std_normal().inverse_cdf(u) } else { u })
    }

    fn invert(&self, b: f64, x: &[f64]) -> Result<f64> {
        let [x] = x else { return Err(Error::shape(1, x.len())) };
        let u = if self.normal_target { std_normal().cdf(b) } else { b };
        if !(0.0..1.0).contains(&u) {
            return Err(Error::OutOfCodomain {
                family: "analytic",
                value: b,
            });
        }
        Ok(self.sigma(*x) * SQRT_2 * erf_inv(u))
    }
}

/// Residual model used by the bin-wise checks: `X ~ U[0, 1]`,
/// `Y = sigma(X) E` with `E ~ N(0, 1)` and a zero point predictor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel {
    Homoscedastic,
    /// Standard deviation 1 below 0.5 and `xi` above.
    Step { xi: f64 },
}

impl NoiseModel {
    pub fn sigma(&self, x: f64) -> f64 {
        match *self {
            NoiseModel::Homoscedastic => 1.0,
            NoiseModel::Step { xi } => {
                if x < 0.5 {
                    1.0
                } else {
                    xi
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinCheckConfig {
    pub noise: NoiseModel,
    pub n_calib: usize,
    pub alpha: f64,
    pub n_bins: usize,
    pub trials: usize,
    pub seed: u64,
}

impl Default for BinCheckConfig {
    fn default() -> Self {
        Self {
            noise: NoiseModel::Homoscedastic,
            n_calib: 200,
            alpha: 0.1,
            n_bins: 10,
            trials: 2000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinCheckReport {
    pub level: Ratio<u64>,
    /// Coverage of the test point drawn in each bin, over trials.
    pub coverage: Vec<f64>,
    /// Binomial standard error at the nominal level.
    pub se: f64,
    pub trials: usize,
}

impl BinCheckReport {
    pub fn within(&self, bin: usize) -> bool {
        (self.coverage[bin] - ratio_to_f64(&self.level)).abs() <= 3.0 * self.se
    }

    pub fn all_within(&self) -> bool {
        (0..self.coverage.len()).all(|b| self.within(b))
    }
}

/// Bin-wise coverage of split CP: every trial calibrates `transform` on a fresh
/// calibration set and tests one point drawn uniformly inside each X-bin.
pub fn bin_coverage<T: ScoreTransform>(transform: &T, cfg: &BinCheckConfig) -> Result<BinCheckReport> {
    check_alpha(cfg.alpha)?;
    if cfg.n_bins == 0 || cfg.trials == 0 {
        return Err(Error::config("bins", "n_bins and trials must be positive"));
    }
    let level = finite_sample_level(cfg.n_calib, cfg.alpha)?;
    let mut hits = vec![0usize; cfg.n_bins];
    let f = vec![0.0; cfg.n_calib];
    for trial in 0..cfg.trials {
        let mut rng = stream_rng(cfg.seed, trial as u64);
        let xs: Vec<f64> = (0..cfg.n_calib).map(|_| rng.random::<f64>()).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|&x| {
                let e: f64 = StandardNormal.sample(&mut rng);
                cfg.noise.sigma(x) * e
            })
            .collect();
        let feats = Array2::from_shape_vec((cfg.n_calib, 1), xs).expect("n x 1");
        let cp = calibrate(transform, &f, &ys, feats.view(), cfg.alpha)?;
        for (b, hit) in hits.iter_mut().enumerate() {
            let x = (b as f64 + rng.random::<f64>()) / cfg.n_bins as f64;
            let e: f64 = StandardNormal.sample(&mut rng);
            let y = cfg.noise.sigma(x) * e;
            if cp.predict_interval(0.0, &[x])?.contains(y) {
                *hit += 1;
            }
        }
    }
    let p = ratio_to_f64(&level);
    Ok(BinCheckReport {
        level,
        coverage: hits.iter().map(|&h| h as f64 / cfg.trials as f64).collect(),
        se: (p * (1.0 - p) / cfg.trials as f64).sqrt(),
        trials: cfg.trials,
    })
}

/// Bin-wise coverage of the baseline score under `cfg.noise`; every bin is
/// expected within tolerance when the residual is independent of X.
pub fn check_factorization_equivalence(cfg: &BinCheckConfig) -> Result<BinCheckReport> {
    bin_coverage(&ConformityTransform::baseline(), cfg)
}

/// Small calibration set on which the residual order and the order of the
/// ER-transformed scores disagree.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingWitness {
    pub features: Vec<f64>,
    pub residuals: Vec<f64>,
    pub alpha: f64,
    pub test_x: f64,
    pub transform: ConformityTransform,
    pub order_a: Vec<usize>,
    pub order_b: Vec<usize>,
    pub q_a: f64,
    pub q_b: f64,
    pub size_a: f64,
    pub size_b: f64,
}

impl RankingWitness {
    pub fn orders_differ(&self) -> bool {
        self.order_a != self.order_b
    }

    pub fn sizes_differ(&self) -> bool {
        (self.size_a - self.size_b).abs() > 1e-9
    }
}

pub const WITNESS_X: [f64; 3] = [1.0, 10.0, 3.0];
pub const WITNESS_A: [f64; 3] = [2.0, 5.0, 0.9];

/// Baseline and ER intervals on the fixed three-point calibration set with
/// `g(x) = t1 x + t2 x^2 + t3 x^3`.
pub fn ranking_witness(theta: [f64; 3], features: &[f64], residuals: &[f64]) -> Result<RankingWitness> {
    let alpha = 0.5;
    let test_x = 1.0;
    let transform = ConformityTransform::new(Family::Er, 1e-3, 1, Localizer::Cubic(CubicParams::new(theta)))?;
    let b: Vec<f64> = features
        .iter()
        .zip(residuals)
        .map(|(&x, &a)| transform.eval(a, &[x]))
        .collect::<Result<_>>()?;
    let order = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        idx
    };
    let q_a = sample_quantile(residuals, alpha)?;
    let q_b = sample_quantile(&b, alpha)?;
    Ok(RankingWitness {
        features: features.to_vec(),
        residuals: residuals.to_vec(),
        alpha,
        test_x,
        order_a: order(residuals),
        order_b: order(&b),
        q_a,
        q_b,
        size_a: 2.0 * q_a,
        size_b: 2.0 * transform.invert(q_b, &[test_x])?,
        transform,
    })
}

/// Witness with `g(x) = x`: residual 2 at `g = 1` outranks residual 5 at
/// `g = 10` after rescaling, and the interval at `x = 1` shrinks from 4 to
/// about 1.
pub fn construct_ranking_change() -> Result<RankingWitness> {
    ranking_witness([1.0, 0.0, 0.0], &WITNESS_X, &WITNESS_A)
}

/// `b_hat = (1 - eps) b + eps delta` for the construction
/// `X ~ U[0, 1]`, `A | X ~ U[0, sigma(X)]`, `sigma(x) = 1 + x`, exact flow
/// `b = A / sigma(X)` with uniform target, and
/// `delta(a, x) = c tanh(k a) cos(2 pi x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbedFlow {
    pub epsilon: f64,
    pub c: f64,
    pub k: f64,
}

impl PerturbedFlow {
    pub fn new(epsilon: f64) -> Result<Self> {
        let pf = Self { epsilon, c: 0.5, k: 2.0 };
        pf.check_monotone()?;
        Ok(pf)
    }

    pub fn sigma(x: f64) -> f64 {
        1.0 + x
    }

    pub fn exact(a: f64, x: f64) -> f64 {
        a / Self::sigma(x)
    }

    pub fn delta(&self, a: f64, x: f64) -> f64 {
        self.c * (self.k * a).tanh() * (2.0 * PI * x).cos()
    }

    fn delta_slope(&self, a: f64, x: f64) -> f64 {
        let t = (self.k * a).tanh();
        self.c * self.k * (1.0 - t * t) * (2.0 * PI * x).cos()
    }

    pub fn eval(&self, a: f64, x: f64) -> f64 {
        (1.0 - self.epsilon) * Self::exact(a, x) + self.epsilon * self.delta(a, x)
    }

    pub fn slope(&self, a: f64, x: f64) -> f64 {
        (1.0 - self.epsilon) / Self::sigma(x) + self.epsilon * self.delta_slope(a, x)
    }

    /// Strictly increasing in `a` on a 201 x 201 grid of `[0, 2] x [0, 1]`.
    pub fn check_monotone(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(Error::config("epsilon", "must lie in [0, 1)"));
        }
        for i in 0..=200 {
            let a = 2.0 * i as f64 / 200.0;
            for j in 0..=200 {
                let x = j as f64 / 200.0;
                let slope = self.slope(a, x);
                if !(slope > 0.0) {
                    return Err(Error::MonotonicityViolated { a, x, slope });
                }
            }
        }
        Ok(())
    }

    /// Solves `b_hat(a, x) = b` for `a >= 0` by bisection.
    pub fn invert(&self, b: f64, x: f64) -> Result<f64> {
        if !(b >= 0.0 && b.is_finite()) {
            return Err(Error::OutOfCodomain {
                family: "perturbed",
                value: b,
            });
        }
        let mut hi = Self::sigma(x);
        while self.eval(hi, x) < b {
            hi *= 2.0;
            if hi > 1e12 {
                return Err(Error::NonFiniteRadius(hi));
            }
        }
        let mut lo = 0.0;
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if self.eval(mid, x) < b {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi.max(1.0) {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Lipschitz constant of `delta` in `a`: the largest `|d delta / d a|` on
    /// a grid containing `a = 0`, `x = 0`.
    pub fn lipschitz_delta(&self) -> f64 {
        let mut best = 0.0f64;
        for i in 0..=400 {
            for j in 0..=100 {
                best = best.max(self.delta_slope(2.0 * i as f64 / 400.0, j as f64 / 100.0).abs());
            }
        }
        best
    }

    /// Lipschitz constant of `b^{-1}(beta, x) = beta sigma(x)`: `sup sigma`.
    pub fn lipschitz_binv() -> f64 {
        (0..=100).map(|j| Self::sigma(j as f64 / 100.0)).fold(0.0, f64::max)
    }

    /// Density of `X ~ U[0, 1]`.
    pub const SUP_DENSITY_X: f64 = 1.0;

    pub fn bound(&self) -> f64 {
        2.0 * self.epsilon * Self::SUP_DENSITY_X * self.lipschitz_delta() * Self::lipschitz_binv()
    }
}

impl ScoreTransform for PerturbedFlow {
    fn eval(&self, a: f64, x: &[f64]) -> Result<f64> {
        let [x] = x else { return Err(Error::shape(1, x.len())) };
        Ok(PerturbedFlow::eval(self, a, *x))
    }

    fn invert(&self, b: f64, x: &[f64]) -> Result<f64> {
        let [x] = x else { return Err(Error::shape(1, x.len())) };
        PerturbedFlow::invert(self, b, *x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapConfig {
    pub n_calib: usize,
    pub alpha: f64,
    pub trials: usize,
    /// Test inputs at which conditional coverage is evaluated.
    pub grid: Vec<f64>,
    pub seed: u64,
}

impl Default for GapConfig {
    fn default() -> Self {
        Self {
            n_calib: 49,
            alpha: 0.1,
            trials: 20_000,
            grid: (0..=20).map(|j| j as f64 / 20.0).collect(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapReport {
    pub epsilon: f64,
    pub level: Ratio<u64>,
    /// Largest `level - coverage(x)` over the grid.
    pub gap: f64,
    /// Grid point attaining `gap`.
    pub worst_x: f64,
    /// Monte-Carlo standard error of the coverage at `worst_x`.
    pub se: f64,
    pub bound: f64,
    /// `level - coverage` averaged over X, for reference.
    pub marginal_gap: f64,
}

impl GapReport {
    pub fn passes(&self) -> bool {
        self.gap <= self.bound + 3.0 * self.se
    }
}

/// Conditional coverage gap of intervals calibrated with `pf` against the
/// bound `2 eps sup p_X L_delta L_binv`.
///
/// Coverage at a test input is `P(A <= r | x) = min(r / sigma(x), 1)` for
/// radius `r`, so only calibration sets are simulated.
pub fn gap_vs_bound(pf: &PerturbedFlow, cfg: &GapConfig) -> Result<GapReport> {
    check_alpha(cfg.alpha)?;
    if cfg.grid.is_empty() || cfg.trials < 2 {
        return Err(Error::config("grid", "need grid points and at least 2 trials"));
    }
    pf.check_monotone()?;
    let level = finite_sample_level(cfg.n_calib, cfg.alpha)?;
    let g = cfg.grid.len();
    let mut sum = vec![0.0; g];
    let mut sum_sq = vec![0.0; g];
    let mut marginal = 0.0;
    let mut scores = vec![0.0; cfg.n_calib];
    for trial in 0..cfg.trials {
        let mut rng = stream_rng(cfg.seed, trial as u64);
        for s in scores.iter_mut() {
            let x: f64 = rng.random();
            let a = PerturbedFlow::sigma(x) * rng.random::<f64>();
            *s = pf.eval(a, x);
        }
        let q = sample_quantile(&scores, cfg.alpha)?;
        for (k, &x) in cfg.grid.iter().enumerate() {
            let cov = (pf.invert(q, x)? / PerturbedFlow::sigma(x)).min(1.0);
            sum[k] += cov;
            sum_sq[k] += cov * cov;
        }
        let x: f64 = rng.random();
        marginal += (pf.invert(q, x)? / PerturbedFlow::sigma(x)).min(1.0);
    }
    let n = cfg.trials as f64;
    let lvl = ratio_to_f64(&level);
    let (mut gap, mut worst) = (f64::NEG_INFINITY, 0);
    for k in 0..g {
        let d = lvl - sum[k] / n;
        if d > gap {
            gap = d;
            worst = k;
        }
    }
    let mean = sum[worst] / n;
    let var = (sum_sq[worst] / n - mean * mean).max(0.0) * n / (n - 1.0);
    Ok(GapReport {
        epsilon: pf.epsilon,
        level,
        gap,
        worst_x: cfg.grid[worst],
        se: (var / n).sqrt(),
        bound: pf.bound(),
        marginal_gap: lvl - marginal / n,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryConfig {
    pub exact_alphas: Vec<f64>,
    pub exact_max_n: usize,
    pub bins: BinCheckConfig,
    pub toy_xi: f64,
    pub epsilons: Vec<f64>,
    pub gap: GapConfig,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            exact_alphas: vec![0.05, 0.1, 0.35, 0.5],
            exact_max_n: 8,
            bins: BinCheckConfig::default(),
            toy_xi: 5.0,
            epsilons: vec![0.0, 0.005, 0.01, 0.02],
            gap: GapConfig::default(),
        }
    }
}

impl TheoryConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.bins.seed = seed;
        self.gap.seed = seed;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryReport {
    pub text: String,
    pub passed: bool,
}

/// Runs every check and renders a plain-text report.
pub fn run_checks(cfg: &TheoryConfig) -> Result<TheoryReport> {
    let mut out = String::new();
    let mut passed = true;
    let mut verdict = |ok: bool, out: &mut String, name: &str| {
        passed &= ok;
        writeln!(out, "{} {name}", if ok { "PASS" } else { "FAIL" }).unwrap();
    };

    writeln!(out, "# exact coverage by rank enumeration").unwrap();
    writeln!(out, "n,alpha,enumerated,finite_sample_level").unwrap();
    let mut ok = true;
    for n in 1..=cfg.exact_max_n {
        for &alpha in &cfg.exact_alphas {
            let e = enumerate_coverage(n, alpha)?;
            let l = rank_formula_level(n, alpha)?;
            ok &= e.numer() == l.numer() && e.denom() == l.denom();
            writeln!(out, "{n},{alpha},{e},{l}").unwrap();
        }
    }
    verdict(ok, &mut out, "enumeration equals finite-sample level");

    let bin_section = |title: &str, report: &BinCheckReport, expect_within: bool, out: &mut String| {
        writeln!(out, "\n# {title}").unwrap();
        writeln!(out, "bin,coverage,level,se,within").unwrap();
        for (b, c) in report.coverage.iter().enumerate() {
            writeln!(out, "{b},{c:.4},{:.4},{:.4},{}", ratio_to_f64(&report.level), report.se, report.within(b)).unwrap();
        }
        report.all_within() == expect_within
    };
    let homo = check_factorization_equivalence(&BinCheckConfig {
        noise: NoiseModel::Homoscedastic,
        ..cfg.bins.clone()
    })?;
    let ok = bin_section("bin-wise coverage, baseline score, homoscedastic noise", &homo, true, &mut out);
    verdict(ok, &mut out, "homoscedastic bins within 3 SE");
    let step = NoiseModel::Step { xi: cfg.toy_xi };
    let toy = check_factorization_equivalence(&BinCheckConfig {
        noise: step,
        ..cfg.bins.clone()
    })?;
    let ok = bin_section("bin-wise coverage, baseline score, step noise (control)", &toy, false, &mut out);
    verdict(ok, &mut out, "step-noise control leaves a bin outside 3 SE");
    for normal_target in [false, true] {
        let flow = AnalyticToyFlow {
            xi: cfg.toy_xi,
            normal_target,
        };
        let r = bin_coverage(
            &flow,
            &BinCheckConfig {
                noise: step,
                ..cfg.bins.clone()
            },
        )?;
        let target = if normal_target { "normal" } else { "uniform" };
        let ok = bin_section(&format!("bin-wise coverage, exact flow to {target}, step noise"), &r, true, &mut out);
        verdict(ok, &mut out, &format!("exact flow ({target} target) bins within 3 SE"));
    }

    let w = construct_ranking_change()?;
    let control = ranking_witness([0.0; 3], &WITNESS_X, &WITNESS_A)?;
    writeln!(out, "\n# ranking change").unwrap();
    writeln!(out, "x={:?} a={:?} alpha={}", w.features, w.residuals, w.alpha).unwrap();
    writeln!(out, "order_a={:?} order_b={:?}", w.order_a, w.order_b).unwrap();
    writeln!(out, "q_a={} q_b={} |C_A|={} |C_B|={}", w.q_a, w.q_b, w.size_a, w.size_b).unwrap();
    writeln!(out, "control g=0: |C_A|={} |C_B|={}", control.size_a, control.size_b).unwrap();
    let ok = w.orders_differ() && w.sizes_differ() && (control.size_a - control.size_b).abs() <= 1e-9;
    verdict(ok, &mut out, "ranking change alters the interval size");

    writeln!(out, "\n# perturbed-flow coverage gap").unwrap();
    writeln!(out, "epsilon,level,gap,worst_x,se,bound,marginal_gap").unwrap();
    let mut ok = true;
    for &eps in &cfg.epsilons {
        let pf = PerturbedFlow::new(eps)?;
        let r = gap_vs_bound(&pf, &cfg.gap)?;
        writeln!(
            out,
            "{eps},{},{:.5},{},{:.5},{:.5},{:.5}",
            r.level, r.gap, r.worst_x, r.se, r.bound, r.marginal_gap
        )
        .unwrap();
        ok &= r.passes();
    }
    verdict(ok, &mut out, "gap within bound + 3 SE for every epsilon");

    Ok(TheoryReport { text: out, passed })
}
