//! Coverage, interval size and worst-slab coverage, aggregated over repeated splits.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, ArrayView2};
use num_rational::Ratio;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::cp::{ratio_to_f64, PredictionInterval};
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::transforms::Family;

pub fn covered_flags(intervals: &[PredictionInterval], labels: &[f64]) -> Result<Vec<bool>> {
    if intervals.len() != labels.len() {
        return Err(Error::shape(labels.len(), intervals.len()));
    }
    Ok(intervals.iter().zip(labels).map(|(iv, &y)| iv.contains(y)).collect())
}

/// Fraction of labels inside their interval; boundary points count as covered.
pub fn empirical_coverage(intervals: &[PredictionInterval], labels: &[f64]) -> Result<f64> {
    let flags = covered_flags(intervals, labels)?;
    if flags.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(flags.iter().filter(|&&c| c).count() as f64 / flags.len() as f64)
}

pub fn average_size(intervals: &[PredictionInterval]) -> Result<f64> {
    if intervals.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(intervals.iter().map(PredictionInterval::size).sum::<f64>() / intervals.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WscConfig {
    pub delta: f64,
    pub n_directions: usize,
    pub seed: u64,
}

impl Default for WscConfig {
    fn default() -> Self {
        Self {
            delta: 0.1,
            n_directions: 1000,
            seed: 0,
        }
    }
}

/// Worst-slab coverage: the smallest coverage over slabs `{a <= v.x <= b}`
/// holding at least `ceil(delta n)` samples, minimized over random unit
/// directions `v`. Direction `k` comes from stream `k` of the seed, so a
/// larger `n_directions` only adds directions.
pub fn wsc(features: ArrayView2<'_, f64>, covered: &[bool], cfg: &WscConfig) -> Result<f64> {
    let (n, d) = features.dim();
    if covered.len() != n {
        return Err(Error::shape(n, covered.len()));
    }
    if !(cfg.delta > 0.0 && cfg.delta < 1.0) {
        return Err(Error::config("wsc_delta", "must lie in (0, 1)"));
    }
    if cfg.n_directions == 0 {
        return Err(Error::config("wsc_directions", "must be at least 1"));
    }
    if cfg.delta * (n as f64) < 2.0 {
        return Err(Error::TooFewSamples {
            needed: (2.0 / cfg.delta).ceil() as usize,
            got: n,
        });
    }
    let min_len = ((cfg.delta * n as f64) - 1e-9).ceil() as usize;
    let mut best: Option<Window> = None;
    let mut order: Vec<usize> = (0..n).collect();
    let mut prefix = vec![0u32; n + 1];
    let mut proj = vec![0.0; n];
    for k in 0..cfg.n_directions {
        let v = unit_direction(d, cfg.seed, k as u64);
        for (p, row) in proj.iter_mut().zip(features.rows()) {
            *p = row.dot(&v);
        }
        order.sort_by(|&a, &b| proj[a].total_cmp(&proj[b]).then(a.cmp(&b)));
        for (j, &i) in order.iter().enumerate() {
            prefix[j + 1] = prefix[j] + covered[i] as u32;
        }
        if let Some(w) = min_mean_window(&prefix, min_len, best.map(|b| b.mean())) {
            best = Some(w);
        }
    }
    Ok(best.map(|w| w.mean()).expect("the full window always qualifies"))
}

fn unit_direction(d: usize, seed: u64, k: u64) -> Array1<f64> {
    let mut rng = stream_rng(seed, k);
    loop {
        let v: Array1<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.dot(&v).sqrt();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Window {
    count: u32,
    len: usize,
}

impl Window {
    fn mean(&self) -> f64 {
        self.count as f64 / self.len as f64
    }
}

/// Some window of length `>= m` with mean `<= t`, if one exists:
/// `P_j - t j <= max_{i <= j - m} (P_i - t i)`.
fn window_at_most(prefix: &[u32], m: usize, t: f64) -> Option<Window> {
    let n = prefix.len() - 1;
    let mut best_i = 0;
    let mut best_val = f64::NEG_INFINITY;
    for j in m..=n {
        let i = j - m;
        let vi = prefix[i] as f64 - t * i as f64;
        if vi > best_val {
            best_val = vi;
            best_i = i;
        }
        if prefix[j] as f64 - t * j as f64 <= best_val {
            return Some(Window {
                count: prefix[j] - prefix[best_i],
                len: j - best_i,
            });
        }
    }
    None
}

/// Minimum-mean window of length `>= m`, or `None` when none beats `below`.
///
/// Window means are fractions with denominator `<= n`, so two distinct means
/// differ by more than `1 / n^2`; bisection to that width pins the minimum.
fn min_mean_window(prefix: &[u32], m: usize, below: Option<f64>) -> Option<Window> {
    let n = prefix.len() - 1;
    let mut hi = match below {
        // strictly below: the largest fraction under b is at most b - 1/n^2
        Some(b) => window_at_most(prefix, m, b - 0.5 / (n as f64 * n as f64))?,
        None => Window {
            count: prefix[n],
            len: n,
        },
    };
    let mut lo = -1.0;
    let gap = 0.5 / (n as f64 * n as f64);
    while hi.mean() - lo > gap {
        let mid = 0.5 * (lo + hi.mean());
        match window_at_most(prefix, m, mid) {
            Some(w) if w.mean() < hi.mean() => hi = w,
            Some(_) => break,
            None => lo = mid,
        }
    }
    Some(hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SplitMetrics {
    pub split: usize,
    pub covered: usize,
    pub n_test: usize,
    pub coverage: f64,
    pub avg_size: f64,
    pub wsc: f64,
}

/// Evaluates one split; `wsc_cfg = None` skips the slab search and reports NaN.
pub fn evaluate_split(
    split: usize,
    intervals: &[PredictionInterval],
    labels: &[f64],
    features: ArrayView2<'_, f64>,
    wsc_cfg: Option<&WscConfig>,
) -> Result<SplitMetrics> {
    let flags = covered_flags(intervals, labels)?;
    let covered = flags.iter().filter(|&&c| c).count();
    let wsc = match wsc_cfg {
        Some(cfg) => wsc(features, &flags, cfg)?,
        None => f64::NAN,
    };
    Ok(SplitMetrics {
        split,
        covered,
        n_test: flags.len(),
        coverage: covered as f64 / flags.len().max(1) as f64,
        avg_size: average_size(intervals)?,
        wsc,
    })
}

/// Mean and sample standard deviation (denominator `n - 1`; 0 for one value).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> Stat {
    let n = values.len();
    if n == 0 {
        return Stat {
            mean: f64::NAN,
            std: f64::NAN,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Stat { mean, std }
}

/// Per-split metrics of one (family, alpha) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub family: Family,
    pub alpha: f64,
    pub n_calib: usize,
    pub level: Ratio<u64>,
    pub splits: Vec<SplitMetrics>,
}

impl EvalReport {
    pub fn coverage(&self) -> Stat {
        mean_std(&self.splits.iter().map(|s| s.coverage).collect::<Vec<_>>())
    }

    pub fn avg_size(&self) -> Stat {
        mean_std(&self.splits.iter().map(|s| s.avg_size).collect::<Vec<_>>())
    }

    pub fn wsc(&self) -> Stat {
        mean_std(&self.splits.iter().map(|s| s.wsc).collect::<Vec<_>>())
    }

    pub fn level_f64(&self) -> f64 {
        ratio_to_f64(&self.level)
    }
}

pub const SPLIT_CSV_HEADER: &str = "row,family,alpha,n_calib,n_test,level,level_exact,coverage,avg_size,wsc";

/// One CSV line per split, then a `mean` and a `std` line per cell.
pub fn split_rows_csv(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    writeln!(out, "{SPLIT_CSV_HEADER}").unwrap();
    for r in reports {
        for s in &r.splits {
            push_row(&mut out, &s.split.to_string(), r, s.n_test, s.coverage, s.avg_size, s.wsc);
        }
        let n_test = r.splits.first().map_or(0, |s| s.n_test);
        let (c, a, w) = (r.coverage(), r.avg_size(), r.wsc());
        push_row(&mut out, "mean", r, n_test, c.mean, a.mean, w.mean);
        push_row(&mut out, "std", r, n_test, c.std, a.std, w.std);
    }
    out
}

fn push_row(out: &mut String, row: &str, r: &EvalReport, n_test: usize, coverage: f64, size: f64, wsc: f64) {
    writeln!(
        out,
        "{row},{},{},{},{n_test},{},{},{coverage},{size},{wsc}",
        r.family,
        r.alpha,
        r.n_calib,
        r.level_f64(),
        r.level
    )
    .unwrap();
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Coverage,
    Size,
    Wsc,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Coverage, Metric::Size, Metric::Wsc];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Coverage => "coverage",
            Metric::Size => "size",
            Metric::Wsc => "wsc",
        }
    }

    fn stat(self, r: &EvalReport) -> Stat {
        match self {
            Metric::Coverage => r.coverage(),
            Metric::Size => r.avg_size(),
            Metric::Wsc => r.wsc(),
        }
    }
}

/// Family rows by alpha columns, cells as `mean(std)` with three decimals.
pub fn metric_table_csv(reports: &[EvalReport], metric: Metric) -> String {
    let mut alphas: Vec<f64> = Vec::new();
    let mut families: Vec<Family> = Vec::new();
    for r in reports {
        if !alphas.contains(&r.alpha) {
            alphas.push(r.alpha);
        }
        if !families.contains(&r.family) {
            families.push(r.family);
        }
    }
    let mut out = String::from("family");
    for a in &alphas {
        write!(out, ",{}@{}", metric.name(), 1.0 - a).unwrap();
    }
    out.push('\n');
    for f in &families {
        out.push_str(f.name());
        for a in &alphas {
            match reports.iter().find(|r| r.family == *f && r.alpha == *a) {
                Some(r) => {
                    let s = metric.stat(r);
                    write!(out, ",{:.3}({:.3})", s.mean, s.std).unwrap();
                }
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

pub fn summary_json(reports: &[EvalReport]) -> serde_json::Value {
    let cells: Vec<serde_json::Value> = reports
        .iter()
        .map(|r| {
            serde_json::json!({
                "family": r.family,
                "alpha": r.alpha,
                "n_calib": r.n_calib,
                "n_test": r.splits.first().map_or(0, |s| s.n_test),
                "level": r.level_f64(),
                "level_exact": r.level.to_string(),
                "coverage": r.coverage(),
                "avg_size": r.avg_size(),
                "wsc": r.wsc(),
                "splits": r.splits,
            })
        })
        .collect();
    serde_json::json!({ "cells": cells })
}

/// Writes `splits.csv`, `table_<metric>.csv` and `summary.json` under `dir`.
pub fn write_reports(reports: &[EvalReport], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("splits.csv"), split_rows_csv(reports))?;
    for m in Metric::ALL {
        std::fs::write(dir.join(format!("table_{}.csv", m.name())), metric_table_csv(reports, m))?;
    }
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary_json(reports))?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::Rng;

    fn iv(center: f64, radius: f64) -> PredictionInterval {
        PredictionInterval { center, radius }
    }

    #[test]
    fn coverage_and_size_examples() {
        let labels = [1.0, 2.0, 3.0];
        let huge: Vec<_> = labels.iter().map(|_| iv(0.0, 1e300)).collect();
        assert_eq!(empirical_coverage(&huge, &labels).unwrap(), 1.0);
        let zero: Vec<_> = labels.iter().map(|y| iv(y + 0.5, 0.0)).collect();
        assert_eq!(empirical_coverage(&zero, &labels).unwrap(), 0.0);
        assert_eq!(average_size(&zero).unwrap(), 0.0);
        let r: Vec<_> = labels.iter().map(|_| iv(0.0, 0.75)).collect();
        assert_eq!(average_size(&r).unwrap(), 1.5);
        // boundary counts
        assert_eq!(empirical_coverage(&[iv(0.0, 1.0)], &[1.0]).unwrap(), 1.0);
        assert!(empirical_coverage(&r, &[1.0]).is_err());
    }

    /// O(n^2) scan of every window of length >= m.
    fn brute_min(prefix: &[u32], m: usize) -> f64 {
        let n = prefix.len() - 1;
        let mut best = f64::INFINITY;
        for i in 0..n {
            for j in i + m..=n {
                best = best.min((prefix[j] - prefix[i]) as f64 / (j - i) as f64);
            }
        }
        best
    }

    #[test]
    fn window_search_matches_brute_force() {
        let mut rng = stream_rng(5, 0);
        for trial in 0..300 {
            let n = rng.random_range(2..60);
            let p: f64 = rng.random();
            let mut prefix = vec![0u32];
            for _ in 0..n {
                let c = rng.random::<f64>() < p;
                prefix.push(prefix.last().unwrap() + c as u32);
            }
            let m = rng.random_range(1..=n);
            let got = min_mean_window(&prefix, m, None).unwrap();
            assert!(got.len >= m);
            assert_eq!(got.mean(), brute_min(&prefix, m), "trial {trial}");
        }
    }

    #[test]
    fn all_covered_is_one() {
        let x = Array2::from_shape_fn((50, 2), |(i, j)| (i * (j + 1)) as f64);
        let cfg = WscConfig {
            n_directions: 20,
            ..Default::default()
        };
        assert_eq!(wsc(x.view(), &[true; 50], &cfg).unwrap(), 1.0);
    }

    #[test]
    fn coin_flips_dip_below_marginal() {
        let mut rng = stream_rng(11, 0);
        let n = 2000;
        let x = Array2::from_shape_fn((n, 3), |_| rng.random::<f64>());
        let flags: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.9).collect();
        let marginal = flags.iter().filter(|&&c| c).count() as f64 / n as f64;
        let cfg = WscConfig {
            delta: 0.2,
            n_directions: 100,
            seed: 1,
        };
        let w = wsc(x.view(), &flags, &cfg).unwrap();
        assert!(w <= marginal);
        assert!((0.8..=0.9).contains(&w), "{w}");
    }

    #[test]
    fn more_directions_never_increase() {
        let mut rng = stream_rng(12, 0);
        let x = Array2::from_shape_fn((300, 2), |_| rng.random::<f64>());
        let flags: Vec<bool> = (0..300).map(|i| x[[i, 0]] + 0.3 * rng.random::<f64>() < 0.9).collect();
        let mut last = f64::INFINITY;
        for k in [1, 5, 20, 80] {
            let w = wsc(x.view(), &flags, &WscConfig { n_directions: k, delta: 0.1, seed: 3 }).unwrap();
            assert!(w <= last);
            last = w;
        }
    }

    #[test]
    fn wsc_errors() {
        let x = Array2::zeros((10, 1));
        let cfg = WscConfig::default();
        assert!(matches!(wsc(x.view(), &[true; 10], &cfg), Err(Error::TooFewSamples { .. })));
        assert!(wsc(x.view(), &[true; 9], &cfg).is_err());
    }

    #[test]
    fn aggregation_and_tables() {
        let splits: Vec<SplitMetrics> = [0.9, 0.95, 1.0]
            .iter()
            .enumerate()
            .map(|(i, &c)| SplitMetrics {
                split: i,
                covered: 0,
                n_test: 20,
                coverage: c,
                avg_size: 1.0 + i as f64,
                wsc: 0.5,
            })
            .collect();
        let r = EvalReport {
            family: Family::Gauss,
            alpha: 0.1,
            n_calib: 19,
            level: Ratio::new_raw(18, 20),
            splits,
        };
        let c = r.coverage();
        assert!((c.mean - 0.95).abs() < 1e-15);
        assert!((c.std - 0.05).abs() < 1e-15);
        assert_eq!(r.avg_size().std, 1.0);
        let csv = split_rows_csv(std::slice::from_ref(&r));
        assert_eq!(csv.lines().count(), 1 + 3 + 2);
        assert!(csv.contains("mean,Gauss,0.1,19,20,0.9,18/20,"), "{csv}");
        let table = metric_table_csv(&[r], Metric::Size);
        assert_eq!(table, "family,size@0.9\nGauss,2.000(1.000)\n");
    }
}
