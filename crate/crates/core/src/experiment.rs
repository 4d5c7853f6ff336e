//! End-to-end experiments: configuration, the per-split pipeline
//! (regressor, transform training, calibration, evaluation) and the toy
//! figure data.
//!
//! Configuration files are flat `key = value` lines; `#` starts a comment,
//! lists are comma-separated and unknown keys are rejected. Every key and its
//! default is listed by [`ExperimentConfig::to_text`].

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Axis};

use crate::cp::{calibrate, finite_sample_level, CalibratedPredictor};
use crate::data::{
    gen_synth, load_csv, normalize_labels, pca_reduce, split, Dataset, LabelScaling, SynthKind, SynthSpec,
};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_split, write_reports, EvalReport, WscConfig};
use crate::regressor::{fit_forest, mae, ForestConfig, OraclePredictor, Predictor, ZeroPredictor};
use crate::rng::derive_seed;
use crate::training::{train_transform, BatchSize, LocalizerSpec, TrainConfig};
use crate::transforms::{ConformityTransform, Family};

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Synth(SynthKind),
    Csv(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegressorKind {
    Forest,
    /// The generator's conditional mean; synthetic data only.
    Oracle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub n_samples: usize,
    pub xi: f64,
    pub regressor: RegressorKind,
    pub forest: ForestConfig,
    pub families: Vec<Family>,
    pub alphas: Vec<f64>,
    pub n_splits: usize,
    pub seed: u64,
    /// Regressor training, transform training, calibration, test.
    pub fractions: [f64; 4],
    pub label_scaling: Option<LabelScaling>,
    pub pca_dim: usize,
    /// Standardize localizer inputs with transform-training statistics.
    pub standardize: bool,
    pub gamma: f64,
    pub exponent: u8,
    pub localizer: LocalizerSpec,
    pub iterations: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    pub batch_size: BatchSize,
    pub lr_er: f64,
    pub lr_gauss: f64,
    pub lr_uniform: f64,
    pub wsc: WscConfig,
    pub save_transforms: bool,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::Synth(SynthKind::Cos),
            n_samples: 4000,
            xi: 5.0,
            regressor: RegressorKind::Forest,
            forest: ForestConfig::default(),
            families: Family::ALL.to_vec(),
            alphas: vec![0.05, 0.1, 0.35],
            n_splits: 5,
            seed: 0,
            fractions: [0.25, 0.125, 0.125, 0.5],
            label_scaling: Some(LabelScaling::MinMax),
            pca_dim: 10,
            standardize: false,
            gamma: 0.001,
            exponent: 1,
            localizer: LocalizerSpec::default(),
            iterations: 2000,
            patience: 0,
            validation_fraction: 0.0,
            batch_size: BatchSize::Full,
            lr_er: Family::Er.default_learning_rate(),
            lr_gauss: Family::Gauss.default_learning_rate(),
            lr_uniform: Family::Uniform.default_learning_rate(),
            wsc: WscConfig::default(),
            save_transforms: false,
            out: PathBuf::from("results"),
        }
    }
}

fn list<T>(value: &str, f: impl Fn(&str) -> Option<T>) -> Option<Vec<T>> {
    value.split(',').map(|v| f(v.trim())).collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}", lineno + 1), "expected `key = value`"))?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::config(key, format!("{what}, got `{value}`"));
        let num = |v: &str| v.parse::<f64>().ok().filter(|x| x.is_finite());
        let int = |v: &str| v.parse::<usize>().ok();
        let boolean = |v: &str| match v {
            "true" | "yes" | "1" => Some(true),
            "false" | "no" | "0" => Some(false),
            _ => None,
        };
        match key {
            "dataset" => {
                self.dataset = match value.strip_prefix("csv:") {
                    Some(p) => DatasetSource::Csv(PathBuf::from(p.trim())),
                    None => DatasetSource::Synth(value.parse().map_err(|_| bad("expected synth-<kind> or csv:<path>"))?),
                }
            }
            "n_samples" => self.n_samples = int(value).ok_or_else(|| bad("expected an integer"))?,
            "xi" => self.xi = num(value).ok_or_else(|| bad("expected a number"))?,
            "regressor" => {
                self.regressor = match value {
                    "forest" => RegressorKind::Forest,
                    "oracle" => RegressorKind::Oracle,
                    _ => return Err(bad("expected forest or oracle")),
                }
            }
            "forest_trees" => self.forest.n_trees = int(value).ok_or_else(|| bad("expected an integer"))?,
            "forest_depth" => self.forest.max_depth = int(value).ok_or_else(|| bad("expected an integer"))?,
            "forest_min_leaf" => self.forest.min_leaf = int(value).ok_or_else(|| bad("expected an integer"))?,
            "families" => {
                self.families = list(value, |v| v.parse().ok()).ok_or_else(|| bad("expected family names"))?
            }
            "alphas" => self.alphas = list(value, num).ok_or_else(|| bad("expected numbers"))?,
            "n_splits" => self.n_splits = int(value).ok_or_else(|| bad("expected an integer"))?,
            "seed" => self.seed = value.parse().map_err(|_| bad("expected an unsigned integer"))?,
            "fractions" => {
                let v = list(value, num).ok_or_else(|| bad("expected numbers"))?;
                self.fractions = v.try_into().map_err(|_| bad("expected four fractions"))?;
            }
            "label_scaling" => {
                self.label_scaling = match value {
                    "minmax" => Some(LabelScaling::MinMax),
                    "zscore" => Some(LabelScaling::ZScore),
                    "none" => None,
                    _ => return Err(bad("expected minmax, zscore or none")),
                }
            }
            "pca_dim" => self.pca_dim = int(value).ok_or_else(|| bad("expected an integer"))?,
            "standardize" => self.standardize = boolean(value).ok_or_else(|| bad("expected true or false"))?,
            "gamma" => self.gamma = num(value).ok_or_else(|| bad("expected a number"))?,
            "exponent" => self.exponent = value.parse().map_err(|_| bad("expected 1 or 2"))?,
            "localizer" => {
                self.localizer = match value {
                    "cubic" => LocalizerSpec::Cubic,
                    "mlp" => match &self.localizer {
                        LocalizerSpec::Mlp { .. } => self.localizer.clone(),
                        LocalizerSpec::Cubic => LocalizerSpec::default(),
                    },
                    _ => return Err(bad("expected mlp or cubic")),
                }
            }
            "hidden" => {
                self.localizer = LocalizerSpec::Mlp {
                    hidden: list(value, int).ok_or_else(|| bad("expected layer widths"))?,
                }
            }
            "iterations" => self.iterations = int(value).ok_or_else(|| bad("expected an integer"))?,
            "patience" => self.patience = int(value).ok_or_else(|| bad("expected an integer"))?,
            "validation_fraction" => self.validation_fraction = num(value).ok_or_else(|| bad("expected a number"))?,
            "batch_size" => {
                self.batch_size = match value {
                    "full" => BatchSize::Full,
                    v => BatchSize::Mini(int(v).ok_or_else(|| bad("expected full or an integer"))?),
                }
            }
            "lr_er" => self.lr_er = num(value).ok_or_else(|| bad("expected a number"))?,
            "lr_gauss" => self.lr_gauss = num(value).ok_or_else(|| bad("expected a number"))?,
            "lr_uniform" => self.lr_uniform = num(value).ok_or_else(|| bad("expected a number"))?,
            "wsc_delta" => self.wsc.delta = num(value).ok_or_else(|| bad("expected a number"))?,
            "wsc_directions" => self.wsc.n_directions = int(value).ok_or_else(|| bad("expected an integer"))?,
            "save_transforms" => self.save_transforms = boolean(value).ok_or_else(|| bad("expected true or false"))?,
            "out" => self.out = PathBuf::from(value),
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() || self.alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return Err(Error::config("alphas", "need at least one value in (0, 1)"));
        }
        if self.families.is_empty() {
            return Err(Error::config("families", "need at least one family"));
        }
        if self.n_splits == 0 {
            return Err(Error::config("n_splits", "must be positive"));
        }
        if self.fractions.iter().any(|f| !(*f >= 0.0)) || (self.fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::config("fractions", "must be non-negative and sum to 1"));
        }
        if self.regressor == RegressorKind::Forest && self.fractions[0] == 0.0 {
            return Err(Error::config("fractions", "the forest needs a training part"));
        }
        if matches!(self.dataset, DatasetSource::Synth(_)) && self.n_samples == 0 {
            return Err(Error::config("n_samples", "must be positive"));
        }
        if self.regressor == RegressorKind::Oracle && matches!(self.dataset, DatasetSource::Csv(_)) {
            return Err(Error::config("regressor", "the oracle needs synthetic data"));
        }
        if self.pca_dim == 0 {
            return Err(Error::config("pca_dim", "must be positive"));
        }
        if !(self.wsc.delta > 0.0 && self.wsc.delta < 1.0) {
            return Err(Error::config("wsc_delta", "must lie in (0, 1)"));
        }
        if self.wsc.n_directions == 0 {
            return Err(Error::config("wsc_directions", "must be positive"));
        }
        for f in &self.families {
            self.train_config(*f, 0).validate()?;
        }
        Ok(())
    }

    pub fn learning_rate(&self, family: Family) -> f64 {
        match family {
            Family::Er => self.lr_er,
            Family::Gauss => self.lr_gauss,
            Family::Uniform => self.lr_uniform,
            Family::Baseline => 0.0,
        }
    }

    pub fn train_config(&self, family: Family, seed: u64) -> TrainConfig {
        TrainConfig {
            family,
            gamma: self.gamma,
            learning_rate: self.learning_rate(family),
            iterations: self.iterations,
            batch_size: self.batch_size,
            seed,
            exponent: self.exponent,
            localizer: self.localizer.clone(),
            patience: self.patience,
            validation_fraction: self.validation_fraction,
        }
    }

    /// The configuration in the file grammar, one key per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let dataset = match &self.dataset {
            DatasetSource::Synth(k) => format!("synth-{k}"),
            DatasetSource::Csv(p) => format!("csv:{}", p.display()),
        };
        let regressor = match self.regressor {
            RegressorKind::Forest => "forest",
            RegressorKind::Oracle => "oracle",
        };
        let scaling = match self.label_scaling {
            Some(LabelScaling::MinMax) => "minmax",
            Some(LabelScaling::ZScore) => "zscore",
            None => "none",
        };
        let families: Vec<&str> = self.families.iter().map(|f| f.name()).collect();
        let batch = match self.batch_size {
            BatchSize::Full => "full".to_string(),
            BatchSize::Mini(b) => b.to_string(),
        };
        let _ = writeln!(s, "# synth-<toy|cos|squared|inverse|linear> or csv:<path>");
        let _ = writeln!(s, "dataset = {dataset}");
        let _ = writeln!(s, "n_samples = {}", self.n_samples);
        let _ = writeln!(s, "xi = {}", self.xi);
        let _ = writeln!(s, "# forest or oracle");
        let _ = writeln!(s, "regressor = {regressor}");
        let _ = writeln!(s, "forest_trees = {}", self.forest.n_trees);
        let _ = writeln!(s, "forest_depth = {}", self.forest.max_depth);
        let _ = writeln!(s, "forest_min_leaf = {}", self.forest.min_leaf);
        let _ = writeln!(s, "families = {}", families.join(","));
        let _ = writeln!(s, "alphas = {}", join(&self.alphas));
        let _ = writeln!(s, "n_splits = {}", self.n_splits);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "# regressor training, transform training, calibration, test");
        let _ = writeln!(s, "fractions = {}", join(&self.fractions));
        let _ = writeln!(s, "# minmax, zscore or none");
        let _ = writeln!(s, "label_scaling = {scaling}");
        let _ = writeln!(s, "pca_dim = {}", self.pca_dim);
        let _ = writeln!(s, "standardize = {}", self.standardize);
        let _ = writeln!(s, "gamma = {}", self.gamma);
        let _ = writeln!(s, "exponent = {}", self.exponent);
        match &self.localizer {
            LocalizerSpec::Mlp { hidden } => {
                let _ = writeln!(s, "localizer = mlp");
                let _ = writeln!(s, "hidden = {}", join(hidden));
            }
            LocalizerSpec::Cubic => {
                let _ = writeln!(s, "localizer = cubic");
            }
        }
        let _ = writeln!(s, "iterations = {}", self.iterations);
        let _ = writeln!(s, "patience = {}", self.patience);
        let _ = writeln!(s, "validation_fraction = {}", self.validation_fraction);
        let _ = writeln!(s, "batch_size = {batch}");
        let _ = writeln!(s, "lr_er = {}", self.lr_er);
        let _ = writeln!(s, "lr_gauss = {}", self.lr_gauss);
        let _ = writeln!(s, "lr_uniform = {}", self.lr_uniform);
        let _ = writeln!(s, "wsc_delta = {}", self.wsc.delta);
        let _ = writeln!(s, "wsc_directions = {}", self.wsc.n_directions);
        let _ = writeln!(s, "save_transforms = {}", self.save_transforms);
        let _ = writeln!(s, "out = {}", self.out.display());
        s
    }
}

/// Results of [`run_experiment`].
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    /// One report per (family, alpha), families outermost.
    pub reports: Vec<EvalReport>,
    /// Regressor MAE on the test part of each split.
    pub mae: Vec<f64>,
    /// Trained transforms, `[split][family]`.
    pub transforms: Vec<Vec<ConformityTransform>>,
}

impl ExperimentOutcome {
    pub fn report(&self, family: Family, alpha: f64) -> Option<&EvalReport> {
        self.reports.iter().find(|r| r.family == family && r.alpha == alpha)
    }
}

/// Loads or generates the dataset, reduces it with PCA when wider than
/// `pca_dim`, and scales the labels.
pub fn prepare_dataset(cfg: &ExperimentConfig) -> Result<(Dataset, Option<crate::data::LabelTransform>)> {
    let ds = match &cfg.dataset {
        DatasetSource::Synth(kind) => gen_synth(&SynthSpec {
            xi: cfg.xi,
            ..SynthSpec::new(*kind, cfg.n_samples, derive_seed(cfg.seed, 0xDA7A))
        })?,
        DatasetSource::Csv(path) => load_csv(path)?,
    };
    let ds = if ds.dim() > cfg.pca_dim {
        let r = pca_reduce(&ds, cfg.pca_dim)?;
        if let Some(w) = r.warning {
            log::warn!("{w}");
        }
        r.dataset
    } else {
        ds
    };
    match cfg.label_scaling {
        Some(s) => {
            let (ds, t) = normalize_labels(&ds, s)?;
            Ok((ds, Some(t)))
        }
        None => Ok((ds, None)),
    }
}

fn oracle_for(ds: &Dataset, scaling: Option<&crate::data::LabelTransform>) -> Result<Box<dyn Predictor>> {
    let meta = ds.meta().ok_or_else(|| Error::config("regressor", "the oracle needs synthetic data"))?;
    let (shift, scale) = scaling.map_or((0.0, 1.0), |t| (t.shift, t.scale));
    if meta.kind == SynthKind::Toy {
        if shift != 0.0 {
            // constant conditional mean, shifted by the label scaling
            let w = [-shift / scale, 0.0, 0.0];
            return Ok(Box::new(ShiftedConstant { value: w[0], dim: ds.dim() }));
        }
        return Ok(Box::new(ZeroPredictor { dim: ds.dim() }));
    }
    let o = OraclePredictor::from_meta(meta)?;
    // fold the label scaling into the coefficients: (w.x + c - shift) / scale
    Ok(Box::new(OraclePredictor::new(
        [(o.w[0] - shift) / scale, o.w[1] / scale, o.w[2] / scale],
        o.offset / scale,
    )))
}

struct ShiftedConstant {
    value: f64,
    dim: usize,
}

impl Predictor for ShiftedConstant {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::shape(self.dim, x.len()));
        }
        Ok(self.value)
    }
}

/// Column means and standard deviations; zero-variance columns keep scale 1.
fn standardizer(ds: &Dataset) -> (Array1<f64>, Array1<f64>) {
    let x = ds.features();
    let mean = x.mean_axis(Axis(0)).expect("non-empty part");
    let std = x.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
    (mean, std)
}

fn standardized(ds: &Dataset, stats: &(Array1<f64>, Array1<f64>)) -> Result<Dataset> {
    let x: Array2<f64> = (&ds.features() - &stats.0) / &stats.1;
    Dataset::new(x, ds.labels().to_vec())
}

/// Runs every split, writing `splits.csv`, the metric tables, `summary.json`
/// and `mae.csv` under `out` after each split when `out` is given.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let (ds, scaling) = prepare_dataset(cfg)?;
    let oracle = match cfg.regressor {
        RegressorKind::Oracle => Some(oracle_for(&ds, scaling.as_ref())?),
        RegressorKind::Forest => None,
    };
    let mut reports: Vec<EvalReport> = Vec::new();
    let mut maes = Vec::new();
    let mut all_transforms = Vec::new();
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.txt"), cfg.to_text())?;
    }
    for s in 0..cfg.n_splits {
        let split_seed = derive_seed(cfg.seed, s as u64 + 1);
        let parts = split(&ds, &cfg.fractions, split_seed)?;
        let [reg_part, train_part, calib_part, test_part] = &parts[..] else {
            unreachable!("four fractions give four parts")
        };
        let forest;
        let f: &dyn Predictor = match &oracle {
            Some(o) => o.as_ref(),
            None => {
                forest = fit_forest(
                    reg_part,
                    &ForestConfig {
                        seed: derive_seed(split_seed, 0xF0),
                        ..cfg.forest
                    },
                )?;
                &forest
            }
        };
        let f_train = f.predict_batch(train_part.features())?;
        let f_calib = f.predict_batch(calib_part.features())?;
        let f_test = f.predict_batch(test_part.features())?;
        let split_mae = mae(&f_test, test_part.labels())?;
        maes.push(split_mae);
        log::info!("split {s}: regressor MAE {split_mae:.4}");

        let (train_x, calib_x, test_x) = if cfg.standardize {
            let stats = standardizer(train_part);
            (
                standardized(train_part, &stats)?,
                standardized(calib_part, &stats)?,
                standardized(test_part, &stats)?,
            )
        } else {
            (train_part.clone(), calib_part.clone(), test_part.clone())
        };

        let mut split_transforms = Vec::new();
        for (fi, &family) in cfg.families.iter().enumerate() {
            let tcfg = cfg.train_config(family, derive_seed(split_seed, 0x100 + fi as u64));
            let t = train_transform(&tcfg, &train_x, &f_train)?;
            if let (Some(dir), true) = (out, cfg.save_transforms) {
                let tdir = dir.join("transforms");
                fs::create_dir_all(&tdir)?;
                t.save(tdir.join(format!("split{s}_{}.json", family.name().to_lowercase())))?;
            }
            for &alpha in &cfg.alphas {
                let cp = calibrate(&t, &f_calib, calib_x.labels(), calib_x.features(), alpha)?;
                let intervals = cp.predict_intervals(&f_test, test_x.features())?;
                let wsc_cfg = WscConfig {
                    seed: derive_seed(split_seed, 0x5C),
                    ..cfg.wsc
                };
                let m = evaluate_split(s, &intervals, test_part.labels(), test_part.features(), Some(&wsc_cfg))?;
                log::info!(
                    "split {s} {family} alpha {alpha}: coverage {:.4} size {:.4} wsc {:.4}",
                    m.coverage,
                    m.avg_size,
                    m.wsc
                );
                match reports.iter_mut().find(|r| r.family == family && r.alpha == alpha) {
                    Some(r) => r.splits.push(m),
                    None => reports.push(EvalReport {
                        family,
                        alpha,
                        n_calib: calib_part.len(),
                        level: finite_sample_level(calib_part.len(), alpha)?,
                        splits: vec![m],
                    }),
                }
            }
            split_transforms.push(t);
        }
        all_transforms.push(split_transforms);
        if let Some(dir) = out {
            write_reports(&reports, dir)?;
            write_mae(&maes, dir)?;
        }
    }
    Ok(ExperimentOutcome {
        reports,
        mae: maes,
        transforms: all_transforms,
    })
}

fn write_mae(maes: &[f64], dir: &Path) -> Result<()> {
    let mut s = String::from("row,mae\n");
    for (i, m) in maes.iter().enumerate() {
        let _ = writeln!(s, "{i},{m}");
    }
    let st = crate::evaluation::mean_std(maes);
    let _ = writeln!(s, "mean,{}\nstd,{}", st.mean, st.std);
    fs::write(dir.join("mae.csv"), s)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FigureConfig {
    pub n_train: usize,
    pub n_calib: usize,
    pub n_test: usize,
    pub alpha: f64,
    pub xi: f64,
    pub gamma: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for FigureConfig {
    fn default() -> Self {
        Self {
            n_train: 1000,
            n_calib: 1000,
            n_test: 1000,
            alpha: 0.1,
            xi: 5.0,
            gamma: 0.01,
            learning_rate: 0.01,
            iterations: 2000,
            seed: 0,
        }
    }
}

/// Per-test-point rows of the toy example.
#[derive(Debug, Clone, PartialEq)]
pub struct FigureData {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub baseline_bound: Vec<f64>,
    pub er_bound: Vec<f64>,
    pub flow_bound: Vec<f64>,
    pub er_score: Vec<f64>,
    pub flow_score: Vec<f64>,
    pub er_quantile: f64,
    pub flow_quantile: f64,
    pub flow: ConformityTransform,
    pub er: ConformityTransform,
}

impl FigureData {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y,score,baseline_bound,er_bound,flow_bound,er_score,flow_score,er_quantile,flow_quantile\n");
        for i in 0..self.x.len() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                self.x[i],
                self.y[i],
                self.y[i].abs(),
                self.baseline_bound[i],
                self.er_bound[i],
                self.flow_bound[i],
                self.er_score[i],
                self.flow_score[i],
                self.er_quantile,
                self.flow_quantile
            );
        }
        s
    }
}

/// The toy example with the best-possible point predictor `f = 0`: cubic
/// localizers `g(x) = t1 x + t2 x^2 + t3 x^3` with scale `gamma + g^2`,
/// trained as a Gauss flow and as ER, then calibrated alongside the baseline.
pub fn figure_data(cfg: &FigureConfig) -> Result<FigureData> {
    let n = cfg.n_train + cfg.n_calib + cfg.n_test;
    let ds = gen_synth(&SynthSpec {
        xi: cfg.xi,
        ..SynthSpec::new(SynthKind::Toy, n, cfg.seed)
    })?;
    let idx: Vec<usize> = (0..n).collect();
    let train = ds.select(&idx[..cfg.n_train]);
    let calib = ds.select(&idx[cfg.n_train..cfg.n_train + cfg.n_calib]);
    let test = ds.select(&idx[cfg.n_train + cfg.n_calib..]);
    let train_cfg = |family| TrainConfig {
        gamma: cfg.gamma,
        learning_rate: cfg.learning_rate,
        iterations: cfg.iterations,
        exponent: 2,
        localizer: LocalizerSpec::Cubic,
        seed: derive_seed(cfg.seed, 0xF16),
        ..TrainConfig::for_family(family)
    };
    let zeros = |d: &Dataset| vec![0.0; d.len()];
    let flow = train_transform(&train_cfg(Family::Gauss), &train, &zeros(&train))?;
    let er = train_transform(&train_cfg(Family::Er), &train, &zeros(&train))?;
    let fit = |t: &ConformityTransform| -> Result<CalibratedPredictor<ConformityTransform>> {
        calibrate(t.clone(), &zeros(&calib), calib.labels(), calib.features(), cfg.alpha)
    };
    let base_cp = fit(&ConformityTransform::baseline())?;
    let er_cp = fit(&er)?;
    let flow_cp = fit(&flow)?;
    let f_test = zeros(&test);
    let radii = |cp: &CalibratedPredictor<ConformityTransform>| -> Result<Vec<f64>> {
        Ok(cp.predict_intervals(&f_test, test.features())?.iter().map(|iv| iv.radius).collect())
    };
    let scores = |t: &ConformityTransform| -> Result<Vec<f64>> {
        use crate::cp::ScoreTransform;
        t.eval_batch(&test.labels().iter().map(|y| y.abs()).collect::<Vec<_>>(), test.features())
    };
    Ok(FigureData {
        x: test.features().column(0).to_vec(),
        y: test.labels().to_vec(),
        baseline_bound: radii(&base_cp)?,
        er_bound: radii(&er_cp)?,
        flow_bound: radii(&flow_cp)?,
        er_score: scores(&er)?,
        flow_score: scores(&flow)?,
        er_quantile: er_cp.threshold(),
        flow_quantile: flow_cp.threshold(),
        flow,
        er,
    })
}
