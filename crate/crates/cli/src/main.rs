use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use flowcp::data::{gen_synth, write_csv, write_meta, SynthKind, SynthSpec};
use flowcp::experiment::{figure_data, run_experiment, DatasetSource, ExperimentConfig, FigureConfig};
use flowcp::theory::{run_checks, TheoryConfig};
use flowcp::{Error, Family};

/// Split conformal regression with trained conformity transforms.
#[derive(Parser)]
#[command(name = "flowcp", version)]
struct Cli {
    /// Print the default configuration file and exit.
    #[arg(long, global = true)]
    print_defaults: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset as CSV, with a `.meta` sidecar.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Overrides the config's dataset kind.
        #[arg(long)]
        kind: Option<SynthKind>,
        /// Overrides the config's sample count.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Run the full experiment and write report files.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long = "alpha")]
        alphas: Vec<f64>,
        #[arg(long = "family")]
        families: Vec<Family>,
    },
    /// Run the numerical theory checks.
    CheckTheory {
        #[command(flatten)]
        common: Common,
    },
    /// Emit per-point toy example data for plotting.
    FigureData {
        #[command(flatten)]
        common: Common,
        #[arg(long = "alpha")]
        alphas: Vec<f64>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        Ok(cfg)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::InvalidAlpha(_) => 1,
        _ => 2,
    }
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<(), Error> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<u8, Error> {
    if cli.print_defaults {
        print!("{}", ExperimentConfig::default().to_text());
        return Ok(0);
    }
    let Some(command) = cli.command else {
        return Err(Error::config("command", "expected one of gen-data, run, check-theory, figure-data"));
    };
    match command {
        Command::GenData { common, kind, n } => {
            let cfg = common.load()?;
            let kind = match (kind, &cfg.dataset) {
                (Some(k), _) => k,
                (None, DatasetSource::Synth(k)) => *k,
                (None, DatasetSource::Csv(_)) => {
                    return Err(Error::config("dataset", "gen-data needs a synthetic kind"));
                }
            };
            let out = common
                .out
                .clone()
                .ok_or_else(|| Error::config("out", "gen-data needs --out <file.csv>"))?;
            let ds = gen_synth(&SynthSpec {
                xi: cfg.xi,
                ..SynthSpec::new(kind, n.unwrap_or(cfg.n_samples), cfg.seed)
            })?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            write_csv(&ds, &out)?;
            if let Some(meta) = ds.meta() {
                write_meta(meta, &out)?;
            }
            log::info!("wrote {} rows to {}", ds.len(), out.display());
            Ok(0)
        }
        Command::Run {
            common,
            alphas,
            families,
        } => {
            let mut cfg = common.load()?;
            if !alphas.is_empty() {
                cfg.alphas = alphas;
            }
            if !families.is_empty() {
                cfg.families = families;
            }
            cfg.validate()?;
            let outcome = run_experiment(&cfg, Some(&cfg.out))?;
            for r in &outcome.reports {
                println!(
                    "{:<8} alpha={:<5} level={} coverage={:.3}({:.3}) size={:.3}({:.3}) wsc={:.3}({:.3})",
                    r.family.name(),
                    r.alpha,
                    r.level,
                    r.coverage().mean,
                    r.coverage().std,
                    r.avg_size().mean,
                    r.avg_size().std,
                    r.wsc().mean,
                    r.wsc().std
                );
            }
            println!("reports written to {}", cfg.out.display());
            Ok(0)
        }
        Command::CheckTheory { common } => {
            let seed = common.seed.unwrap_or(0);
            let report = run_checks(&TheoryConfig::default().with_seed(seed))?;
            write_or_print(common.out.as_deref(), &report.text)?;
            Ok(if report.passed { 0 } else { 3 })
        }
        Command::FigureData { common, alphas } => {
            let mut fc = FigureConfig {
                seed: common.seed.unwrap_or(0),
                ..FigureConfig::default()
            };
            match alphas[..] {
                [] => {}
                [a] => fc.alpha = a,
                _ => return Err(Error::config("alpha", "figure-data takes a single alpha")),
            }
            if !(fc.alpha > 0.0 && fc.alpha < 1.0) {
                return Err(Error::config("alpha", "must lie in (0, 1)"));
            }
            let fig = figure_data(&fc)?;
            write_or_print(common.out.as_deref(), &fig.to_csv())?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
