//! `hystop`: generate loops, augment, train and evaluate neural operators.

mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use hystop::data::DataError;
use hystop::material::MaterialError;
use hystop::metrics::MetricsError;
use hystop::models::ModelError;
use hystop::train::TrainError;
use hystop::ErrorClass;

use config::{usage, RunConfig, UsageError};

#[derive(Parser)]
#[command(name = "hystop", version, about = "Neural operators for dynamic magnetic hysteresis")]
struct Cli {
    /// JSON run configuration; flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// fno, ufno or deeponet.
    #[arg(long, global = true)]
    model: Option<String>,
    /// none, cyclic or cyclic+gda.
    #[arg(long, global = true)]
    regime: Option<String>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the loop corpus.
    Generate(GenerateArgs),
    /// Normalize, augment and split a corpus.
    Augment(AugmentArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Score a trained run on its test split and plot loops.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Material parameter JSON.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Comma-separated frequencies in Hz.
    #[arg(long, value_delimiter = ',')]
    freqs: Option<Vec<f64>>,
    /// Comma-separated peak flux densities in T.
    #[arg(long, value_delimiter = ',')]
    peaks: Option<Vec<f64>>,
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Args)]
struct AugmentArgs {
    /// Corpus directory from `generate`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Split ratios, e.g. 8:1:1.
    #[arg(long, value_delimiter = ':')]
    split: Option<Vec<f64>>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory from `augment`.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// f32 or f64.
    #[arg(long)]
    precision: Option<String>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Run directory from `train`.
    #[arg(long)]
    run: Option<PathBuf>,
    #[arg(long)]
    plots: Option<usize>,
    #[arg(long)]
    baseline_mre: Option<f64>,
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(m) = &cli.model {
        cfg.model.kind = m.clone();
    }
    if let Some(r) = &cli.regime {
        cfg.augment.regime = r.clone();
    }
    match &cli.command {
        Command::Generate(a) => {
            let g = &mut cfg.generate;
            g.params = a.params.clone().or(g.params.take());
            g.freqs = a.freqs.clone().unwrap_or(std::mem::take(&mut g.freqs));
            g.peaks = a.peaks.clone().unwrap_or(std::mem::take(&mut g.peaks));
            g.samples = a.samples.unwrap_or(g.samples);
        }
        Command::Augment(a) => {
            let s = &mut cfg.augment;
            s.data = a.data.clone().or(s.data.take());
            s.split = a.split.clone().or(s.split.take());
        }
        Command::Train(a) => {
            let t = &mut cfg.train;
            t.data = a.data.clone().or(t.data.take());
            t.epochs = a.epochs.or(t.epochs);
            t.lr = a.lr.or(t.lr);
            t.batch_size = a.batch_size.or(t.batch_size);
            if let Some(p) = &a.precision {
                cfg.model.precision = p.clone();
            }
        }
        Command::Evaluate(a) => {
            let e = &mut cfg.evaluate;
            e.run = a.run.clone().or(e.run.take());
            e.plots = a.plots.or(e.plots);
            e.baseline_mre = a.baseline_mre.or(e.baseline_mre);
        }
    }
    Ok(cfg)
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("HYSTOP_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| usage(format!("HYSTOP_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| usage(format!("cannot size the thread pool: {e}")))
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    let cfg = resolve(&cli)?;
    let out = cli.out.clone();
    match &cli.command {
        Command::Generate(_) => commands::generate(&cfg, &out.unwrap_or_else(|| "corpus".into())).map(drop),
        Command::Augment(_) => commands::augment(&cfg, &out.unwrap_or_else(|| "dataset".into())).map(drop),
        Command::Train(_) => commands::train(&cfg, &out.unwrap_or_else(|| "runs".into())).map(drop),
        Command::Evaluate(_) => commands::evaluate_run(&cfg, out.as_deref()).map(drop),
    }
}

/// 3 for numerical failures, 2 for everything the user can fix.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        let class = if let Some(e) = cause.downcast_ref::<TrainError>() {
            e.class()
        } else if let Some(e) = cause.downcast_ref::<ModelError>() {
            e.class()
        } else if let Some(e) = cause.downcast_ref::<DataError>() {
            e.class()
        } else if let Some(e) = cause.downcast_ref::<MaterialError>() {
            e.class()
        } else if let Some(e) = cause.downcast_ref::<MetricsError>() {
            e.class()
        } else if cause.downcast_ref::<UsageError>().is_some() {
            ErrorClass::Config
        } else {
            continue;
        };
        return if class == ErrorClass::Numerical { 3 } else { 2 };
    }
    2
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
