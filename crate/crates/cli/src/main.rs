//! `privrisk`: batch entry point for training, clustering, evaluation and scoring.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 numerical failure.

mod commands;
mod outdir;
mod study;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use privrisk_core::attribute_model::AttributeModelError;
use privrisk_core::numopt::NumoptError;
use privrisk_core::risk::RiskError;
use privrisk_core::LossKind;

#[derive(Parser)]
#[command(name = "privrisk", version, about = "Personalized visual privacy risk engine")]
struct Cli {
    /// Taxonomy JSON; the bundled 68-attribute taxonomy when omitted.
    #[arg(long, global = true)]
    taxonomy: Option<PathBuf>,
    /// Output directory for artifacts and run.log.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Label statistics per split.
    Stats(StatsArgs),
    /// Train the linear attribute predictor.
    TrainAttributes(TrainAttributesArgs),
    /// Train the per-profile risk head.
    TrainRisk(TrainRiskArgs),
    /// Cluster preference responses into privacy profiles.
    Cluster(ClusterArgs),
    /// Evaluate attribute prediction, risk estimates and an optional user study.
    Eval(EvalArgs),
    /// Score images under one or all profiles.
    Score(ScoreArgs),
    /// Run the HTTP advisory service.
    Serve(ServeArgs),
    /// Write a seeded synthetic dataset and preference survey.
    DemoData(DemoArgs),
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    annotations: PathBuf,
}

#[derive(Args, Clone)]
struct SgdArgs {
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    /// Hinge smoothing width.
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = 0.0)]
    l2: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Ce,
    Hinge,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Ce => LossKind::SigmoidCe,
            LossArg::Hinge => LossKind::SmoothedHinge,
        }
    }
}

#[derive(Args)]
struct TrainAttributesArgs {
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long, value_enum, default_value = "ce")]
    loss: LossArg,
    #[command(flatten)]
    sgd: SgdArgs,
}

#[derive(Args)]
struct TrainRiskArgs {
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    profiles: PathBuf,
    #[command(flatten)]
    sgd: SgdArgs,
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long)]
    responses: PathBuf,
    /// Candidate K values: `2..40` (inclusive), `3` or `2,4,6`.
    #[arg(long, default_value = "2..40")]
    k: String,
    /// Pick the K with the lowest silhouette instead of the highest.
    #[arg(long)]
    select_min: bool,
    #[arg(long, default_value_t = 5)]
    n_init: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    features: PathBuf,
    /// Attribute predictor checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    risk_checkpoint: Option<PathBuf>,
    #[arg(long)]
    profiles: Option<PathBuf>,
    #[arg(long, default_value = "1,2,3,4")]
    thresholds: String,
    #[arg(long, default_value = "test")]
    split: String,
    /// User-study JSON for the humans-vs-machine comparison.
    #[arg(long)]
    study: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScoreMode {
    Gt,
    ApPr,
    PrHead,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long, alias = "image-features")]
    features: Option<PathBuf>,
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// Attribute predictor checkpoint (ap-pr mode).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Risk head checkpoint (pr-head mode).
    #[arg(long)]
    risk_checkpoint: Option<PathBuf>,
    #[arg(long)]
    profiles: PathBuf,
    /// Restrict to one profile id.
    #[arg(long)]
    profile: Option<usize>,
    /// Restrict to one image id.
    #[arg(long)]
    image: Option<String>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "ap-pr")]
    mode: Vec<ScoreMode>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    risk_checkpoint: PathBuf,
    #[arg(long)]
    profiles: PathBuf,
    #[arg(long)]
    annotations: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
}

#[derive(Args)]
struct DemoArgs {
    #[arg(long, default_value_t = 400)]
    images: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 305)]
    users: usize,
    /// Planted preference clusters.
    #[arg(long, default_value_t = 3)]
    clusters: usize,
    #[arg(long, default_value_t = 0.3)]
    sigma: f64,
}

fn is_numerical(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        let n = c
            .downcast_ref::<NumoptError>()
            .or_else(|| match c.downcast_ref::<AttributeModelError>() {
                Some(AttributeModelError::Numopt(n)) => Some(n),
                _ => None,
            })
            .or_else(|| match c.downcast_ref::<RiskError>() {
                Some(RiskError::Numopt(n)) => Some(n),
                _ => None,
            });
        matches!(n, Some(NumoptError::DivergedLoss { .. } | NumoptError::NonFinite(_)))
    })
}

fn thread_cap() -> Result<Option<usize>> {
    match std::env::var("PRIVRISK_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => bail!("PRIVRISK_THREADS must be a positive integer, got `{v}`"),
        },
    }
}

fn run(cli: Cli) -> Result<()> {
    let threads = thread_cap()?;
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot configure worker pool")?;
    }
    let taxonomy = commands::taxonomy(cli.taxonomy.as_deref())?;
    let ctx = commands::Context {
        taxonomy,
        taxonomy_path: cli.taxonomy,
        out: cli.out,
        seed: cli.seed,
    };
    match cli.command {
        Command::Stats(a) => commands::stats(&ctx, a),
        Command::TrainAttributes(a) => commands::train_attributes(&ctx, a),
        Command::TrainRisk(a) => commands::train_risk(&ctx, a),
        Command::Cluster(a) => commands::cluster(&ctx, a),
        Command::Eval(a) => commands::eval(&ctx, a),
        Command::Score(a) => commands::score(&ctx, a),
        Command::DemoData(a) => commands::demo_data(&ctx, a),
        Command::Serve(a) => commands::serve(&ctx, a, threads),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_numerical(&e) { 3 } else { 2 })
        }
    }
}
