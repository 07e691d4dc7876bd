//! Reproducible experiments over the neotraj planner: scene generation,
//! expert data collection, training, single flights, benchmarks, the
//! latency study and gradient checks.

use std::path::PathBuf;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use neotraj::neural::MlpModel;
use neotraj::InitStrategy;

pub mod commands;
pub mod config;
pub mod error;
pub mod scenes;
pub mod seeds;
pub mod svg;

pub use config::RunConfig;
pub use error::CliError;

/// Environment variable that overrides the worker count.
pub const WORKERS_ENV: &str = "NEOTRAJ_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "neotraj", version, about = "Warm-started trajectory planning experiments")]
pub struct Cli {
    /// JSON run configuration; omitted keys keep their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for parallel commands (default: NEOTRAJ_WORKERS, then all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a scene file.
    Scene(commands::scene::SceneArgs),
    /// Fly the expert and record a training dataset.
    Collect(commands::collect::CollectArgs),
    /// Train the network on a dataset.
    Train(commands::train::TrainArgs),
    /// Fly one episode.
    Fly(commands::fly::FlyArgs),
    /// Run a grid of episodes and aggregate per scene and initializer.
    Bench(commands::bench::BenchArgs),
    /// Compare tracking error with and without the foreseeing horizon.
    Latency(commands::latency::LatencyArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(commands::gradcheck::GradcheckArgs),
}

/// Settings shared by every command.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: RunConfig,
    pub workers: usize,
}

impl Context {
    pub fn new(config: RunConfig, workers: usize) -> Self {
        Self {
            config,
            workers: workers.max(1),
        }
    }

    /// Resolves `--config` and the worker count.
    pub fn from_cli(cli: &Cli) -> Result<Self, CliError> {
        let config = match &cli.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let workers = match cli.workers {
            Some(n) => n,
            None => match std::env::var(WORKERS_ENV) {
                Ok(v) => v
                    .trim()
                    .parse()
                    .map_err(|_| CliError::Usage(format!("{WORKERS_ENV}={v:?} is not a worker count")))?,
                Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
            },
        };
        if workers == 0 {
            return Err(CliError::Usage("worker count must be at least 1".into()));
        }
        Ok(Self::new(config, workers))
    }

    /// Maps `f` over `0..n` on the worker pool; results keep index order.
    pub fn par_map<T, F>(&self, n: usize, f: F) -> Result<Vec<T>, CliError>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(CliError::runtime)?;
        Ok(pool.install(|| (0..n).into_par_iter().map(f).collect()))
    }
}

/// Strategy names accepted by `--init`.
pub const INIT_NAMES: [&str; 4] = ["baseline", "geo", "expert", "neo"];

/// Builds a strategy by name; `neo` needs a model.
pub fn strategy_named(name: &str, model: Option<&Arc<MlpModel>>) -> Result<InitStrategy, CliError> {
    match name {
        "baseline" => Ok(InitStrategy::Baseline),
        "geo" => Ok(InitStrategy::Geo),
        "expert" => Ok(InitStrategy::Expert),
        "neo" => model
            .map(|m| InitStrategy::Neural(Arc::clone(m)))
            .ok_or_else(|| CliError::Usage("--init neo needs --model".into())),
        other => Err(CliError::Usage(format!(
            "unknown initializer {other:?} (expected one of {})",
            INIT_NAMES.join(", ")
        ))),
    }
}

/// Loads `--model` and checks that its output fits the configured pieces.
pub fn load_model(path: Option<&std::path::Path>, config: &RunConfig) -> Result<Option<Arc<MlpModel>>, CliError> {
    let Some(path) = path else { return Ok(None) };
    let model = MlpModel::load(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let m = config.init.pieces;
    let expected = config.dim * (m - 1) + m;
    if model.outputs() != expected {
        return Err(CliError::Config(format!(
            "{}: model has {} outputs, {m} pieces need {expected}",
            path.display(),
            model.outputs()
        )));
    }
    Ok(Some(Arc::new(model)))
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let ctx = Context::from_cli(&cli)?;
    match cli.command {
        Command::Scene(a) => commands::scene::cmd_scene(&a).map(|_| ()),
        Command::Collect(a) => commands::collect::cmd_collect(&ctx, &a).map(|_| ()),
        Command::Train(a) => commands::train::cmd_train(&ctx, &a).map(|_| ()),
        Command::Fly(a) => commands::fly::cmd_fly(&ctx, &a).map(|_| ()),
        Command::Bench(a) => commands::bench::cmd_bench(&ctx, &a).map(|_| ()),
        Command::Latency(a) => commands::latency::cmd_latency(&ctx, &a).map(|_| ()),
        Command::Gradcheck(a) => commands::gradcheck::cmd_gradcheck(&a).map(|_| ()),
    }
}
