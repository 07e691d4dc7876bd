use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use neotraj::{run_episode, EpisodeReport, InitStrategy};
use serde::Serialize;

use super::emit;
use crate::error::CliError;
use crate::scenes::{LoadedScene, SceneSource};
use crate::seeds::{episode_seed, layout_seed};
use crate::{load_model, strategy_named, Context};

pub const METRICS: [&str; 3] = ["position_rmse", "velocity_rmse", "max_command_jump"];

#[derive(Debug, Clone, Args)]
pub struct LatencyArgs {
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub scenes: Vec<SceneSource>,
    #[arg(long, default_value_t = 10)]
    pub runs: usize,
    /// Injected planning latency (s).
    #[arg(long, default_value_t = 0.8)]
    pub latency: f64,
    /// Foreseeing horizons to compare (s).
    #[arg(long, value_delimiter = ',', default_value = "0,1.0")]
    pub foresee: Vec<f64>,
    #[arg(long, default_value = "geo")]
    pub init: String,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Table CSV (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyRow {
    pub scene: String,
    pub metric: String,
    /// One value per foreseeing horizon: the mean over runs for the RMSE
    /// rows, the maximum for the command jump.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LatencyTable {
    pub foresee: Vec<f64>,
    pub rows: Vec<LatencyRow>,
    /// `reports[scene][foresee][run]`.
    pub reports: Vec<Vec<Vec<EpisodeReport>>>,
}

impl LatencyTable {
    pub fn row(&self, scene: &str, metric: &str) -> Option<&LatencyRow> {
        self.rows.iter().find(|r| r.scene == scene && r.metric == metric)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("scene,metric");
        for f in &self.foresee {
            let _ = write!(s, ",foresee_{f}");
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(s, "{},{}", r.scene, r.metric);
            for v in &r.values {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

/// Paired episodes: run `r` of a scene uses the same layout and seed for
/// every horizon.
pub fn latency_study(
    ctx: &Context,
    scenes: &[SceneSource],
    strategy: &InitStrategy,
    runs: usize,
    latency: f64,
    foresee: &[f64],
    seed: u64,
) -> Result<LatencyTable, CliError> {
    let res = ctx.config.resolution;
    let loaded = scenes
        .iter()
        .map(|s| LoadedScene::load(s, res))
        .collect::<Result<Vec<_>, _>>()?;
    let configs = foresee
        .iter()
        .map(|&f| {
            let mut c = ctx.config.episode();
            c.replan.latency = latency;
            c.replan.foresee = f;
            c.replan
                .validate()
                .map(|_| c)
                .map_err(|e| CliError::Usage(e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let cells = ctx.par_map(loaded.len() * runs, |i| {
        let (s, r) = (i / runs, i % runs);
        let ep = episode_seed(seed, s, r);
        let (spec, world) = loaded[s].instantiate(layout_seed(ep), res)?;
        Ok::<_, CliError>(
            configs
                .iter()
                .map(|c| run_episode(&world, &spec, strategy, c, ep))
                .collect::<Vec<_>>(),
        )
    })?;
    let cells = cells.into_iter().collect::<Result<Vec<_>, _>>()?;

    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for (s, scene) in loaded.iter().enumerate() {
        let per_f: Vec<Vec<EpisodeReport>> = (0..configs.len())
            .map(|k| (0..runs).map(|r| cells[s * runs + r][k].clone()).collect())
            .collect();
        let mean =
            |xs: &[EpisodeReport], f: fn(&EpisodeReport) -> f64| xs.iter().map(f).sum::<f64>() / xs.len().max(1) as f64;
        let label = scene.source.label();
        for metric in METRICS {
            let values = per_f
                .iter()
                .map(|xs| match metric {
                    "position_rmse" => mean(xs, |r| r.position_rmse),
                    "velocity_rmse" => mean(xs, |r| r.velocity_rmse),
                    _ => xs.iter().map(|r| r.max_command_jump).fold(0.0, f64::max),
                })
                .collect();
            rows.push(LatencyRow {
                scene: label.clone(),
                metric: metric.to_string(),
                values,
            });
        }
        reports.push(per_f);
    }
    Ok(LatencyTable {
        foresee: foresee.to_vec(),
        rows,
        reports,
    })
}

pub fn cmd_latency(ctx: &Context, args: &LatencyArgs) -> Result<LatencyTable, CliError> {
    if args.scenes.is_empty() || args.foresee.is_empty() {
        return Err(CliError::Usage("--scenes and --foresee must not be empty".into()));
    }
    if !(args.latency >= 0.0) {
        return Err(CliError::Usage("--latency must be non-negative".into()));
    }
    let model = load_model(args.model.as_deref(), &ctx.config)?;
    let strategy = strategy_named(&args.init, model.as_ref())?;
    let table = latency_study(
        ctx,
        &args.scenes,
        &strategy,
        args.runs,
        args.latency,
        &args.foresee,
        args.seed,
    )?;
    emit(args.out.as_deref(), &table.to_csv())?;
    Ok(table)
}
