use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use neotraj::{run_episode, EpisodeReport, InitStrategy};
use serde::{Deserialize, Serialize};

use crate::error::{write_file, CliError};
use crate::scenes::{LoadedScene, SceneSource};
use crate::seeds::{episode_seed, layout_seed};
use crate::{load_model, strategy_named, svg, Context};

pub const AGGREGATE_CSV_HEADER: &str = "scene,init,success_rate,avg_cost,avg_plan_time,avg_iterations";
pub const BENCH_EPISODE_FORMAT: &str = "neotraj-bench-episode/1";

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// Comma-separated preset ids or scene files.
    #[arg(long, value_delimiter = ',', default_value = "4,5,6,7,8,9")]
    pub scenes: Vec<SceneSource>,
    /// Episodes per scene and initializer.
    #[arg(long, default_value_t = 20)]
    pub runs: usize,
    /// Comma-separated initializers.
    #[arg(long, value_delimiter = ',', default_value = "baseline,geo")]
    pub inits: Vec<String>,
    /// Model file, required when the list contains neo.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Also write SVG bar charts.
    #[arg(long)]
    pub plot: bool,
    /// Record measured plan wall time (makes outputs machine dependent).
    #[arg(long)]
    pub wall_time: bool,
}

/// One line of `episodes.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchEpisode {
    pub format: String,
    pub scene: String,
    pub init: String,
    pub run: usize,
    pub seed: u64,
    pub report: EpisodeReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub scene: String,
    pub init: String,
    pub episodes: usize,
    pub success_rate: f64,
    /// Mean trajectory cost over successful episodes.
    pub avg_cost: Option<f64>,
    pub avg_plan_time: f64,
    /// Mean solver iterations per replan, pooled over episodes.
    pub avg_iterations: f64,
    pub replans: usize,
}

#[derive(Debug, Clone)]
pub struct BenchOutcome {
    pub episodes: Vec<BenchEpisode>,
    pub rows: Vec<AggregateRow>,
}

impl BenchOutcome {
    pub fn row(&self, scene: &str, init: &str) -> Option<&AggregateRow> {
        self.rows.iter().find(|r| r.scene == scene && r.init == init)
    }

    pub fn aggregate_csv(&self) -> String {
        let mut s = format!("{AGGREGATE_CSV_HEADER}\n");
        for r in &self.rows {
            let cost = r.avg_cost.map(|c| c.to_string()).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.scene, r.init, r.success_rate, cost, r.avg_plan_time, r.avg_iterations
            );
        }
        s
    }

    pub fn episodes_jsonl(&self) -> String {
        let mut s = String::new();
        for e in &self.episodes {
            s.push_str(&serde_json::to_string(e).expect("episode serializes"));
            s.push('\n');
        }
        s
    }
}

fn aggregate(scene: &str, init: &str, eps: &[&BenchEpisode]) -> AggregateRow {
    let n = eps.len();
    let ok: Vec<f64> = eps.iter().filter(|e| e.report.success).map(|e| e.report.cost).collect();
    let iterations: Vec<usize> = eps.iter().flat_map(|e| e.report.iterations.iter().copied()).collect();
    let plan_times: Vec<f64> = eps.iter().flat_map(|e| e.report.plan_times.iter().copied()).collect();
    let mean = |xs: &[f64]| {
        if xs.is_empty() {
            0.0
        } else {
            xs.iter().sum::<f64>() / xs.len() as f64
        }
    };
    AggregateRow {
        scene: scene.to_string(),
        init: init.to_string(),
        episodes: n,
        success_rate: if n == 0 { 0.0 } else { ok.len() as f64 / n as f64 },
        avg_cost: (!ok.is_empty()).then(|| mean(&ok)),
        avg_plan_time: mean(&plan_times),
        avg_iterations: mean(&iterations.iter().map(|&i| i as f64).collect::<Vec<_>>()),
        replans: iterations.len(),
    }
}

/// Runs every (scene, run) cell with each strategy on the same layout and
/// seed. Outputs are ordered by scene, then initializer, then run.
pub fn bench(
    ctx: &Context,
    scenes: &[SceneSource],
    strategies: &[InitStrategy],
    runs: usize,
    seed: u64,
    wall_time: bool,
) -> Result<BenchOutcome, CliError> {
    let res = ctx.config.resolution;
    let loaded = scenes
        .iter()
        .map(|s| LoadedScene::load(s, res))
        .collect::<Result<Vec<_>, _>>()?;
    let mut cfg = ctx.config.episode();
    cfg.replan.record_wall_time |= wall_time;
    let cells = ctx.par_map(loaded.len() * runs, |i| {
        let (s, r) = (i / runs, i % runs);
        let ep = episode_seed(seed, s, r);
        let (spec, world) = loaded[s].instantiate(layout_seed(ep), res)?;
        Ok::<_, CliError>(
            strategies
                .iter()
                .map(|st| run_episode(&world, &spec, st, &cfg, ep))
                .collect::<Vec<_>>(),
        )
    })?;
    let cells = cells.into_iter().collect::<Result<Vec<_>, _>>()?;

    let mut episodes = Vec::with_capacity(cells.len() * strategies.len());
    let mut rows = Vec::new();
    for (s, scene) in loaded.iter().enumerate() {
        let label = scene.source.label();
        for (k, st) in strategies.iter().enumerate() {
            let start = episodes.len();
            for r in 0..runs {
                let report = cells[s * runs + r][k].clone();
                episodes.push(BenchEpisode {
                    format: BENCH_EPISODE_FORMAT.to_string(),
                    scene: label.clone(),
                    init: st.name().to_string(),
                    run: r,
                    seed: episode_seed(seed, s, r),
                    report,
                });
            }
            let group: Vec<&BenchEpisode> = episodes[start..].iter().collect();
            rows.push(aggregate(&label, st.name(), &group));
        }
    }
    Ok(BenchOutcome { episodes, rows })
}

pub fn cmd_bench(ctx: &Context, args: &BenchArgs) -> Result<BenchOutcome, CliError> {
    if args.scenes.is_empty() || args.inits.is_empty() {
        return Err(CliError::Usage("--scenes and --inits must not be empty".into()));
    }
    let model = load_model(args.model.as_deref(), &ctx.config)?;
    let strategies = args
        .inits
        .iter()
        .map(|n| strategy_named(n.trim(), model.as_ref()))
        .collect::<Result<Vec<_>, _>>()?;
    let out = bench(ctx, &args.scenes, &strategies, args.runs, args.seed, args.wall_time)?;
    write_file(&args.out_dir.join("episodes.jsonl"), out.episodes_jsonl())?;
    write_file(&args.out_dir.join("aggregate.csv"), out.aggregate_csv())?;
    if args.plot {
        write_file(
            &args.out_dir.join("iterations.svg"),
            svg::bar_chart(&out.rows, "avg_iterations", |r| r.avg_iterations),
        )?;
        write_file(
            &args.out_dir.join("success.svg"),
            svg::bar_chart(&out.rows, "success_rate", |r| r.success_rate),
        )?;
    }
    print!("{}", out.aggregate_csv());
    Ok(out)
}
