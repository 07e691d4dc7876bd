use std::path::PathBuf;

use clap::Args;
use neotraj::{run_episode, EpisodeReport};

use super::emit;
use crate::error::{write_file, CliError};
use crate::scenes::{LoadedScene, SceneSource};
use crate::seeds::layout_seed;
use crate::{load_model, strategy_named, svg, Context};

#[derive(Debug, Clone, Args)]
pub struct FlyArgs {
    /// Preset id or scene file.
    #[arg(long)]
    pub scene: SceneSource,
    /// baseline, geo, expert or neo.
    #[arg(long, default_value = "baseline")]
    pub init: String,
    /// Model file, required for neo.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Episode seed; random presets also draw their layout from it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report JSON (stdout when omitted).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Sample log CSV.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// SVG plot of the flight.
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

pub fn cmd_fly(ctx: &Context, args: &FlyArgs) -> Result<EpisodeReport, CliError> {
    let model = load_model(args.model.as_deref(), &ctx.config)?;
    let strategy = strategy_named(&args.init, model.as_ref())?;
    let res = ctx.config.resolution;
    let (spec, world) = LoadedScene::load(&args.scene, res)?.instantiate(layout_seed(args.seed), res)?;
    let report = run_episode(&world, &spec, &strategy, &ctx.config.episode(), args.seed);
    emit(args.report.as_deref(), &report.to_json())?;
    if let Some(p) = &args.log {
        write_file(p, report.samples_csv())?;
    }
    if let Some(p) = &args.svg {
        write_file(p, svg::flight_plot(&spec, &report))?;
    }
    Ok(report)
}
