use std::path::PathBuf;

use clap::Args;
use neotraj::neural::{collect_episode, merge_collected, write_dataset, CollectJob, CollectSummary, DatasetRecord};
use serde::Serialize;

use super::emit;
use crate::error::{write_file, CliError};
use crate::scenes::{LoadedScene, SceneSource};
use crate::seeds::{episode_seed, layout_seed};
use crate::Context;

pub const SUMMARY_FORMAT: &str = "neotraj-collect-summary/1";

#[derive(Debug, Clone, Args)]
pub struct CollectArgs {
    /// Comma-separated preset ids or scene files.
    #[arg(long, value_delimiter = ',', default_value = "4")]
    pub scenes: Vec<SceneSource>,
    /// Episodes per scene.
    #[arg(long, default_value_t = 10)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Dataset file (JSONL).
    #[arg(long)]
    pub out: PathBuf,
    /// Summary file (stdout when omitted).
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
struct SummaryFile<'a> {
    format: &'a str,
    #[serde(flatten)]
    summary: &'a CollectSummary,
}

/// Episodes run in parallel; records are concatenated in (scene, episode)
/// order.
pub fn collect(
    ctx: &Context,
    scenes: &[SceneSource],
    episodes: usize,
    seed: u64,
) -> Result<(Vec<DatasetRecord>, CollectSummary), CliError> {
    let res = ctx.config.resolution;
    let loaded = scenes
        .iter()
        .map(|s| LoadedScene::load(s, res))
        .collect::<Result<Vec<_>, _>>()?;
    let cfg = ctx.config.episode();
    let parts = ctx.par_map(loaded.len() * episodes, |i| {
        let (s, e) = (i / episodes, i % episodes);
        let ep = episode_seed(seed, s, e);
        let (spec, world) = loaded[s].instantiate(layout_seed(ep), res)?;
        let job = CollectJob {
            scene_id: loaded[s].source.tag(),
            spec: &spec,
            world: &world,
            seed: ep,
        };
        Ok::<_, CliError>(collect_episode(&job, &cfg))
    })?;
    Ok(merge_collected(parts.into_iter().collect::<Result<Vec<_>, _>>()?))
}

pub fn cmd_collect(ctx: &Context, args: &CollectArgs) -> Result<CollectSummary, CliError> {
    if args.scenes.is_empty() {
        return Err(CliError::Usage("--scenes is empty".into()));
    }
    let (records, summary) = collect(ctx, &args.scenes, args.episodes, args.seed)?;
    let mut buf = Vec::new();
    write_dataset(&mut buf, &records).map_err(CliError::runtime)?;
    write_file(&args.out, buf)?;
    let text = serde_json::to_string_pretty(&SummaryFile {
        format: SUMMARY_FORMAT,
        summary: &summary,
    })
    .expect("summary serializes");
    emit(args.summary.as_deref(), &text)?;
    Ok(summary)
}
