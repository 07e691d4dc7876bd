//! Expert demonstrations: collection inside the simulator and the JSONL format.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{MlpModel, NeuralError, Observation, OBS_LEN};
use crate::initializers::{body_frame_target, InitStrategy};
use crate::replan_sim::{run_episode_observed, EpisodeConfig};
use crate::world::{GridWorld, SceneSpec};

pub const DATASET_FORMAT: &str = "neotraj-dataset/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub format: String,
    pub obs: Vec<f64>,
    /// Body-frame waypoints over the lookahead distance, then `τ`.
    pub target: Vec<f64>,
    pub scene: u32,
    pub t: f64,
}

impl DatasetRecord {
    pub fn observation(&self) -> Result<Observation, NeuralError> {
        Observation::from_flat(&self.obs)
    }

    pub fn pair(&self) -> Result<(Observation, Vec<f64>), NeuralError> {
        Ok((self.observation()?, self.target.clone()))
    }
}

pub fn write_dataset<W: Write>(mut out: W, records: &[DatasetRecord]) -> Result<(), NeuralError> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Parses JSONL, skipping blank lines.
pub fn read_dataset<R: BufRead>(input: R) -> Result<Vec<DatasetRecord>, NeuralError> {
    let mut records = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: DatasetRecord =
            serde_json::from_str(&line).map_err(|source| NeuralError::Record { line: i + 1, source })?;
        if r.format != DATASET_FORMAT {
            return Err(NeuralError::Format {
                found: r.format,
                expected: DATASET_FORMAT.into(),
            });
        }
        if r.obs.len() != OBS_LEN {
            return Err(NeuralError::ShapeMismatch(format!(
                "line {}: obs length {}",
                i + 1,
                r.obs.len()
            )));
        }
        records.push(r);
    }
    Ok(records)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CollectSummary {
    pub episodes: usize,
    pub succeeded: usize,
    pub records: usize,
}

/// One collection episode.
#[derive(Clone, Copy)]
pub struct CollectJob<'a> {
    /// Tag stored in each record's `scene` field.
    pub scene_id: u32,
    pub spec: &'a SceneSpec,
    pub world: &'a GridWorld,
    pub seed: u64,
}

/// Flies the expert once and records one sample per replan. The flag tells
/// whether the episode reached the goal.
pub fn collect_episode(job: &CollectJob<'_>, cfg: &EpisodeConfig) -> (Vec<DatasetRecord>, bool) {
    let norm = cfg.normalization();
    let mut records = Vec::new();
    let report = run_episode_observed(job.world, job.spec, &InitStrategy::Expert, cfg, job.seed, |ev| {
        let obs = Observation::build(ev.world, &ev.pose, ev.velocity, ev.init, ev.target, &norm);
        let (body, tau) = body_frame_target(&ev.result.params, &ev.pose, &cfg.planner);
        records.push(DatasetRecord {
            format: DATASET_FORMAT.to_string(),
            obs: obs.to_flat(),
            target: MlpModel::encode(&norm, &body, &tau),
            scene: job.scene_id,
            t: ev.t,
        });
    });
    (records, report.success)
}

/// Runs every job in order and concatenates their records.
pub fn collect_dataset(jobs: &[CollectJob<'_>], cfg: &EpisodeConfig) -> (Vec<DatasetRecord>, CollectSummary) {
    merge_collected(jobs.iter().map(|j| collect_episode(j, cfg)))
}

/// Concatenates per-episode results in iteration order.
pub fn merge_collected<I: IntoIterator<Item = (Vec<DatasetRecord>, bool)>>(
    parts: I,
) -> (Vec<DatasetRecord>, CollectSummary) {
    let mut records = Vec::new();
    let mut summary = CollectSummary::default();
    for (r, ok) in parts {
        summary.episodes += 1;
        summary.succeeded += ok as usize;
        records.extend(r);
    }
    summary.records = records.len();
    (records, summary)
}
