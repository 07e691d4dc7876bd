use std::fmt::Write as _;
use std::io::BufReader;
use std::path::PathBuf;

use clap::Args;
use neotraj::neural::{
    read_dataset, train, DatasetRecord, LayerSizes, MlpModel, NeuralError, TrainConfig, TrainOutcome,
};
use serde::Serialize;

use super::emit;
use crate::error::{write_file, CliError};
use crate::{Context, RunConfig};

pub const CURVE_CSV_HEADER: &str = "epoch,train,validation";

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Dataset file (JSONL).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Loss-curve CSV (next to the model when omitted).
    #[arg(long)]
    pub curve: Option<PathBuf>,
}

impl TrainArgs {
    pub fn train_config(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs.unwrap_or(base.epochs),
            learning_rate: self.lr.unwrap_or(base.learning_rate),
            seed: self.seed.unwrap_or(base.seed),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            ..*base
        }
    }
}

/// Default network sized for the configured number of pieces.
pub fn fresh_model(config: &RunConfig, seed: u64) -> Result<MlpModel, CliError> {
    let m = config.init.pieces;
    let mut sizes = LayerSizes::default();
    *sizes.head.last_mut().expect("non-empty") = config.dim * (m - 1) + m;
    MlpModel::new(sizes, config.episode().normalization(), seed).map_err(|e| CliError::Config(e.to_string()))
}

pub fn train_records(
    config: &RunConfig,
    records: &[DatasetRecord],
    tc: &TrainConfig,
) -> Result<TrainOutcome, CliError> {
    let data = records
        .iter()
        .map(|r| r.pair())
        .collect::<Result<Vec<_>, _>>()
        .map_err(CliError::runtime)?;
    let model = fresh_model(config, tc.seed)?;
    if let Some((_, t)) = data.first().filter(|(_, t)| t.len() != model.outputs()) {
        return Err(CliError::Config(format!(
            "dataset targets have {} entries, the configured model predicts {}",
            t.len(),
            model.outputs()
        )));
    }
    train(model, &data, tc).map_err(|e| match e {
        NeuralError::InvalidConfig(m) => CliError::Config(m),
        other => CliError::runtime(other),
    })
}

pub fn curve_csv(outcome: &TrainOutcome) -> String {
    let mut s = format!("{CURVE_CSV_HEADER}\n");
    for e in &outcome.curve {
        let _ = writeln!(s, "{},{},{}", e.epoch, e.train, e.validation);
    }
    s
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    format: &'static str,
    records: usize,
    train_size: usize,
    validation_size: usize,
    best_epoch: usize,
    best_train: f64,
    best_validation: f64,
}

pub fn cmd_train(ctx: &Context, args: &TrainArgs) -> Result<TrainOutcome, CliError> {
    let file = std::fs::File::open(&args.data).map_err(|e| CliError::io(&args.data, e))?;
    let records =
        read_dataset(BufReader::new(file)).map_err(|e| CliError::runtime(format!("{}: {e}", args.data.display())))?;
    let tc = args.train_config(&ctx.config.train);
    let outcome = train_records(&ctx.config, &records, &tc)?;
    outcome.model.save(&args.out).map_err(CliError::runtime)?;
    let curve = args
        .curve
        .clone()
        .unwrap_or_else(|| args.out.with_extension("curve.csv"));
    write_file(&curve, curve_csv(&outcome))?;
    let best = outcome.curve[outcome.best_epoch];
    let summary = TrainSummary {
        format: "neotraj-train-summary/1",
        records: records.len(),
        train_size: outcome.train_size,
        validation_size: outcome.validation_size,
        best_epoch: outcome.best_epoch,
        best_train: best.train,
        best_validation: best.validation,
    };
    emit(
        None,
        &serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    Ok(outcome)
}
