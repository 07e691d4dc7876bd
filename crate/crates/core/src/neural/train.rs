//! Adam + MSE training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{MlpModel, NeuralError, Observation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 64,
            epochs: 200,
            seed: 0,
            validation_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NeuralError> {
        let bad = |m: &str| Err(NeuralError::InvalidConfig(m.into()));
        if !(self.learning_rate > 0.0 && self.epsilon > 0.0) {
            return bad("learning_rate and epsilon must be positive");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("betas must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

/// Bias-corrected Adam update of `params` in place.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64], cfg: &TrainConfig) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train: f64,
    pub validation: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: MlpModel,
    pub curve: Vec<EpochLoss>,
    pub best_epoch: usize,
    pub train_size: usize,
    pub validation_size: usize,
}

/// Trains `model` on `(observation, raw target)` pairs.
///
/// The validation split is taken after one seeded shuffle. When it comes out
/// empty the training loss selects the best epoch instead.
pub fn train(
    mut model: MlpModel,
    data: &[(Observation, Vec<f64>)],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, NeuralError> {
    cfg.validate()?;
    model.validate()?;
    if data.len() < cfg.batch_size {
        return Err(NeuralError::EmptyDataset {
            found: data.len(),
            needed: cfg.batch_size,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((data.len() as f64) * cfg.validation_fraction).floor() as usize;
    let n_val = n_val.min(data.len() - 1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let validation: Vec<(Observation, Vec<f64>)> = val_idx.iter().map(|&i| data[i].clone()).collect();
    let mut train_idx = train_idx.to_vec();

    let mut params = model.network.flatten();
    let mut adam = AdamState::new(params.len());
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut best = (f64::INFINITY, 0usize, model.network.clone());

    for epoch in 0..cfg.epochs {
        train_idx.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in train_idx.chunks(cfg.batch_size) {
            let (loss, grad) = model.backward(chunk.iter().map(|&i| &data[i]))?;
            sum += loss * chunk.len() as f64;
            adam_step(&mut adam, &mut params, &grad.flatten(), cfg);
            model.network.assign(&params);
        }
        let train_loss = sum / train_idx.len() as f64;
        let validation_loss = if validation.is_empty() {
            f64::NAN
        } else {
            model.mse(&validation)?
        };
        curve.push(EpochLoss {
            epoch,
            train: train_loss,
            validation: validation_loss,
        });
        let score = if validation.is_empty() {
            train_loss
        } else {
            validation_loss
        };
        if score < best.0 {
            best = (score, epoch, model.network.clone());
        }
    }

    let (_, best_epoch, network) = best;
    model.network = network;
    Ok(TrainOutcome {
        model,
        curve,
        best_epoch,
        train_size: train_idx.len(),
        validation_size: validation.len(),
    })
}
