//! Two-branch MLP that maps a depth scan and local state to an initial guess.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::minco::BoundaryState;
use crate::world::{GridWorld, Vec2};

pub mod dataset;
pub mod train;

pub use dataset::{
    collect_dataset, collect_episode, merge_collected, read_dataset, write_dataset, CollectJob, CollectSummary,
    DatasetRecord, DATASET_FORMAT,
};
pub use train::{adam_step, train, AdamState, EpochLoss, TrainConfig, TrainOutcome};

pub const MODEL_FORMAT: &str = "neotraj-model/1";
pub const SCAN_RAYS: usize = 64;
pub const SCAN_FOV_DEG: f64 = 87.0;
pub const SCAN_RANGE: f64 = 5.0;
pub const INERTIAL_LEN: usize = 12;
pub const OBS_LEN: usize = SCAN_RAYS + INERTIAL_LEN;
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dataset has {found} usable records, need at least {needed}")]
    EmptyDataset { found: usize, needed: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("unsupported format {found:?}, expected {expected:?}")]
    Format { found: String, expected: String },
    #[error("line {line}: {source}")]
    Record { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Drone-centric frame: origin at `position`, x axis along `heading`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vec2,
    pub heading: f64,
}

impl Pose {
    pub fn new(position: Vec2, heading: f64) -> Self {
        Self { position, heading }
    }

    pub fn rotate_to_body(&self, v: Vec2) -> Vec2 {
        let (s, c) = self.heading.sin_cos();
        Vec2::new(c * v.x + s * v.y, -s * v.x + c * v.y)
    }

    pub fn rotate_to_world(&self, v: Vec2) -> Vec2 {
        let (s, c) = self.heading.sin_cos();
        Vec2::new(c * v.x - s * v.y, s * v.x + c * v.y)
    }

    pub fn point_to_body(&self, p: Vec2) -> Vec2 {
        self.rotate_to_body(p - self.position)
    }

    pub fn point_to_world(&self, p: Vec2) -> Vec2 {
        self.position + self.rotate_to_world(p)
    }
}

/// Scale factors applied to inputs and position outputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub lookahead: f64,
    pub v_max: f64,
    pub max_range: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            lookahead: 6.0,
            v_max: 1.0,
            max_range: SCAN_RANGE,
        }
    }
}

/// Network input: normalized depth scan plus body-frame inertial features.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub depth: Vec<f64>,
    pub inertial: Vec<f64>,
}

fn planar(v: &DVector<f64>) -> Vec2 {
    Vec2::new(v[0], v[1])
}

impl Observation {
    /// Layout of `inertial`: body velocity, (cos θ, sin θ), local init
    /// position and velocity, local target position and velocity.
    pub fn build(
        world: &GridWorld,
        pose: &Pose,
        velocity: Vec2,
        init: &BoundaryState,
        target: &BoundaryState,
        norm: &Normalization,
    ) -> Self {
        let depth = world
            .raycast_scan(
                pose.position,
                pose.heading,
                SCAN_RAYS,
                SCAN_FOV_DEG.to_radians(),
                norm.max_range,
            )
            .into_iter()
            .map(|d| (d / norm.max_range).clamp(0.0, 1.0))
            .collect();
        let vel = |v: Vec2| pose.rotate_to_body(v) / norm.v_max;
        let pos = |p: Vec2| pose.point_to_body(p) / norm.lookahead;
        let parts = [
            vel(velocity),
            Vec2::new(pose.heading.cos(), pose.heading.sin()),
            pos(planar(&init.position)),
            vel(planar(&init.velocity)),
            pos(planar(&target.position)),
            vel(planar(&target.velocity)),
        ];
        let inertial = parts.iter().flat_map(|v| [v.x, v.y]).collect();
        Self { depth, inertial }
    }

    pub fn from_flat(v: &[f64]) -> Result<Self, NeuralError> {
        if v.len() != OBS_LEN {
            return Err(NeuralError::ShapeMismatch(format!(
                "observation of length {}, expected {OBS_LEN}",
                v.len()
            )));
        }
        Ok(Self {
            depth: v[..SCAN_RAYS].to_vec(),
            inertial: v[SCAN_RAYS..].to_vec(),
        })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.depth.clone();
        v.extend_from_slice(&self.inertial);
        v
    }

    pub fn is_valid(&self) -> bool {
        self.depth.len() == SCAN_RAYS
            && self.inertial.len() == INERTIAL_LEN
            && self.depth.iter().all(|d| (0.0..=1.0).contains(d))
            && self.inertial.iter().all(|v| v.is_finite())
    }
}

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

fn leaky_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dense {
    /// `out × in`, one inner vector per output unit.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: vec![vec![0.0; inputs]; outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn random(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / inputs as f64).sqrt();
        Self {
            weights: (0..outputs)
                .map(|_| (0..inputs).map(|_| rng.random_range(-bound..bound)).collect())
                .collect(),
            bias: vec![0.0; outputs],
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn outputs(&self) -> usize {
        self.bias.len()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    fn param_count(&self) -> usize {
        self.outputs() * (self.inputs() + 1)
    }
}

/// Stack of dense layers. Leaky ReLU follows every layer except the last
/// when `linear_output` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Stack(pub Vec<Dense>);

struct StackTape {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl Stack {
    fn new(sizes: &[usize], rng: &mut ChaCha8Rng) -> Self {
        Stack(sizes.windows(2).map(|w| Dense::random(w[0], w[1], rng)).collect())
    }

    fn zeros_like(&self) -> Self {
        Stack(self.0.iter().map(|l| Dense::zeros(l.inputs(), l.outputs())).collect())
    }

    fn sizes(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.0.first().map(|l| vec![l.inputs()]).unwrap_or_default();
        s.extend(self.0.iter().map(Dense::outputs));
        s
    }

    fn forward(&self, x: &[f64], linear_output: bool, tape: Option<&mut StackTape>) -> Vec<f64> {
        let mut cur = x.to_vec();
        let last = self.0.len().saturating_sub(1);
        let mut tape = tape;
        for (k, layer) in self.0.iter().enumerate() {
            let pre = layer.apply(&cur);
            let out = if linear_output && k == last {
                pre.clone()
            } else {
                pre.iter().map(|&v| leaky(v)).collect()
            };
            if let Some(t) = tape.as_deref_mut() {
                t.inputs.push(std::mem::take(&mut cur));
                t.pre.push(pre);
            }
            cur = out;
        }
        cur
    }

    /// Accumulates parameter gradients into `grad` and returns `∂L/∂input`.
    fn backward(&self, tape: &StackTape, upstream: &[f64], linear_output: bool, grad: &mut Stack) -> Vec<f64> {
        let last = self.0.len().saturating_sub(1);
        let mut delta = upstream.to_vec();
        for k in (0..self.0.len()).rev() {
            if !(linear_output && k == last) {
                for (d, &p) in delta.iter_mut().zip(&tape.pre[k]) {
                    *d *= leaky_grad(p);
                }
            }
            let layer = &self.0[k];
            let g = &mut grad.0[k];
            let input = &tape.inputs[k];
            for (o, &d) in delta.iter().enumerate() {
                g.bias[o] += d;
                for (gw, &x) in g.weights[o].iter_mut().zip(input) {
                    *gw += d * x;
                }
            }
            let mut next = vec![0.0; layer.inputs()];
            for (row, &d) in layer.weights.iter().zip(&delta) {
                for (n, &w) in next.iter_mut().zip(row) {
                    *n += d * w;
                }
            }
            delta = next;
        }
        delta
    }

    fn flatten_into(&self, out: &mut Vec<f64>) {
        for l in &self.0 {
            for row in &l.weights {
                out.extend_from_slice(row);
            }
            out.extend_from_slice(&l.bias);
        }
    }

    fn assign_from(&mut self, src: &[f64]) -> usize {
        let mut i = 0;
        for l in &mut self.0 {
            for row in &mut l.weights {
                let n = row.len();
                row.copy_from_slice(&src[i..i + n]);
                i += n;
            }
            let n = l.bias.len();
            l.bias.copy_from_slice(&src[i..i + n]);
            i += n;
        }
        i
    }

    fn param_count(&self) -> usize {
        self.0.iter().map(Dense::param_count).sum()
    }

    fn is_finite(&self) -> bool {
        self.0
            .iter()
            .all(|l| l.bias.iter().chain(l.weights.iter().flatten()).all(|v| v.is_finite()))
    }
}

/// Trainable parameters of the three stacks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Network {
    pub depth: Stack,
    pub inertial: Stack,
    pub head: Stack,
}

impl Network {
    pub fn zeros_like(&self) -> Self {
        Self {
            depth: self.depth.zeros_like(),
            inertial: self.inertial.zeros_like(),
            head: self.head.zeros_like(),
        }
    }

    /// Parameters in a fixed order: depth, inertial, head; per layer the
    /// weight rows then the bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        self.depth.flatten_into(&mut v);
        self.inertial.flatten_into(&mut v);
        self.head.flatten_into(&mut v);
        v
    }

    pub fn assign(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.param_count(), "parameter vector length");
        let mut i = self.depth.assign_from(params);
        i += self.inertial.assign_from(&params[i..]);
        self.head.assign_from(&params[i..]);
    }

    pub fn param_count(&self) -> usize {
        self.depth.param_count() + self.inertial.param_count() + self.head.param_count()
    }

    pub fn scale(&mut self, factor: f64) {
        let p: Vec<f64> = self.flatten().into_iter().map(|v| v * factor).collect();
        self.assign(&p);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSizes {
    pub depth: Vec<usize>,
    pub inertial: Vec<usize>,
    pub head: Vec<usize>,
}

impl Default for LayerSizes {
    fn default() -> Self {
        Self {
            depth: vec![SCAN_RAYS, 48, 24],
            inertial: vec![INERTIAL_LEN, 24, 24],
            head: vec![48, 96, 96, 7],
        }
    }
}

impl LayerSizes {
    pub fn validate(&self) -> Result<(), NeuralError> {
        let ok = self.depth.len() >= 2
            && self.inertial.len() >= 2
            && self.head.len() >= 2
            && self.depth[0] == SCAN_RAYS
            && self.inertial[0] == INERTIAL_LEN
            && self.head[0] == self.depth.last().unwrap() + self.inertial.last().unwrap()
            && self
                .depth
                .iter()
                .chain(&self.inertial)
                .chain(&self.head)
                .all(|&n| n > 0);
        if ok {
            Ok(())
        } else {
            Err(NeuralError::ShapeMismatch(format!("inconsistent layer sizes {self:?}")))
        }
    }

    pub fn outputs(&self) -> usize {
        *self.head.last().expect("validated")
    }
}

/// Model file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpModel {
    pub format: String,
    pub layer_sizes: LayerSizes,
    pub normalization: Normalization,
    pub network: Network,
}

/// Intermediate values kept by [`MlpModel::forward_tape`] for backprop.
struct Tape {
    depth: StackTape,
    inertial: StackTape,
    head: StackTape,
    split: usize,
}

impl MlpModel {
    pub fn new(sizes: LayerSizes, normalization: Normalization, seed: u64) -> Result<Self, NeuralError> {
        sizes.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let network = Network {
            depth: Stack::new(&sizes.depth, &mut rng),
            inertial: Stack::new(&sizes.inertial, &mut rng),
            head: Stack::new(&sizes.head, &mut rng),
        };
        Ok(Self {
            format: MODEL_FORMAT.to_string(),
            layer_sizes: sizes,
            normalization,
            network,
        })
    }

    pub fn with_defaults(seed: u64) -> Self {
        Self::new(LayerSizes::default(), Normalization::default(), seed).expect("default sizes are consistent")
    }

    pub fn outputs(&self) -> usize {
        self.layer_sizes.outputs()
    }

    fn check(&self, obs: &Observation) -> Result<(), NeuralError> {
        if obs.depth.len() != self.layer_sizes.depth[0] || obs.inertial.len() != self.layer_sizes.inertial[0] {
            return Err(NeuralError::ShapeMismatch(format!(
                "observation ({}, {}) for model ({}, {})",
                obs.depth.len(),
                obs.inertial.len(),
                self.layer_sizes.depth[0],
                self.layer_sizes.inertial[0]
            )));
        }
        Ok(())
    }

    /// Raw network output in normalized units.
    pub fn forward(&self, obs: &Observation) -> Result<Vec<f64>, NeuralError> {
        self.check(obs)?;
        let mut features = self.network.depth.forward(&obs.depth, false, None);
        features.extend(self.network.inertial.forward(&obs.inertial, false, None));
        Ok(self.network.head.forward(&features, true, None))
    }

    fn forward_tape(&self, obs: &Observation) -> (Vec<f64>, Tape) {
        let new_tape = || StackTape {
            inputs: Vec::new(),
            pre: Vec::new(),
        };
        let mut tape = Tape {
            depth: new_tape(),
            inertial: new_tape(),
            head: new_tape(),
            split: 0,
        };
        let mut features = self.network.depth.forward(&obs.depth, false, Some(&mut tape.depth));
        tape.split = features.len();
        features.extend(
            self.network
                .inertial
                .forward(&obs.inertial, false, Some(&mut tape.inertial)),
        );
        let out = self.network.head.forward(&features, true, Some(&mut tape.head));
        (out, tape)
    }

    /// Mean squared error over the batch and output dimensions, with its
    /// gradient in the same layout as [`Network`].
    pub fn backward<'b, I>(&self, batch: I) -> Result<(f64, Network), NeuralError>
    where
        I: IntoIterator<Item = &'b (Observation, Vec<f64>)>,
        I::IntoIter: ExactSizeIterator,
    {
        let batch = batch.into_iter();
        let mut grad = self.network.zeros_like();
        if batch.len() == 0 {
            return Ok((0.0, grad));
        }
        let outputs = self.outputs();
        let denom = (batch.len() * outputs) as f64;
        let mut loss = 0.0;
        for (obs, target) in batch {
            self.check(obs)?;
            if target.len() != outputs {
                return Err(NeuralError::ShapeMismatch(format!(
                    "target of length {}, expected {outputs}",
                    target.len()
                )));
            }
            let (out, tape) = self.forward_tape(obs);
            let upstream: Vec<f64> = out
                .iter()
                .zip(target)
                .map(|(y, t)| {
                    loss += (y - t).powi(2);
                    2.0 * (y - t) / denom
                })
                .collect();
            let d_features = self.network.head.backward(&tape.head, &upstream, true, &mut grad.head);
            self.network
                .depth
                .backward(&tape.depth, &d_features[..tape.split], false, &mut grad.depth);
            self.network
                .inertial
                .backward(&tape.inertial, &d_features[tape.split..], false, &mut grad.inertial);
        }
        Ok((loss / denom, grad))
    }

    pub fn mse(&self, data: &[(Observation, Vec<f64>)]) -> Result<f64, NeuralError> {
        let mut total = 0.0;
        for (obs, target) in data {
            let out = self.forward(obs)?;
            total += out.iter().zip(target).map(|(y, t)| (y - t).powi(2)).sum::<f64>();
        }
        Ok(total / (data.len().max(1) * self.outputs()) as f64)
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        if self.format != MODEL_FORMAT {
            return Err(NeuralError::Format {
                found: self.format.clone(),
                expected: MODEL_FORMAT.into(),
            });
        }
        self.layer_sizes.validate()?;
        let n = &self.network;
        if n.depth.sizes() != self.layer_sizes.depth
            || n.inertial.sizes() != self.layer_sizes.inertial
            || n.head.sizes() != self.layer_sizes.head
        {
            return Err(NeuralError::ShapeMismatch("weights disagree with layer_sizes".into()));
        }
        let rect = |s: &Stack| s.0.iter().all(|l| l.weights.iter().all(|r| r.len() == l.inputs()));
        if !(rect(&n.depth) && rect(&n.inertial) && rect(&n.head)) {
            return Err(NeuralError::ShapeMismatch("ragged weight matrix".into()));
        }
        if !(n.depth.is_finite() && n.inertial.is_finite() && n.head.is_finite()) {
            return Err(NeuralError::ShapeMismatch("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, NeuralError> {
        let m: Self = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, NeuralError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), NeuralError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    /// Body-frame waypoints (meters, `D × (M−1)` column-major) and the
    /// time channel in `τ` space, decoded from a raw output.
    pub fn decode(&self, raw: &[f64], pieces: usize) -> (Vec<f64>, Vec<f64>) {
        let nq = raw.len() - pieces;
        let q = raw[..nq].iter().map(|v| v * self.normalization.lookahead).collect();
        (q, raw[nq..].to_vec())
    }

    /// Inverse of [`MlpModel::decode`].
    pub fn encode(norm: &Normalization, body_waypoints: &[f64], tau: &[f64]) -> Vec<f64> {
        let mut v: Vec<f64> = body_waypoints.iter().map(|q| q / norm.lookahead).collect();
        v.extend_from_slice(tau);
        v
    }
}
