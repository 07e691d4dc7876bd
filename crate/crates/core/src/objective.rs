//! Weighted spatial-temporal objective over `(Q, τ)`.
//!
//! `H = ω_e K_e + ω_t K_t + ω_o K_o + ω_d K_d`: control effort, total time,
//! obstacle clearance and dynamic feasibility. The last two are time
//! integrals evaluated with a trapezoid rule on `κ + 1` samples per piece.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::minco::{self, falling, powi, BoundaryState, CoeffGradient, MincoError, TrajParams, Trajectory};
use crate::world::{GridWorld, Vec2};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error(transparent)]
    Minco(#[from] MincoError),
    #[error("world has no distance field")]
    WorldMissingDistanceField,
    #[error("duration {value} outside ({min}, {max})")]
    OutOfRange { value: f64, min: f64, max: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostWeights {
    pub effort: f64,
    pub time: f64,
    pub obstacle: f64,
    pub feasibility: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self::from_array([1.0, 1.0, 10000.0, 1.0])
    }
}

impl CostWeights {
    pub fn from_array(w: [f64; 4]) -> Self {
        Self {
            effort: w[0],
            time: w[1],
            obstacle: w[2],
            feasibility: w[3],
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.effort, self.time, self.obstacle, self.feasibility]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PenaltyConfig {
    /// Sample intervals per piece (κ).
    pub samples_per_piece: usize,
    /// Clearance below which the obstacle penalty activates.
    pub d_safe: f64,
    pub v_max: f64,
    pub a_max: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            samples_per_piece: 16,
            d_safe: 0.4,
            v_max: 1.0,
            a_max: 2.0,
        }
    }
}

/// Sigmoid map between unconstrained `τ` and bounded durations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeTransform {
    pub t_min: f64,
    pub t_max: f64,
}

impl Default for TimeTransform {
    fn default() -> Self {
        Self { t_min: 0.5, t_max: 5.0 }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl TimeTransform {
    pub fn tau_to_time(&self, tau: f64) -> f64 {
        (self.t_max - self.t_min) * sigmoid(tau) + self.t_min
    }

    pub fn time_to_tau(&self, t: f64) -> Result<f64, ObjectiveError> {
        if !(t > self.t_min && t < self.t_max) {
            return Err(ObjectiveError::OutOfRange {
                value: t,
                min: self.t_min,
                max: self.t_max,
            });
        }
        Ok(((t - self.t_min) / (self.t_max - t)).ln())
    }

    /// `dt̄/dτ` at `tau`.
    pub fn dtime_dtau(&self, tau: f64) -> f64 {
        let s = sigmoid(tau);
        (self.t_max - self.t_min) * s * (1.0 - s)
    }

    /// Clamps `t` into the open interval with the given margin.
    pub fn clamp(&self, t: f64, margin: f64) -> f64 {
        t.clamp(self.t_min + margin, self.t_max - margin)
    }

    pub fn taus_to_times(&self, tau: &[f64]) -> Vec<f64> {
        tau.iter().map(|&x| self.tau_to_time(x)).collect()
    }

    pub fn times_to_taus(&self, t: &[f64]) -> Result<Vec<f64>, ObjectiveError> {
        t.iter().map(|&x| self.time_to_tau(x)).collect()
    }
}

/// Cost of one term with gradients in `(C, t̄)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TermCost {
    pub cost: f64,
    pub grad: CoeffGradient,
}

impl TermCost {
    fn zero(traj: &Trajectory) -> Self {
        Self {
            cost: 0.0,
            grad: CoeffGradient::zeros_like(traj),
        }
    }
}

/// `Σ_i ∫ ‖p_i^(S)‖²` in closed form.
pub fn control_effort(traj: &Trajectory) -> TermCost {
    let s = traj.order();
    let n = 2 * s;
    let mut out = TermCost::zero(traj);
    for (i, c) in traj.coefficients().iter().enumerate() {
        let t = traj.durations()[i];
        let mut end = DVector::zeros(traj.dim());
        for d in 0..traj.dim() {
            let a: Vec<f64> = (0..n).map(|k| falling(k, s) * c[(k, d)]).collect();
            for k in s..n {
                let mut row = 0.0;
                for l in s..n {
                    let e = k + l - 2 * s + 1;
                    row += a[l] * powi(t, e) / e as f64;
                }
                out.cost += a[k] * row;
                out.grad.coeffs[i][(k, d)] += 2.0 * falling(k, s) * row;
            }
            end[d] = (s..n).map(|k| a[k] * powi(t, k - s)).sum::<f64>();
        }
        out.grad.durations[i] += end.norm_squared();
    }
    out
}

/// `Σ t̄_i` with an all-ones gradient.
pub fn time_cost(durations: &[f64]) -> (f64, Vec<f64>) {
    (durations.iter().sum(), vec![1.0; durations.len()])
}

/// Penalty value with its partials w.r.t. position, velocity, acceleration.
struct SamplePenalty {
    value: f64,
    d_pos: DVector<f64>,
    d_vel: DVector<f64>,
    d_acc: DVector<f64>,
}

/// Trapezoid accumulation `(t̄/κ) Σ ω_j P(p(t_j))`, with gradients through
/// the sample states and the sample times `t_j = (j/κ) t̄`.
fn integrate_penalty<F>(traj: &Trajectory, kappa: usize, mut penalty: F) -> TermCost
where
    F: FnMut(&DVector<f64>, &DVector<f64>, &DVector<f64>) -> Option<SamplePenalty>,
{
    let mut out = TermCost::zero(traj);
    let n = 2 * traj.order();
    let dim = traj.dim();
    for i in 0..traj.pieces() {
        let t_piece = traj.durations()[i];
        let step = t_piece / kappa as f64;
        let mut piece_cost = 0.0;
        let mut d_time = 0.0;
        for j in 0..=kappa {
            let w = if j == 0 || j == kappa { 0.5 } else { 1.0 };
            let frac = j as f64 / kappa as f64;
            let t = frac * t_piece;
            let pos = traj.eval_piece(i, t, 0);
            let vel = traj.eval_piece(i, t, 1);
            let acc = traj.eval_piece(i, t, 2);
            let Some(p) = penalty(&pos, &vel, &acc) else {
                continue;
            };
            let jerk = traj.eval_piece(i, t, 3);
            piece_cost += w * p.value;
            let scale = step * w;
            let grad = &mut out.grad.coeffs[i];
            for k in 0..n {
                let b0 = powi(t, k);
                let b1 = if k >= 1 { falling(k, 1) * powi(t, k - 1) } else { 0.0 };
                let b2 = if k >= 2 { falling(k, 2) * powi(t, k - 2) } else { 0.0 };
                for d in 0..dim {
                    grad[(k, d)] += scale * (p.d_pos[d] * b0 + p.d_vel[d] * b1 + p.d_acc[d] * b2);
                }
            }
            d_time += scale * frac * (p.d_pos.dot(&vel) + p.d_vel.dot(&acc) + p.d_acc.dot(&jerk));
        }
        out.cost += step * piece_cost;
        out.grad.durations[i] += piece_cost / kappa as f64 + d_time;
    }
    out
}

/// Clearance penalty `max(d_safe − dist, 0)³` against the world's distance field.
pub fn obstacle_cost(traj: &Trajectory, world: &GridWorld, cfg: &PenaltyConfig) -> Result<TermCost, ObjectiveError> {
    if !world.has_distance_field() {
        return Err(ObjectiveError::WorldMissingDistanceField);
    }
    if traj.dim() != 2 {
        return Err(ObjectiveError::ShapeMismatch(
            "obstacle cost needs a planar trajectory".into(),
        ));
    }
    let d_safe = cfg.d_safe;
    let zeros = DVector::zeros(2);
    Ok(integrate_penalty(traj, cfg.samples_per_piece, |pos, _, _| {
        let (dist, g) = world.distance_with_gradient(Vec2::new(pos[0], pos[1]))?;
        let viol = d_safe - dist;
        if viol <= 0.0 {
            return None;
        }
        let slope = -3.0 * viol * viol;
        Some(SamplePenalty {
            value: viol * viol * viol,
            d_pos: DVector::from_column_slice(&[slope * g.x, slope * g.y]),
            d_vel: zeros.clone(),
            d_acc: zeros.clone(),
        })
    }))
}

/// Velocity and acceleration penalties `max(‖·‖² − limit², 0)³`.
pub fn feasibility_cost(traj: &Trajectory, cfg: &PenaltyConfig) -> TermCost {
    let v2 = cfg.v_max * cfg.v_max;
    let a2 = cfg.a_max * cfg.a_max;
    let dim = traj.dim();
    integrate_penalty(traj, cfg.samples_per_piece, |_, vel, acc| {
        let vv = vel.norm_squared() - v2;
        let aa = acc.norm_squared() - a2;
        if vv <= 0.0 && aa <= 0.0 {
            return None;
        }
        let mut p = SamplePenalty {
            value: 0.0,
            d_pos: DVector::zeros(dim),
            d_vel: DVector::zeros(dim),
            d_acc: DVector::zeros(dim),
        };
        if vv > 0.0 {
            p.value += vv * vv * vv;
            p.d_vel = vel * (6.0 * vv * vv);
        }
        if aa > 0.0 {
            p.value += aa * aa * aa;
            p.d_acc = acc * (6.0 * aa * aa);
        }
        Some(p)
    })
}

/// Per-term breakdown of a weighted objective (unweighted values).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub effort: f64,
    pub time: f64,
    pub obstacle: f64,
    pub feasibility: f64,
}

impl CostBreakdown {
    pub fn weighted_total(&self, w: &CostWeights) -> f64 {
        w.effort * self.effort + w.time * self.time + w.obstacle * self.obstacle + w.feasibility * self.feasibility
    }
}

/// Weighted cost and its `(C, t̄)` gradient for a fixed trajectory.
pub fn weighted_cost(
    traj: &Trajectory,
    world: &GridWorld,
    weights: &CostWeights,
    cfg: &PenaltyConfig,
) -> Result<(f64, CoeffGradient, CostBreakdown), ObjectiveError> {
    let mut grad = CoeffGradient::zeros_like(traj);
    let mut parts = CostBreakdown::default();
    if weights.effort != 0.0 {
        let e = control_effort(traj);
        parts.effort = e.cost;
        grad.add_scaled(weights.effort, &e.grad);
    }
    if weights.time != 0.0 {
        let (c, g) = time_cost(traj.durations());
        parts.time = c;
        for (a, b) in grad.durations.iter_mut().zip(g) {
            *a += weights.time * b;
        }
    }
    if weights.obstacle != 0.0 {
        let o = obstacle_cost(traj, world, cfg)?;
        parts.obstacle = o.cost;
        grad.add_scaled(weights.obstacle, &o.grad);
    }
    if weights.feasibility != 0.0 {
        let f = feasibility_cost(traj, cfg);
        parts.feasibility = f.cost;
        grad.add_scaled(weights.feasibility, &f.grad);
    }
    Ok((parts.weighted_total(weights), grad, parts))
}

/// One local planning problem: boundary states, world and cost settings.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub init: &'a BoundaryState,
    pub target: &'a BoundaryState,
    pub world: &'a GridWorld,
    pub weights: &'a CostWeights,
    pub penalty: &'a PenaltyConfig,
    pub time: &'a TimeTransform,
}

/// Objective value with gradients in `(Q, τ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub d_waypoints: DMatrix<f64>,
    pub d_tau: Vec<f64>,
    pub breakdown: CostBreakdown,
}

impl<'a> Problem<'a> {
    pub fn dim(&self) -> usize {
        self.init.dim()
    }

    /// Evaluates `H(Q, τ)` and its gradient.
    pub fn total_objective(&self, waypoints: &DMatrix<f64>, tau: &[f64]) -> Result<Evaluation, ObjectiveError> {
        let durations = self.time.taus_to_times(tau);
        let params = TrajParams::new(waypoints.clone(), durations)?;
        let traj = minco::solve_coeffs(self.init, self.target, &params)?;
        let (value, grad, breakdown) = weighted_cost(&traj, self.world, self.weights, self.penalty)?;
        let g = minco::propagate_gradients(&traj, &grad, &params)?;
        let d_tau = g
            .durations
            .iter()
            .zip(tau)
            .map(|(d, &x)| d * self.time.dtime_dtau(x))
            .collect();
        Ok(Evaluation {
            value,
            d_waypoints: g.waypoints,
            d_tau,
            breakdown,
        })
    }

    /// Objective at explicit durations (no `τ` mapping), e.g. to score a guess.
    pub fn cost_of(&self, params: &TrajParams) -> Result<(f64, CostBreakdown), ObjectiveError> {
        let traj = minco::solve_coeffs(self.init, self.target, params)?;
        let (value, _, parts) = weighted_cost(&traj, self.world, self.weights, self.penalty)?;
        Ok((value, parts))
    }

    /// Flat layout `[Q column-major, τ]`.
    pub fn pack(&self, waypoints: &DMatrix<f64>, tau: &[f64]) -> Vec<f64> {
        let mut x: Vec<f64> = waypoints.as_slice().to_vec();
        x.extend_from_slice(tau);
        x
    }

    pub fn unpack(&self, x: &[f64], pieces: usize) -> (DMatrix<f64>, Vec<f64>) {
        let dim = self.dim();
        let nq = dim * (pieces - 1);
        (
            DMatrix::from_column_slice(dim, pieces - 1, &x[..nq]),
            x[nq..nq + pieces].to_vec(),
        )
    }

    /// Flat-vector form for the solver; writes the gradient into `grad`.
    pub fn evaluate_flat(&self, x: &[f64], grad: &mut [f64]) -> Result<f64, ObjectiveError> {
        let dim = self.dim();
        if x.len() % (dim + 1) != 1 % (dim + 1) || x.len() != grad.len() {
            return Err(ObjectiveError::ShapeMismatch(format!(
                "flat vector of length {}",
                x.len()
            )));
        }
        let pieces = (x.len() + dim) / (dim + 1);
        let (q, tau) = self.unpack(x, pieces);
        let e = self.total_objective(&q, &tau)?;
        let nq = q.len();
        grad[..nq].copy_from_slice(e.d_waypoints.as_slice());
        grad[nq..].copy_from_slice(&e.d_tau);
        Ok(e.value)
    }
}

pub mod gradcheck;

#[cfg(test)]
mod tests;
