//! Minimum-control-effort piecewise polynomials.
//!
//! A trajectory of `M` pieces in `D` dimensions is fully determined by its
//! intermediate waypoints and per-piece durations. For an integrator chain
//! of order `S`, each piece is a polynomial of degree `N = 2S - 1` and the
//! coefficients solve a banded linear system that fixes `S` derivatives at
//! both ends, interpolates the waypoints and keeps derivatives `1..=2S-2`
//! continuous across interior knots.

mod banded;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use banded::{BandLu, BandMatrix};

/// Integrator-chain order used throughout the planner (minimum jerk).
pub const DEFAULT_ORDER: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MincoError {
    #[error("piece {index} has non-positive duration {value}")]
    NonPositiveDuration { index: usize, value: f64 },
    #[error("constraint system is singular")]
    SingularSystem,
    #[error("time {t} outside trajectory domain [0, {total}]")]
    OutOfDomain { t: f64, total: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Spatial-temporal decision variables: `D × (M-1)` waypoints and `M` durations.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajParams {
    pub waypoints: DMatrix<f64>,
    pub durations: Vec<f64>,
}

impl TrajParams {
    pub fn new(waypoints: DMatrix<f64>, durations: Vec<f64>) -> Result<Self, MincoError> {
        let p = Self { waypoints, durations };
        p.validate()?;
        Ok(p)
    }

    pub fn pieces(&self) -> usize {
        self.durations.len()
    }

    pub fn dim(&self) -> usize {
        self.waypoints.nrows()
    }

    pub fn validate(&self) -> Result<(), MincoError> {
        if self.durations.is_empty() {
            return Err(MincoError::ShapeMismatch("at least one piece required".into()));
        }
        if self.waypoints.ncols() + 1 != self.durations.len() {
            return Err(MincoError::ShapeMismatch(format!(
                "{} waypoints for {} pieces",
                self.waypoints.ncols(),
                self.durations.len()
            )));
        }
        for (index, &value) in self.durations.iter().enumerate() {
            if !(value > 0.0) || !value.is_finite() {
                return Err(MincoError::NonPositiveDuration { index, value });
            }
        }
        Ok(())
    }
}

/// Position, velocity and acceleration at one end of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryState {
    pub position: DVector<f64>,
    pub velocity: DVector<f64>,
    pub acceleration: DVector<f64>,
}

impl BoundaryState {
    pub fn new(position: DVector<f64>, velocity: DVector<f64>, acceleration: DVector<f64>) -> Self {
        Self {
            position,
            velocity,
            acceleration,
        }
    }

    /// Zero velocity and acceleration at `position`.
    pub fn at_rest(position: DVector<f64>) -> Self {
        let d = position.len();
        Self::new(position, DVector::zeros(d), DVector::zeros(d))
    }

    /// Acceleration defaults to zero.
    pub fn with_velocity(position: DVector<f64>, velocity: DVector<f64>) -> Self {
        let d = position.len();
        Self::new(position, velocity, DVector::zeros(d))
    }

    pub fn dim(&self) -> usize {
        self.position.len()
    }

    /// Derivative of the given order; orders above 2 are zero.
    pub fn derivative(&self, order: usize) -> DVector<f64> {
        match order {
            0 => self.position.clone(),
            1 => self.velocity.clone(),
            2 => self.acceleration.clone(),
            _ => DVector::zeros(self.dim()),
        }
    }
}

/// An executable piecewise polynomial.
#[derive(Debug, Clone)]
pub struct Trajectory {
    order: usize,
    coeffs: Vec<DMatrix<f64>>,
    durations: Vec<f64>,
    starts: Vec<f64>,
    system: Option<Arc<ConstraintSystem>>,
}

impl PartialEq for Trajectory {
    fn eq(&self, other: &Self) -> bool {
        self.order == other.order && self.coeffs == other.coeffs && self.durations == other.durations
    }
}

impl Trajectory {
    /// Builds a trajectory from explicit coefficients (each `(2S) × D`).
    pub fn from_coefficients(order: usize, coeffs: Vec<DMatrix<f64>>, durations: Vec<f64>) -> Result<Self, MincoError> {
        if coeffs.len() != durations.len() || coeffs.is_empty() {
            return Err(MincoError::ShapeMismatch("one coefficient matrix per piece".into()));
        }
        let dim = coeffs[0].ncols();
        if coeffs.iter().any(|c| c.nrows() != 2 * order || c.ncols() != dim) {
            return Err(MincoError::ShapeMismatch(
                "coefficient matrices must be (2S) x D".into(),
            ));
        }
        for (index, &value) in durations.iter().enumerate() {
            if !(value > 0.0) || !value.is_finite() {
                return Err(MincoError::NonPositiveDuration { index, value });
            }
        }
        Ok(Self::assemble(order, coeffs, durations, None))
    }

    /// A single-piece trajectory holding `position` for `duration` seconds.
    pub fn hold(position: &DVector<f64>, duration: f64) -> Self {
        let order = DEFAULT_ORDER;
        let mut c = DMatrix::zeros(2 * order, position.len());
        c.row_mut(0).copy_from(&position.transpose());
        Self::assemble(order, vec![c], vec![duration], None)
    }

    fn assemble(
        order: usize,
        coeffs: Vec<DMatrix<f64>>,
        durations: Vec<f64>,
        system: Option<Arc<ConstraintSystem>>,
    ) -> Self {
        let mut starts = Vec::with_capacity(durations.len() + 1);
        let mut acc = 0.0;
        starts.push(0.0);
        for &d in &durations {
            acc += d;
            starts.push(acc);
        }
        Self {
            order,
            coeffs,
            durations,
            starts,
            system,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn degree(&self) -> usize {
        2 * self.order - 1
    }

    pub fn dim(&self) -> usize {
        self.coeffs[0].ncols()
    }

    pub fn pieces(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coefficients(&self) -> &[DMatrix<f64>] {
        &self.coeffs
    }

    pub fn durations(&self) -> &[f64] {
        &self.durations
    }

    /// Knot times `t_0 = 0, t_1, ..., t_M`.
    pub fn knot_times(&self) -> &[f64] {
        &self.starts
    }

    pub fn total_duration(&self) -> f64 {
        *self.starts.last().expect("non-empty")
    }

    /// Evaluates the derivative of `order` at global time `t`.
    pub fn eval(&self, t: f64, order: usize) -> Result<DVector<f64>, MincoError> {
        let (piece, local) = self.locate(t)?;
        Ok(self.eval_piece(piece, local, order))
    }

    /// Evaluates piece `piece` at local time `local`, without domain checks.
    pub fn eval_piece(&self, piece: usize, local: f64, order: usize) -> DVector<f64> {
        let c = &self.coeffs[piece];
        let mut out = DVector::zeros(c.ncols());
        for k in order..c.nrows() {
            let w = falling(k, order) * powi(local, k - order);
            if w != 0.0 {
                for d in 0..c.ncols() {
                    out[d] += w * c[(k, d)];
                }
            }
        }
        out
    }

    /// Position, velocity and acceleration at `t`.
    pub fn state(&self, t: f64) -> Result<BoundaryState, MincoError> {
        let (piece, local) = self.locate(t)?;
        Ok(BoundaryState::new(
            self.eval_piece(piece, local, 0),
            self.eval_piece(piece, local, 1),
            self.eval_piece(piece, local, 2),
        ))
    }

    /// Maps a global time to (piece index, local time).
    pub fn locate(&self, t: f64) -> Result<(usize, f64), MincoError> {
        let total = self.total_duration();
        let slack = 1e-12 * total.max(1.0);
        if !(t >= -slack && t <= total + slack) {
            return Err(MincoError::OutOfDomain { t, total });
        }
        let t = t.clamp(0.0, total);
        let m = self.pieces();
        // index of the first knot strictly greater than t, minus one
        let i = self.starts[1..m].partition_point(|&s| s <= t);
        Ok((i, (t - self.starts[i]).min(self.durations[i])))
    }
}

/// Falling factorial `k (k-1) ... (k-r+1)`.
#[inline]
pub(crate) fn falling(k: usize, r: usize) -> f64 {
    if r > k {
        return 0.0;
    }
    ((k - r + 1)..=k).fold(1.0, |acc, v| acc * v as f64)
}

#[inline]
pub(crate) fn powi(x: f64, n: usize) -> f64 {
    let mut out = 1.0;
    for _ in 0..n {
        out *= x;
    }
    out
}

/// Row bookkeeping for the factorized boundary-intermediate value problem.
#[derive(Debug)]
struct ConstraintSystem {
    lu: BandLu,
}

/// Row of the constraint system that evaluates piece `piece` at its right end.
#[derive(Debug, Clone, Copy)]
struct RightEndRow {
    row: usize,
    piece: usize,
    derivative: usize,
}

struct Layout {
    order: usize,
    pieces: usize,
}

impl Layout {
    fn ncoef(&self) -> usize {
        2 * self.order
    }

    fn size(&self) -> usize {
        self.ncoef() * self.pieces
    }

    fn knot_base(&self, knot: usize) -> usize {
        self.order + self.ncoef() * (knot - 1)
    }

    fn continuity_row(&self, knot: usize, derivative: usize) -> usize {
        self.knot_base(knot) + derivative - 1
    }

    fn position_left_row(&self, knot: usize) -> usize {
        self.knot_base(knot) + self.ncoef() - 2
    }

    fn position_right_row(&self, knot: usize) -> usize {
        self.knot_base(knot) + self.ncoef() - 1
    }

    fn end_row(&self, derivative: usize) -> usize {
        self.order + self.ncoef() * (self.pieces - 1) + derivative
    }

    fn col(&self, piece: usize, k: usize) -> usize {
        self.ncoef() * piece + k
    }

    /// Every row whose entries depend on the duration of some piece.
    fn right_end_rows(&self) -> Vec<RightEndRow> {
        let s = self.order;
        let mut rows = Vec::new();
        for knot in 1..self.pieces {
            for derivative in 1..=(2 * s - 2) {
                rows.push(RightEndRow {
                    row: self.continuity_row(knot, derivative),
                    piece: knot - 1,
                    derivative,
                });
            }
            rows.push(RightEndRow {
                row: self.position_left_row(knot),
                piece: knot - 1,
                derivative: 0,
            });
        }
        for derivative in 0..s {
            rows.push(RightEndRow {
                row: self.end_row(derivative),
                piece: self.pieces - 1,
                derivative,
            });
        }
        rows
    }

    /// Lower and upper bandwidths implied by the row ordering.
    fn bandwidths(&self) -> (usize, usize) {
        let mut kl = 0usize;
        let mut ku = 0usize;
        let mut note = |r: usize, c: usize| {
            if r > c {
                kl = kl.max(r - c);
            } else {
                ku = ku.max(c - r);
            }
        };
        let s = self.order;
        let n = self.ncoef();
        for d in 0..s {
            note(d, self.col(0, d));
        }
        for knot in 1..self.pieces {
            for d in 1..=(2 * s - 2) {
                let r = self.continuity_row(knot, d);
                note(r, self.col(knot - 1, d));
                note(r, self.col(knot - 1, n - 1));
                note(r, self.col(knot, d));
            }
            let r = self.position_left_row(knot);
            note(r, self.col(knot - 1, 0));
            note(r, self.col(knot - 1, n - 1));
            note(self.position_right_row(knot), self.col(knot, 0));
        }
        for d in 0..s {
            let r = self.end_row(d);
            note(r, self.col(self.pieces - 1, d));
            note(r, self.col(self.pieces - 1, n - 1));
        }
        (kl, ku)
    }
}

fn check_boundary(state: &BoundaryState, dim: usize, which: &str) -> Result<(), MincoError> {
    if state.position.len() != dim || state.velocity.len() != dim || state.acceleration.len() != dim {
        return Err(MincoError::ShapeMismatch(format!(
            "{which} state must have dimension {dim}"
        )));
    }
    Ok(())
}

fn build_system(order: usize, durations: &[f64]) -> Result<BandLu, MincoError> {
    let layout = Layout {
        order,
        pieces: durations.len(),
    };
    let (kl, ku) = layout.bandwidths();
    let n = layout.ncoef();
    let s = order;
    let mut a = BandMatrix::zeros(layout.size(), kl, ku);
    for d in 0..s {
        a.set(d, layout.col(0, d), falling(d, d));
    }
    let right_end = |a: &mut BandMatrix, row: usize, piece: usize, d: usize| {
        let t = durations[piece];
        for k in d..n {
            a.set(row, layout.col(piece, k), falling(k, d) * powi(t, k - d));
        }
    };
    for knot in 1..layout.pieces {
        for d in 1..=(2 * s - 2) {
            let r = layout.continuity_row(knot, d);
            right_end(&mut a, r, knot - 1, d);
            a.set(r, layout.col(knot, d), -falling(d, d));
        }
        right_end(&mut a, layout.position_left_row(knot), knot - 1, 0);
        a.set(layout.position_right_row(knot), layout.col(knot, 0), 1.0);
    }
    for d in 0..s {
        right_end(&mut a, layout.end_row(d), layout.pieces - 1, d);
    }
    a.factorize().ok_or(MincoError::SingularSystem)
}

/// Solves for the minimum-control-effort coefficients of order [`DEFAULT_ORDER`].
pub fn solve_coeffs(
    init: &BoundaryState,
    target: &BoundaryState,
    params: &TrajParams,
) -> Result<Trajectory, MincoError> {
    solve_coeffs_with_order(DEFAULT_ORDER, init, target, params)
}

/// Same as [`solve_coeffs`] for an arbitrary integrator-chain order `S >= 1`.
pub fn solve_coeffs_with_order(
    order: usize,
    init: &BoundaryState,
    target: &BoundaryState,
    params: &TrajParams,
) -> Result<Trajectory, MincoError> {
    if order == 0 {
        return Err(MincoError::ShapeMismatch("integrator order must be at least 1".into()));
    }
    params.validate()?;
    let dim = params.dim();
    check_boundary(init, dim, "initial")?;
    check_boundary(target, dim, "target")?;

    let lu = build_system(order, &params.durations)?;
    let layout = Layout {
        order,
        pieces: params.pieces(),
    };
    let size = layout.size();
    let n = layout.ncoef();
    let mut coeffs = vec![DMatrix::zeros(n, dim); layout.pieces];
    let mut rhs = vec![0.0; size];
    for d in 0..dim {
        rhs.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..order {
            rhs[k] = init.derivative(k)[d];
            rhs[layout.end_row(k)] = target.derivative(k)[d];
        }
        for knot in 1..layout.pieces {
            let q = params.waypoints[(d, knot - 1)];
            rhs[layout.position_left_row(knot)] = q;
            rhs[layout.position_right_row(knot)] = q;
        }
        lu.solve_in_place(&mut rhs);
        for (piece, c) in coeffs.iter_mut().enumerate() {
            for k in 0..n {
                c[(k, d)] = rhs[layout.col(piece, k)];
            }
        }
    }
    if coeffs.iter().any(|c| c.iter().any(|v| !v.is_finite())) {
        return Err(MincoError::SingularSystem);
    }
    Ok(Trajectory::assemble(
        order,
        coeffs,
        params.durations.clone(),
        Some(Arc::new(ConstraintSystem { lu })),
    ))
}

/// Maximum absolute residual over every constraint row of the system that
/// produced `traj`.
pub fn constraint_residual(
    traj: &Trajectory,
    init: &BoundaryState,
    target: &BoundaryState,
    params: &TrajParams,
) -> f64 {
    let s = traj.order();
    let m = traj.pieces();
    let mut worst = 0.0f64;
    let mut note = |v: DVector<f64>| worst = worst.max(v.amax());
    for d in 0..s {
        note(traj.eval_piece(0, 0.0, d) - init.derivative(d));
        note(traj.eval_piece(m - 1, traj.durations[m - 1], d) - target.derivative(d));
    }
    for knot in 1..m {
        let t = traj.durations[knot - 1];
        let q = params.waypoints.column(knot - 1).into_owned();
        note(traj.eval_piece(knot - 1, t, 0) - &q);
        note(traj.eval_piece(knot, 0.0, 0) - &q);
        for d in 1..=(2 * s - 2) {
            note(traj.eval_piece(knot - 1, t, d) - traj.eval_piece(knot, 0.0, d));
        }
    }
    worst
}

/// Gradients of an objective with respect to `(C, t̄)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffGradient {
    pub coeffs: Vec<DMatrix<f64>>,
    pub durations: Vec<f64>,
}

impl CoeffGradient {
    pub fn zeros(pieces: usize, ncoef: usize, dim: usize) -> Self {
        Self {
            coeffs: vec![DMatrix::zeros(ncoef, dim); pieces],
            durations: vec![0.0; pieces],
        }
    }

    pub fn zeros_like(traj: &Trajectory) -> Self {
        Self::zeros(traj.pieces(), 2 * traj.order(), traj.dim())
    }

    /// `self += weight * other`.
    pub fn add_scaled(&mut self, weight: f64, other: &CoeffGradient) {
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += b * weight;
        }
        for (a, b) in self.durations.iter_mut().zip(&other.durations) {
            *a += weight * b;
        }
    }
}

/// Gradients with respect to the decision variables `(Q, t̄)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradient {
    pub waypoints: DMatrix<f64>,
    pub durations: Vec<f64>,
}

/// Chain rule through the coefficient map: turns `∂K/∂C, ∂K/∂t̄` into
/// `∂H/∂Q, ∂H/∂t̄` using one transposed banded solve per dimension.
pub fn propagate_gradients(
    traj: &Trajectory,
    grad: &CoeffGradient,
    params: &TrajParams,
) -> Result<ParamGradient, MincoError> {
    params.validate()?;
    let m = traj.pieces();
    let s = traj.order();
    let dim = traj.dim();
    let n = 2 * s;
    if params.pieces() != m || params.dim() != dim || params.durations != traj.durations {
        return Err(MincoError::ShapeMismatch(
            "parameters do not match the trajectory".into(),
        ));
    }
    if grad.coeffs.len() != m
        || grad.durations.len() != m
        || grad.coeffs.iter().any(|c| c.nrows() != n || c.ncols() != dim)
    {
        return Err(MincoError::ShapeMismatch(
            "gradient does not match the trajectory".into(),
        ));
    }
    let owned;
    let lu = match &traj.system {
        Some(sys) => &sys.lu,
        None => {
            owned = build_system(s, &traj.durations)?;
            &owned
        }
    };
    let layout = Layout { order: s, pieces: m };
    let rows = layout.right_end_rows();
    let mut d_waypoints = DMatrix::zeros(dim, m - 1);
    let mut d_durations = grad.durations.clone();
    let mut adjoint = vec![0.0; layout.size()];
    for d in 0..dim {
        for (piece, c) in grad.coeffs.iter().enumerate() {
            for k in 0..n {
                adjoint[layout.col(piece, k)] = c[(k, d)];
            }
        }
        lu.solve_transpose_in_place(&mut adjoint);
        for knot in 1..m {
            d_waypoints[(d, knot - 1)] =
                adjoint[layout.position_left_row(knot)] + adjoint[layout.position_right_row(knot)];
        }
        // ∂A/∂t̄_i · C on a right-end row of derivative r is the (r+1)-th derivative there
        for row in &rows {
            let t = traj.durations[row.piece];
            let c = &traj.coeffs[row.piece];
            let r = row.derivative + 1;
            let mut v = 0.0;
            for k in r..n {
                v += falling(k, r) * powi(t, k - r) * c[(k, d)];
            }
            d_durations[row.piece] -= adjoint[row.row] * v;
        }
    }
    Ok(ParamGradient {
        waypoints: d_waypoints,
        durations: d_durations,
    })
}

#[cfg(test)]
mod tests;
