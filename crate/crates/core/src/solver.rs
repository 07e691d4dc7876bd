//! L-BFGS over the flat `(Q, τ)` vector and the single-shot planner built on it.

use std::collections::VecDeque;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::minco::{solve_coeffs, BoundaryState, TrajParams, Trajectory};
use crate::objective::{CostBreakdown, CostWeights, ObjectiveError, PenaltyConfig, Problem, TimeTransform};
use crate::world::GridWorld;

/// Number of accepted steps spanned by the cost-decrease test.
pub const COST_WINDOW: usize = 3;

/// Margin kept between a guessed duration and the transform's open bounds.
pub const GUESS_MARGIN: f64 = 1e-3;

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error("objective is not finite at the starting point")]
    NonFiniteObjective,
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub history: usize,
    pub max_iterations: usize,
    pub g_tol: f64,
    pub f_tol: f64,
    pub c1: f64,
    pub c2: f64,
    pub max_linesearch: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            history: 8,
            max_iterations: 200,
            g_tol: 1e-5,
            f_tol: 1e-8,
            c1: 1e-4,
            c2: 0.9,
            max_linesearch: 40,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(SolverError::InvalidConfig(format!(
                "need 0 < c1 < c2 < 1, got c1={} c2={}",
                self.c1, self.c2
            )));
        }
        if self.history == 0 {
            return Err(SolverError::InvalidConfig("history must be at least 1".into()));
        }
        if self.max_linesearch == 0 {
            return Err(SolverError::InvalidConfig("max_linesearch must be at least 1".into()));
        }
        if !(self.g_tol >= 0.0 && self.f_tol >= 0.0) {
            return Err(SolverError::InvalidConfig("tolerances must be non-negative".into()));
        }
        Ok(())
    }
}

/// Why the solver stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    CostTolerance,
    MaxIterations,
    LineSearchFailure,
}

impl Termination {
    pub fn converged(self) -> bool {
        matches!(self, Termination::GradientTolerance | Termination::CostTolerance)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
    /// Objective value at the start and after every accepted step.
    pub trace: Vec<f64>,
}

impl Minimum {
    pub fn converged(&self) -> bool {
        self.termination.converged()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

struct Point {
    alpha: f64,
    value: f64,
    slope: f64,
}

struct Evaluator<'f, F> {
    f: &'f mut F,
    evaluations: usize,
}

impl<F: FnMut(&[f64], &mut [f64]) -> f64> Evaluator<'_, F> {
    fn eval(&mut self, x: &[f64], g: &mut [f64]) -> f64 {
        self.evaluations += 1;
        (self.f)(x, g)
    }
}

/// Minimizer of the cubic through two points with known slopes, if it exists.
fn cubic_min(a: &Point, b: &Point) -> Option<f64> {
    let d1 = a.slope + b.slope - 3.0 * (a.value - b.value) / (a.alpha - b.alpha);
    let disc = d1 * d1 - a.slope * b.slope;
    if disc < 0.0 {
        return None;
    }
    let d2 = (b.alpha - a.alpha).signum() * disc.sqrt();
    let t = b.alpha - (b.alpha - a.alpha) * (b.slope + d2 - d1) / (b.slope - a.slope + 2.0 * d2);
    t.is_finite().then_some(t)
}

struct LineSearch<'a> {
    x: &'a [f64],
    dir: &'a [f64],
    f0: f64,
    slope0: f64,
    cfg: &'a SolverConfig,
}

impl LineSearch<'_> {
    fn probe<F: FnMut(&[f64], &mut [f64]) -> f64>(
        &self,
        ev: &mut Evaluator<'_, F>,
        alpha: f64,
        xt: &mut [f64],
        gt: &mut [f64],
    ) -> Point {
        for ((t, x), d) in xt.iter_mut().zip(self.x).zip(self.dir) {
            *t = x + alpha * d;
        }
        let value = ev.eval(xt, gt);
        let slope = if value.is_finite() { dot(gt, self.dir) } else { f64::NAN };
        Point { alpha, value, slope }
    }

    fn armijo(&self, p: &Point) -> bool {
        p.value.is_finite() && p.value <= self.f0 + self.cfg.c1 * p.alpha * self.slope0 && p.value < self.f0
    }

    fn curvature(&self, p: &Point) -> bool {
        p.slope.abs() <= -self.cfg.c2 * self.slope0
    }

    /// Strong-Wolfe search. On success `xt`/`gt` hold the accepted point.
    fn run<F: FnMut(&[f64], &mut [f64]) -> f64>(
        &self,
        ev: &mut Evaluator<'_, F>,
        alpha0: f64,
        xt: &mut [f64],
        gt: &mut [f64],
    ) -> Option<Point> {
        let mut prev = Point {
            alpha: 0.0,
            value: self.f0,
            slope: self.slope0,
        };
        let mut alpha = alpha0;
        let mut steps = 0;
        while steps < self.cfg.max_linesearch {
            steps += 1;
            let cur = self.probe(ev, alpha, xt, gt);
            if !cur.value.is_finite() {
                // step into a non-finite region: shrink toward the last good point
                let hi = Point {
                    alpha: cur.alpha,
                    value: f64::INFINITY,
                    slope: f64::NAN,
                };
                return self.zoom(ev, prev, hi, steps, xt, gt);
            }
            if !self.armijo(&cur) || (steps > 1 && cur.value >= prev.value) {
                return self.zoom(ev, prev, cur, steps, xt, gt);
            }
            if self.curvature(&cur) {
                return Some(cur);
            }
            if cur.slope >= 0.0 {
                return self.zoom(ev, cur, prev, steps, xt, gt);
            }
            prev = cur;
            alpha *= 2.0;
        }
        None
    }

    fn zoom<F: FnMut(&[f64], &mut [f64]) -> f64>(
        &self,
        ev: &mut Evaluator<'_, F>,
        mut lo: Point,
        mut hi: Point,
        mut steps: usize,
        xt: &mut [f64],
        gt: &mut [f64],
    ) -> Option<Point> {
        while steps < self.cfg.max_linesearch {
            steps += 1;
            let (a, b) = if lo.alpha < hi.alpha {
                (lo.alpha, hi.alpha)
            } else {
                (hi.alpha, lo.alpha)
            };
            let width = b - a;
            if width <= f64::EPSILON * b.abs().max(1e-300) {
                break;
            }
            let guess = if hi.value.is_finite() && hi.slope.is_finite() {
                cubic_min(&lo, &hi)
            } else {
                None
            };
            let alpha = match guess {
                Some(t) if t > a + 0.1 * width && t < b - 0.1 * width => t,
                _ => 0.5 * (a + b),
            };
            let cur = self.probe(ev, alpha, xt, gt);
            if !self.armijo(&cur) || cur.value >= lo.value {
                hi = cur;
                continue;
            }
            if self.curvature(&cur) {
                return Some(cur);
            }
            if cur.slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
        // fall back to the best sufficient-decrease point seen, if any
        if lo.alpha > 0.0 {
            let p = self.probe(ev, lo.alpha, xt, gt);
            return Some(p);
        }
        None
    }
}

/// Limited-memory BFGS with a strong-Wolfe line search.
///
/// `f` writes the gradient into its second argument and returns the value.
/// A line-search failure is not an error: the best iterate is returned with
/// [`Termination::LineSearchFailure`].
pub fn minimize<F>(mut f: F, x0: &[f64], cfg: &SolverConfig) -> Result<Minimum, SolverError>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    cfg.validate()?;
    let n = x0.len();
    let mut ev = Evaluator {
        f: &mut f,
        evaluations: 0,
    };
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut fx = ev.eval(&x, &mut g);
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(SolverError::NonFiniteObjective);
    }

    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.history);
    let mut dir = vec![0.0; n];
    let mut xt = vec![0.0; n];
    let mut gt = vec![0.0; n];
    let mut alpha_buf = vec![0.0; cfg.history];
    let mut iterations = 0;
    let mut trace = vec![fx];

    let termination = loop {
        if inf_norm(&g) <= cfg.g_tol {
            break Termination::GradientTolerance;
        }
        if iterations >= cfg.max_iterations {
            break Termination::MaxIterations;
        }

        // two-loop recursion
        for (d, gi) in dir.iter_mut().zip(&g) {
            *d = -gi;
        }
        for (k, (s, y, rho)) in history.iter().enumerate().rev() {
            let a = rho * dot(s, &dir);
            alpha_buf[k] = a;
            for (d, yi) in dir.iter_mut().zip(y) {
                *d -= a * yi;
            }
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            dir.iter_mut().for_each(|d| *d *= gamma);
        }
        for (k, (s, y, rho)) in history.iter().enumerate() {
            let b = rho * dot(y, &dir);
            for (d, si) in dir.iter_mut().zip(s) {
                *d += (alpha_buf[k] - b) * si;
            }
        }

        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            history.clear();
            for (d, gi) in dir.iter_mut().zip(&g) {
                *d = -gi;
            }
            slope = dot(&g, &dir);
        }
        let alpha0 = if history.is_empty() {
            (1.0 / dot(&dir, &dir).sqrt()).min(1.0)
        } else {
            1.0
        };

        let ls = LineSearch {
            x: &x,
            dir: &dir,
            f0: fx,
            slope0: slope,
            cfg,
        };
        let accepted = ls.run(&mut ev, alpha0, &mut xt, &mut gt).filter(|p| p.value < fx);
        let Some(point) = accepted else {
            if history.is_empty() {
                break Termination::LineSearchFailure;
            }
            // retry once from steepest descent
            history.clear();
            continue;
        };

        let s: Vec<f64> = xt.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        std::mem::swap(&mut x, &mut xt);
        std::mem::swap(&mut g, &mut gt);
        fx = point.value;
        iterations += 1;
        trace.push(fx);

        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if history.len() == cfg.history {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }

        // relative decrease measured over the last few accepted steps, so one
        // short step does not end the run
        if trace.len() > COST_WINDOW {
            let past = trace[trace.len() - 1 - COST_WINDOW];
            if past - fx <= cfg.f_tol * past.abs().max(1.0) {
                break Termination::CostTolerance;
            }
        }
    };

    Ok(Minimum {
        x,
        value: fx,
        gradient: g,
        iterations,
        evaluations: ev.evaluations,
        termination,
        trace,
    })
}

/// Everything besides world and boundary states that fixes one planning problem.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerSettings {
    pub weights: CostWeights,
    pub penalty: PenaltyConfig,
    pub time: TimeTransform,
    pub solver: SolverConfig,
}

#[derive(Debug, Clone)]
pub struct PlanResult {
    pub trajectory: Trajectory,
    pub params: TrajParams,
    pub cost: f64,
    pub initial_cost: f64,
    pub breakdown: CostBreakdown,
    pub iterations: usize,
    pub evaluations: usize,
    /// Seconds spent inside [`plan`].
    pub wall_time: f64,
    pub termination: Termination,
}

impl PlanResult {
    pub fn converged(&self) -> bool {
        self.termination.converged()
    }
}

/// Optimizes `(Q, τ)` starting from `guess`. Guessed durations outside the
/// transform's range are clamped first.
pub fn plan(
    init: &BoundaryState,
    target: &BoundaryState,
    guess: &TrajParams,
    world: &GridWorld,
    settings: &PlannerSettings,
) -> Result<PlanResult, SolverError> {
    let start = Instant::now();
    guess.validate().map_err(ObjectiveError::from)?;
    let problem = Problem {
        init,
        target,
        world,
        weights: &settings.weights,
        penalty: &settings.penalty,
        time: &settings.time,
    };
    let tf = &settings.time;
    let durations: Vec<f64> = guess.durations.iter().map(|&t| tf.clamp(t, GUESS_MARGIN)).collect();
    let tau = tf.times_to_taus(&durations)?;
    let x0 = problem.pack(&guess.waypoints, &tau);
    let pieces = guess.pieces();

    // surfaces objective errors through the non-finite path; only shape
    // problems can fail here and those were ruled out above
    let mut failure = None;
    let result = minimize(
        |x, g| match problem.evaluate_flat(x, g) {
            Ok(v) => v,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        },
        &x0,
        &settings.solver,
    );
    if let Some(e) = failure {
        return Err(e.into());
    }
    let min = result?;

    let (waypoints, tau): (DMatrix<f64>, Vec<f64>) = problem.unpack(&min.x, pieces);
    let params = TrajParams::new(waypoints, tf.taus_to_times(&tau)).map_err(ObjectiveError::from)?;
    let trajectory = solve_coeffs(init, target, &params).map_err(ObjectiveError::from)?;
    let (cost, breakdown) = problem.cost_of(&params)?;
    let mut g0 = vec![0.0; x0.len()];
    let initial_cost = problem.evaluate_flat(&x0, &mut g0)?;
    Ok(PlanResult {
        trajectory,
        params,
        cost,
        initial_cost,
        breakdown,
        iterations: min.iterations,
        evaluations: min.evaluations,
        wall_time: start.elapsed().as_secs_f64(),
        termination: min.termination,
    })
}
