//! Finite-difference verification of every analytic gradient in the
//! objective pipeline.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::*;
use crate::minco::{solve_coeffs, BoundaryState, TrajParams, Trajectory};
use crate::world::{build_distance_field, preset_scene, GridWorld, Vec2};

/// Worst relative errors found across all trials.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub trials: usize,
    pub rejected: usize,
    pub active_obstacle_trials: usize,
    pub total_waypoints: f64,
    pub total_tau: f64,
    pub effort: f64,
    pub obstacle: f64,
    pub feasibility: f64,
}

impl GradcheckReport {
    pub fn max_error(&self) -> f64 {
        [
            self.total_waypoints,
            self.total_tau,
            self.effort,
            self.obstacle,
            self.feasibility,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Relative error of `analytic` against `numeric`, normalized by the
/// largest numeric component.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric.iter().fold(1e-6f64, |m, v| m.max(v.abs()));
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / scale)
        .fold(0.0, f64::max)
}

/// Central difference with step `1e-5 · max(1, |x|)` on each coordinate.
pub fn central_difference<F: FnMut(&[f64]) -> f64>(x: &[f64], f: F) -> Vec<f64> {
    let steps: Vec<f64> = x.iter().map(|v| 1e-5 * v.abs().max(1.0)).collect();
    central_difference_with_steps(x, &steps, f)
}

/// Central difference with an explicit step per coordinate.
pub fn central_difference_with_steps<F: FnMut(&[f64]) -> f64>(x: &[f64], steps: &[f64], mut f: F) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = steps[i];
            probe[i] = x[i] + h;
            let plus = f(&probe);
            probe[i] = x[i] - h;
            let minus = f(&probe);
            probe[i] = x[i];
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// True when some penalized sample sits within `margin` cells of the
/// bilinear interpolation's kink lines.
fn near_cell_boundary(traj: &Trajectory, world: &GridWorld, cfg: &PenaltyConfig, margin: f64) -> bool {
    let kappa = cfg.samples_per_piece;
    for i in 0..traj.pieces() {
        for j in 0..=kappa {
            let t = traj.durations()[i] * j as f64 / kappa as f64;
            let p = traj.eval_piece(i, t, 0);
            let p = Vec2::new(p[0], p[1]);
            if world.distance(p) >= cfg.d_safe + 0.05 {
                continue;
            }
            let u = (p - world.origin()) / world.resolution() - Vec2::new(0.5, 0.5);
            let off = |v: f64| (v - v.round()).abs();
            if off(u.x) < margin || off(u.y) < margin {
                return true;
            }
            if !world.in_bounds(p) {
                return true;
            }
        }
    }
    false
}

fn flatten(traj: &Trajectory) -> Vec<f64> {
    let mut x: Vec<f64> = traj.coefficients().iter().flat_map(|c| c.iter().copied()).collect();
    x.extend_from_slice(traj.durations());
    x
}

fn rebuild(template: &Trajectory, x: &[f64]) -> Trajectory {
    let (n, d, m) = (2 * template.order(), template.dim(), template.pieces());
    let coeffs = (0..m)
        .map(|i| DMatrix::from_column_slice(n, d, &x[i * n * d..(i + 1) * n * d]))
        .collect();
    Trajectory::from_coefficients(template.order(), coeffs, x[m * n * d..].to_vec()).expect("positive durations")
}

/// Relative error of a single term's gradient in coefficient and duration
/// space. Coefficient `k` of a piece lasting `T` is stepped by
/// `1e-5 / max(1, T)^k` so every probe moves the curve by a similar amount.
pub fn term_error<F: Fn(&Trajectory) -> TermCost>(traj: &Trajectory, term: F) -> f64 {
    let analytic = term(traj);
    let mut a: Vec<f64> = analytic.grad.coeffs.iter().flat_map(|c| c.iter().copied()).collect();
    a.extend_from_slice(&analytic.grad.durations);
    let x = flatten(traj);
    let n = 2 * traj.order();
    let mut steps = Vec::with_capacity(x.len());
    for &t in traj.durations() {
        for _ in 0..traj.dim() {
            steps.extend((0..n).map(|k| 1e-5 / t.max(1.0).powi(k as i32)));
        }
    }
    steps.extend(traj.durations().iter().map(|t| 1e-5 * t.max(1.0)));
    let numeric = central_difference_with_steps(&x, &steps, |x| term(&rebuild(traj, x)).cost);
    relative_error(&a, &numeric)
}

struct Config {
    world: GridWorld,
    init: BoundaryState,
    target: BoundaryState,
    waypoints: DMatrix<f64>,
    tau: Vec<f64>,
}

fn random_config(rng: &mut ChaCha8Rng, worlds: &[GridWorld], tf: &TimeTransform) -> Config {
    let world = worlds[rng.random_range(0..worlds.len())].clone();
    let start = Vec2::new(rng.random_range(1.0..22.0), rng.random_range(-4.0..4.0));
    let goal = start + Vec2::new(rng.random_range(3.0..6.0), rng.random_range(-2.0..2.0));
    let vec = |v: Vec2| DVector::from_column_slice(&[v.x, v.y]);
    let mut rv = || Vec2::new(rng.random_range(-1.2..1.2), rng.random_range(-1.2..1.2));
    let init = BoundaryState::new(vec(start), vec(rv()), vec(rv()));
    let target = BoundaryState::with_velocity(vec(goal), vec(rv()));
    let pieces = 3;
    let waypoints = DMatrix::from_fn(2, pieces - 1, |d, k| {
        let s = (k + 1) as f64 / pieces as f64;
        let base = start + (goal - start) * s;
        base[d] + rng.random_range(-1.0..1.0)
    });
    let tau = (0..pieces)
        .map(|_| tf.time_to_tau(rng.random_range(0.8..4.0)).expect("inside bounds"))
        .collect();
    Config {
        world,
        init,
        target,
        waypoints,
        tau,
    }
}

/// Runs `trials` randomized configurations over scene presets 4..=9.
pub fn run_gradcheck(trials: usize, seed: u64) -> GradcheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = CostWeights::default();
    let penalty = PenaltyConfig::default();
    let tf = TimeTransform::default();
    let worlds: Vec<GridWorld> = (4..=9)
        .map(|id| {
            build_distance_field(
                &preset_scene(id, seed.wrapping_add(id as u64)).expect("preset packs"),
                0.1,
            )
        })
        .collect();
    let mut report = GradcheckReport::default();
    while report.trials < trials {
        let cfg = random_config(&mut rng, &worlds, &tf);
        let problem = Problem {
            init: &cfg.init,
            target: &cfg.target,
            world: &cfg.world,
            weights: &weights,
            penalty: &penalty,
            time: &tf,
        };
        let params = TrajParams::new(cfg.waypoints.clone(), tf.taus_to_times(&cfg.tau)).expect("valid");
        let traj = solve_coeffs(&cfg.init, &cfg.target, &params).expect("solvable");
        if near_cell_boundary(&traj, &cfg.world, &penalty, 2e-3) {
            report.rejected += 1;
            continue;
        }
        report.trials += 1;

        let eval = problem.total_objective(&cfg.waypoints, &cfg.tau).expect("evaluates");
        let x = problem.pack(&cfg.waypoints, &cfg.tau);
        let numeric = central_difference(&x, |x| {
            let (q, tau) = problem.unpack(x, 3);
            problem.total_objective(&q, &tau).expect("evaluates").value
        });
        let nq = cfg.waypoints.len();
        // each block is normalized by its own scale so the time channel is not
        // masked by large waypoint gradients
        report.total_waypoints = report
            .total_waypoints
            .max(relative_error(eval.d_waypoints.as_slice(), &numeric[..nq]));
        report.total_tau = report.total_tau.max(relative_error(&eval.d_tau, &numeric[nq..]));

        report.effort = report.effort.max(term_error(&traj, control_effort));
        report.feasibility = report
            .feasibility
            .max(term_error(&traj, |t| feasibility_cost(t, &penalty)));
        let obstacle = obstacle_cost(&traj, &cfg.world, &penalty).expect("field present");
        if obstacle.cost > 0.0 {
            report.active_obstacle_trials += 1;
        }
        report.obstacle = report.obstacle.max(term_error(&traj, |t| {
            obstacle_cost(t, &cfg.world, &penalty).expect("field present")
        }));
    }
    report
}
