//! Receding-horizon flight on a simulated 60 Hz clock.
//!
//! Each replan reads the committed desired state `ΔT_f` ahead, plans from it
//! and splices the result in at `t_x + max(ΔT_f, latency)`. The new segment
//! keeps the timeline of its start state, so a plan that arrives late is
//! entered part-way through. A point-mass PD tracker follows the committed
//! trajectory between events.

use std::fmt::Write as _;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::initializers::{heading_between, run_strategy, GuessContext, InitConfig, InitStrategy};
use crate::minco::{BoundaryState, Trajectory};
use crate::neural::{Normalization, Pose, SCAN_RANGE};
use crate::solver::{PlanResult, PlannerSettings};
use crate::world::{GridWorld, SceneSpec, Vec2};

pub const EPISODE_FORMAT: &str = "neotraj-episode/1";
pub const TRACKER_HZ: u32 = 60;
pub const SAMPLE_CSV_HEADER: &str = "t,px,py,vx,vy,pdx,pdy,vdx,vdy,clearance";

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("activation time {activation} precedes the latest activation {latest}")]
    ActivationInPast { activation: f64, latest: f64 },
    #[error("no free cell near the local goal candidate")]
    NoFreeCell,
    #[error("invalid replanning configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReplanConfig {
    /// ΔT_r (s).
    pub replan_interval: f64,
    /// ΔT_f (s).
    pub foresee: f64,
    /// Extra planning delay added to every replan (s).
    pub latency: f64,
    /// Local goal distance (m).
    pub lookahead: f64,
    pub cruise_speed: f64,
    pub goal_tolerance: f64,
    pub timeout: f64,
    pub drone_radius: f64,
    pub kp: f64,
    pub kv: f64,
    pub accel_limit: f64,
    /// Lateral start offset is drawn from `±start_jitter` per episode seed.
    pub start_jitter: f64,
    /// Search radius for a free local goal (m).
    pub goal_search_radius: f64,
    /// Cadence of the CSV sample log (s).
    pub log_interval: f64,
    /// Store measured plan wall time in the report (non-deterministic).
    pub record_wall_time: bool,
    /// Add measured plan wall time to the simulated latency.
    pub wall_time_latency: bool,
}

impl Default for ReplanConfig {
    fn default() -> Self {
        Self {
            replan_interval: 1.0,
            foresee: 1.0,
            latency: 0.0,
            lookahead: 6.0,
            cruise_speed: 1.0,
            goal_tolerance: 0.5,
            timeout: 90.0,
            drone_radius: 0.3,
            kp: 8.0,
            kv: 5.0,
            accel_limit: 6.0,
            start_jitter: 0.5,
            goal_search_radius: 3.0,
            log_interval: 0.5,
            record_wall_time: false,
            wall_time_latency: false,
        }
    }
}

fn ticks(seconds: f64) -> u64 {
    (seconds * TRACKER_HZ as f64).round().max(0.0) as u64
}

fn tick_time(k: u64) -> f64 {
    k as f64 / TRACKER_HZ as f64
}

impl ReplanConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.into()));
        if !(self.replan_interval > 0.0) || ticks(self.replan_interval) == 0 {
            return bad("replan_interval must be at least one tracker tick");
        }
        if !(self.foresee >= 0.0 && self.latency >= 0.0) {
            return bad("foresee and latency must be non-negative");
        }
        if !(self.lookahead > 0.0 && self.cruise_speed > 0.0 && self.timeout > 0.0) {
            return bad("lookahead, cruise_speed and timeout must be positive");
        }
        if !(self.goal_tolerance > 0.0 && self.drone_radius >= 0.0 && self.accel_limit > 0.0) {
            return bad("goal_tolerance and accel_limit must be positive");
        }
        if !(self.log_interval > 0.0) || ticks(self.log_interval) == 0 {
            return bad("log_interval must be at least one tracker tick");
        }
        Ok(())
    }
}

/// Full configuration of one episode.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeConfig {
    pub replan: ReplanConfig,
    pub planner: PlannerSettings,
    pub init: InitConfig,
}

impl EpisodeConfig {
    pub fn normalization(&self) -> Normalization {
        Normalization {
            lookahead: self.replan.lookahead,
            v_max: self.planner.penalty.v_max,
            max_range: SCAN_RANGE,
        }
    }
}

#[derive(Debug, Clone)]
struct Segment {
    activation: f64,
    offset: f64,
    trajectory: Trajectory,
}

/// Desired-state source for the tracker: the latest segment whose
/// activation time has passed is in charge.
#[derive(Debug, Clone)]
pub struct CommittedTrajectory {
    segments: Vec<Segment>,
}

impl CommittedTrajectory {
    /// Hover at `position` from time 0.
    pub fn hover(position: &DVector<f64>) -> Self {
        Self {
            segments: vec![Segment {
                activation: 0.0,
                offset: 0.0,
                trajectory: Trajectory::hold(position, 1.0),
            }],
        }
    }

    pub fn latest_activation(&self) -> f64 {
        self.segments.last().expect("never empty").activation
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Desired state at world time `t`. Past a segment's end the final
    /// position is held at rest.
    pub fn query(&self, t: f64) -> BoundaryState {
        let seg = self
            .segments
            .iter()
            .rev()
            .find(|s| s.activation <= t)
            .unwrap_or(&self.segments[0]);
        let local = (t - seg.offset).max(0.0);
        let traj = &seg.trajectory;
        let total = traj.total_duration();
        if local >= total {
            let end = traj.eval(total, 0).expect("end is in domain");
            return BoundaryState::at_rest(end);
        }
        traj.state(local).expect("clamped into domain")
    }

    /// Adds `trajectory` so it takes over at `activation`. `offset` is the
    /// world time of the trajectory's local zero, i.e. the instant whose
    /// state it was planned from.
    pub fn splice_at(&mut self, trajectory: Trajectory, activation: f64, offset: f64) -> Result<(), SimError> {
        let latest = self.latest_activation();
        if activation < latest {
            return Err(SimError::ActivationInPast { activation, latest });
        }
        if activation == latest && self.segments.len() > 1 {
            self.segments.pop();
        }
        self.segments.push(Segment {
            activation,
            offset,
            trajectory,
        });
        Ok(())
    }
}

/// Splices a plan made at `t_x` from the state at `t_x + ΔT_f`; it takes
/// over at that instant.
pub fn splice(
    mut committed: CommittedTrajectory,
    trajectory: Trajectory,
    t_x: f64,
    foresee: f64,
) -> Result<CommittedTrajectory, SimError> {
    committed.splice_at(trajectory, t_x + foresee, t_x + foresee)?;
    Ok(committed)
}

/// Local target `d_look` ahead toward the goal; moved to the nearest cell
/// with enough clearance when the candidate is too close to an obstacle.
pub fn select_local_goal(
    world: &GridWorld,
    from: Vec2,
    goal: Vec2,
    cfg: &ReplanConfig,
    d_safe: f64,
) -> Result<BoundaryState, SimError> {
    let to_goal = goal - from;
    let dist = to_goal.norm();
    let vec = |v: Vec2| DVector::from_column_slice(&[v.x, v.y]);
    let reaches_goal = dist <= cfg.lookahead;
    let candidate = if reaches_goal {
        goal
    } else {
        from + to_goal * (cfg.lookahead / dist)
    };
    let point = if world.in_bounds(candidate) && world.distance(candidate) >= d_safe {
        candidate
    } else {
        nearest_free(world, candidate, d_safe, cfg.goal_search_radius).ok_or(SimError::NoFreeCell)?
    };
    let velocity = if reaches_goal && point == goal {
        Vec2::zeros()
    } else {
        let d = goal - point;
        if d.norm() > 1e-9 {
            d * (cfg.cruise_speed / d.norm())
        } else {
            Vec2::zeros()
        }
    };
    Ok(BoundaryState::with_velocity(vec(point), vec(velocity)))
}

/// Nearest cell center with clearance ≥ `d_safe`, scanning square rings of
/// growing radius around `p`; within a ring the closest center wins, ties
/// in row-major order.
fn nearest_free(world: &GridWorld, p: Vec2, d_safe: f64, radius: f64) -> Option<Vec2> {
    let (cx, cy) = world.cell_of(p);
    let (cols, rows) = (world.cols() as i64, world.rows() as i64);
    let max_ring = (radius / world.resolution()).ceil() as i64;
    for r in 0..=max_ring {
        let mut best: Option<(f64, Vec2)> = None;
        for iy in (cy - r)..=(cy + r) {
            for ix in (cx - r)..=(cx + r) {
                if (ix - cx).abs().max((iy - cy).abs()) != r {
                    continue;
                }
                if ix < 0 || iy < 0 || ix >= cols || iy >= rows {
                    continue;
                }
                let (ux, uy) = (ix as usize, iy as usize);
                if world.cell_distance(ux, uy).expect("distance field present") < d_safe {
                    continue;
                }
                let c = world.cell_center(ux, uy);
                let d = (c - p).norm();
                if d <= radius && best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, c));
                }
            }
        }
        if let Some((_, c)) = best {
            return Some(c);
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Goal,
    Collision,
    NoFreeCell,
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub position: [f64; 2],
    pub velocity: [f64; 2],
    pub desired_position: [f64; 2],
    pub desired_velocity: [f64; 2],
    pub clearance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplanRecord {
    pub t: f64,
    pub activation: f64,
    pub iterations: usize,
    pub plan_time: f64,
    pub cost: Option<f64>,
    pub converged: bool,
    pub late: bool,
    /// Set when the planner failed and the previous plan was kept.
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub format: String,
    pub strategy: String,
    pub seed: u64,
    pub success: bool,
    pub outcome: Outcome,
    pub flight_time: f64,
    /// Path length plus collision and overspeed penalties on the 0.5 s grid.
    pub cost: f64,
    pub path_length: f64,
    pub collision_samples: usize,
    pub overspeed: f64,
    pub iterations: Vec<usize>,
    pub plan_times: Vec<f64>,
    pub mean_iterations: f64,
    pub mean_plan_time: f64,
    pub position_rmse: f64,
    pub velocity_rmse: f64,
    pub late_plans: usize,
    pub failed_plans: usize,
    /// Largest change in commanded position between consecutive ticks.
    pub max_command_jump: f64,
    pub final_position: [f64; 2],
    pub replans: Vec<ReplanRecord>,
    #[serde(skip)]
    pub samples: Vec<Sample>,
}

impl EpisodeReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    pub fn samples_csv(&self) -> String {
        let mut out = String::from(SAMPLE_CSV_HEADER);
        out.push('\n');
        for s in &self.samples {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                s.t,
                s.position[0],
                s.position[1],
                s.velocity[0],
                s.velocity[1],
                s.desired_position[0],
                s.desired_position[1],
                s.desired_velocity[0],
                s.desired_velocity[1],
                s.clearance
            );
        }
        out
    }
}

/// What a replan saw and produced; handed to episode observers.
pub struct ReplanEvent<'a> {
    pub t: f64,
    pub world: &'a GridWorld,
    pub pose: Pose,
    pub velocity: Vec2,
    pub init: &'a BoundaryState,
    pub target: &'a BoundaryState,
    pub result: &'a PlanResult,
}

fn planar(v: &DVector<f64>) -> Vec2 {
    Vec2::new(v[0], v[1])
}

fn arr(v: Vec2) -> [f64; 2] {
    [v.x, v.y]
}

/// Lateral start offset drawn from the episode seed.
pub fn start_position(scene: &SceneSpec, cfg: &ReplanConfig, seed: u64) -> Vec2 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = if cfg.start_jitter > 0.0 {
        rng.random_range(-cfg.start_jitter..cfg.start_jitter)
    } else {
        0.0
    };
    scene.start() + Vec2::new(0.0, jitter)
}

/// One 60 Hz step of the point-mass tracker: PD on position and velocity
/// plus acceleration feedforward, clamped, integrated exactly.
pub fn tracker_step(p: Vec2, v: Vec2, desired: &BoundaryState, cfg: &ReplanConfig) -> (Vec2, Vec2) {
    let dt = 1.0 / TRACKER_HZ as f64;
    let (pd, vd, ad) = (
        planar(&desired.position),
        planar(&desired.velocity),
        planar(&desired.acceleration),
    );
    let mut u = (pd - p) * cfg.kp + (vd - v) * cfg.kv + ad;
    if u.norm() > cfg.accel_limit {
        u *= cfg.accel_limit / u.norm();
    }
    (p + v * dt + u * (0.5 * dt * dt), v + u * dt)
}

pub fn run_episode(
    world: &GridWorld,
    scene: &SceneSpec,
    strategy: &InitStrategy,
    cfg: &EpisodeConfig,
    seed: u64,
) -> EpisodeReport {
    run_episode_observed(world, scene, strategy, cfg, seed, |_| {})
}

/// [`run_episode`] with a callback invoked after every successful replan.
pub fn run_episode_observed<F: FnMut(&ReplanEvent<'_>)>(
    world: &GridWorld,
    scene: &SceneSpec,
    strategy: &InitStrategy,
    cfg: &EpisodeConfig,
    seed: u64,
    mut observe: F,
) -> EpisodeReport {
    let rc = &cfg.replan;
    let goal = scene.goal();
    let start = start_position(scene, rc, seed);
    let vec = |v: Vec2| DVector::from_column_slice(&[v.x, v.y]);

    let mut committed = CommittedTrajectory::hover(&vec(start));
    let mut pending: Vec<(u64, u64, Trajectory)> = Vec::new();
    let mut p = start;
    let mut v = Vec2::zeros();
    let mut last_command: Option<Vec2> = None;
    let mut max_jump: f64 = 0.0;

    let replan_every = ticks(rc.replan_interval);
    let foresee_ticks = ticks(rc.foresee);
    let rmse_every = ticks(0.1);
    let metric_every = ticks(0.5);
    let log_every = ticks(rc.log_interval);
    let limit = ticks(rc.timeout);

    let mut replans = Vec::new();
    let mut samples = Vec::new();
    let (mut pos_sq, mut vel_sq, mut rmse_n) = (0.0, 0.0, 0usize);
    let (mut path_length, mut collision_samples, mut overspeed) = (0.0, 0usize, 0.0);
    let v_max = cfg.planner.penalty.v_max;

    let mut k: u64 = 0;
    let outcome = loop {
        let t = tick_time(k);

        // splice plans whose activation tick has come
        pending.sort_by_key(|(a, _, _)| *a);
        while pending.first().is_some_and(|(a, _, _)| *a <= k) {
            let (a, offset, traj) = pending.remove(0);
            let _ = committed.splice_at(traj, tick_time(a), tick_time(offset));
        }

        if k.is_multiple_of(replan_every) {
            let plan_tick = k + foresee_ticks;
            let init = committed.query(tick_time(plan_tick));
            let from = planar(&init.position);
            match select_local_goal(world, from, goal, rc, cfg.planner.penalty.d_safe) {
                Err(_) => break Outcome::NoFreeCell,
                Ok(target) => {
                    let pose = Pose::new(from, heading_between(from, planar(&target.position)));
                    let ctx = GuessContext {
                        world,
                        init: &init,
                        target: &target,
                        pose,
                        velocity: v,
                    };
                    match run_strategy(strategy, &ctx, &cfg.init, &cfg.planner) {
                        Ok(out) => {
                            let wall = out.result.wall_time;
                            let extra = if rc.wall_time_latency { wall } else { 0.0 };
                            let delay = ticks(rc.latency + extra);
                            let activation = k + foresee_ticks.max(delay);
                            let late = delay > foresee_ticks;
                            observe(&ReplanEvent {
                                t,
                                world,
                                pose,
                                velocity: v,
                                init: &init,
                                target: &target,
                                result: &out.result,
                            });
                            replans.push(ReplanRecord {
                                t,
                                activation: tick_time(activation),
                                iterations: out.iterations,
                                plan_time: if rc.record_wall_time { wall } else { 0.0 },
                                cost: Some(out.result.cost),
                                converged: out.result.converged(),
                                late,
                                failed: false,
                            });
                            if activation == k {
                                let _ = committed.splice_at(out.result.trajectory, t, t);
                            } else {
                                pending.push((activation, plan_tick, out.result.trajectory));
                            }
                        }
                        Err(_) => replans.push(ReplanRecord {
                            t,
                            activation: t,
                            iterations: 0,
                            plan_time: 0.0,
                            cost: None,
                            converged: false,
                            late: false,
                            failed: true,
                        }),
                    }
                }
            }
        }

        let desired = committed.query(t);
        let (pd, vd) = (planar(&desired.position), planar(&desired.velocity));
        if let Some(prev) = last_command {
            max_jump = max_jump.max((pd - prev).norm());
        }
        last_command = Some(pd);

        let clearance = world.distance(p);
        if k.is_multiple_of(rmse_every) {
            pos_sq += (pd - p).norm_squared();
            vel_sq += (vd - v).norm_squared();
            rmse_n += 1;
        }
        if k.is_multiple_of(metric_every) {
            if clearance < rc.drone_radius {
                collision_samples += 1;
            }
            overspeed += (v.norm() - v_max).max(0.0);
        }
        if k.is_multiple_of(log_every) {
            samples.push(Sample {
                t,
                position: arr(p),
                velocity: arr(v),
                desired_position: arr(pd),
                desired_velocity: arr(vd),
                clearance,
            });
        }

        if (p - goal).norm() < rc.goal_tolerance {
            break Outcome::Goal;
        }
        if world.collides(p, rc.drone_radius) {
            break Outcome::Collision;
        }
        if k >= limit {
            break Outcome::Timeout;
        }

        let (np, nv) = tracker_step(p, v, &desired, rc);
        path_length += (np - p).norm();
        p = np;
        v = nv;
        k += 1;
    };

    let iterations: Vec<usize> = replans.iter().map(|r| r.iterations).collect();
    let plan_times: Vec<f64> = replans.iter().map(|r| r.plan_time).collect();
    let mean = |xs: &[f64]| {
        if xs.is_empty() {
            0.0
        } else {
            xs.iter().sum::<f64>() / xs.len() as f64
        }
    };
    let mean_iterations = mean(&iterations.iter().map(|&i| i as f64).collect::<Vec<_>>());
    let n = rmse_n.max(1) as f64;
    EpisodeReport {
        format: EPISODE_FORMAT.to_string(),
        strategy: strategy.name().to_string(),
        seed,
        success: outcome == Outcome::Goal,
        outcome,
        flight_time: tick_time(k),
        cost: path_length + collision_samples as f64 + overspeed,
        path_length,
        collision_samples,
        overspeed,
        mean_iterations,
        mean_plan_time: mean(&plan_times),
        iterations,
        plan_times,
        position_rmse: (pos_sq / n).sqrt(),
        velocity_rmse: (vel_sq / n).sqrt(),
        late_plans: replans.iter().filter(|r| r.late).count(),
        failed_plans: replans.iter().filter(|r| r.failed).count(),
        max_command_jump: max_jump,
        final_position: arr(p),
        replans,
        samples,
    }
}

#[cfg(test)]
mod tests;
