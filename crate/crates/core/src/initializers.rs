//! Initial-guess strategies: straight line, grid search, three-seed expert
//! and the learned network.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::{PI, SQRT_2};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::minco::{BoundaryState, TrajParams};
use crate::neural::{MlpModel, NeuralError, Observation, Pose};
use crate::solver::{plan, PlanResult, PlannerSettings, SolverError, GUESS_MARGIN};
use crate::world::{GridWorld, Vec2};

#[derive(Debug, Error)]
pub enum InitError {
    #[error("no grid path between the endpoints")]
    NoPath,
    #[error("model output does not fit the planner: {0}")]
    ModelShapeMismatch(String),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// How the optimizer's starting point is produced.
#[derive(Debug, Clone)]
pub enum InitStrategy {
    Baseline,
    Geo,
    Expert,
    Neural(Arc<MlpModel>),
}

impl InitStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            InitStrategy::Baseline => "baseline",
            InitStrategy::Geo => "geo",
            InitStrategy::Expert => "expert",
            InitStrategy::Neural(_) => "neo",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitConfig {
    /// Number of polynomial pieces (M).
    pub pieces: usize,
    /// Guess total time is `distance / (speed_fraction · v_max)`.
    pub speed_fraction: f64,
    /// Relative length of the first and last piece.
    pub end_piece_factor: f64,
    /// Peak lateral offset of the expert's deformed seeds (m).
    pub expert_amplitude: f64,
    /// Relative cost difference below which expert seeds count as tied.
    pub expert_tie_tolerance: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            pieces: 3,
            speed_fraction: 0.7,
            end_piece_factor: 1.5,
            expert_amplitude: 1.5,
            expert_tie_tolerance: 1e-6,
        }
    }
}

fn planar(v: &DVector<f64>) -> Vec2 {
    Vec2::new(v[0], v[1])
}

/// Splits `total` as `[f, 1, …, 1, f]` and clamps each piece into the
/// duration range.
fn split_time(total: f64, cfg: &InitConfig, settings: &PlannerSettings) -> Vec<f64> {
    let m = cfg.pieces;
    let weights: Vec<f64> = (0..m)
        .map(|i| {
            if m > 1 && (i == 0 || i == m - 1) {
                cfg.end_piece_factor
            } else {
                1.0
            }
        })
        .collect();
    let sum: f64 = weights.iter().sum();
    weights
        .iter()
        .map(|w| settings.time.clamp(total * w / sum, GUESS_MARGIN))
        .collect()
}

fn total_time(length: f64, cfg: &InitConfig, settings: &PlannerSettings) -> f64 {
    length / (cfg.speed_fraction * settings.penalty.v_max)
}

fn params_from_points(points: &[Vec2], durations: Vec<f64>) -> TrajParams {
    let q = DMatrix::from_fn(2, points.len(), |d, k| points[k][d]);
    TrajParams::new(q, durations).expect("clamped durations are positive")
}

/// Waypoints evenly spaced on the segment, time from the straight distance.
pub fn baseline_init(
    init: &BoundaryState,
    target: &BoundaryState,
    cfg: &InitConfig,
    settings: &PlannerSettings,
) -> TrajParams {
    let (a, b) = (planar(&init.position), planar(&target.position));
    let m = cfg.pieces;
    let points: Vec<Vec2> = (1..m).map(|k| a + (b - a) * (k as f64 / m as f64)).collect();
    params_from_points(
        &points,
        split_time(total_time((b - a).norm(), cfg, settings), cfg, settings),
    )
}

#[derive(Clone, Copy, PartialEq)]
struct Node {
    f: f64,
    turn: u8,
    index: usize,
    dir: u8,
}

impl Eq for Node {}

impl Ord for Node {
    // min-heap on (f, turn, index)
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then(other.turn.cmp(&self.turn))
            .then(other.index.cmp(&self.index))
    }
}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

const MOVES: [(i64, i64); 8] = [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)];
const NO_DIR: u8 = 8;

/// Grid cells blocked for search: clearance below `inflation`, except the
/// two endpoint cells.
struct Blocked<'a> {
    world: &'a GridWorld,
    inflation: f64,
    start: usize,
    goal: usize,
}

impl Blocked<'_> {
    fn at(&self, index: usize) -> bool {
        if index == self.start || index == self.goal {
            return false;
        }
        let cols = self.world.cols();
        let d = self
            .world
            .cell_distance(index % cols, index / cols)
            .expect("distance field present");
        d < self.inflation
    }

    fn point(&self, p: Vec2) -> bool {
        match self.index_of(p) {
            Some(i) => self.at(i),
            None => true,
        }
    }

    fn index_of(&self, p: Vec2) -> Option<usize> {
        let (ix, iy) = self.world.cell_of(p);
        let (cols, rows) = (self.world.cols() as i64, self.world.rows() as i64);
        (ix >= 0 && iy >= 0 && ix < cols && iy < rows).then(|| (iy * cols + ix) as usize)
    }

    fn line_of_sight(&self, a: Vec2, b: Vec2) -> bool {
        let step = self.world.resolution() * 0.25;
        let n = ((b - a).norm() / step).ceil().max(1.0) as usize;
        (0..=n).all(|i| !self.point(a + (b - a) * (i as f64 / n as f64)))
    }
}

/// 8-connected A* over cells whose clearance is at least `inflation`.
/// Octile step costs, Euclidean heuristic; ties go to the smaller heading
/// change, then the lower row-major index.
pub fn astar_path(
    world: &GridWorld,
    start: Vec2,
    goal: Vec2,
    inflation: f64,
) -> Result<Vec<(usize, usize)>, InitError> {
    let (cols, rows) = (world.cols(), world.rows());
    let probe = Blocked {
        world,
        inflation,
        start: usize::MAX,
        goal: usize::MAX,
    };
    let (Some(s), Some(g)) = (probe.index_of(start), probe.index_of(goal)) else {
        return Err(InitError::NoPath);
    };
    let blocked = Blocked {
        start: s,
        goal: g,
        ..probe
    };
    let center = |i: usize| Vec2::new((i % cols) as f64, (i / cols) as f64);
    let h = |i: usize| (center(i) - center(g)).norm();

    let n = cols * rows;
    let mut cost = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut heap = BinaryHeap::new();
    cost[s] = 0.0;
    heap.push(Node {
        f: h(s),
        turn: 0,
        index: s,
        dir: NO_DIR,
    });
    while let Some(node) = heap.pop() {
        let i = node.index;
        if closed[i] {
            continue;
        }
        closed[i] = true;
        if i == g {
            let mut path = vec![(g % cols, g / cols)];
            let mut cur = g;
            while parent[cur] != usize::MAX {
                cur = parent[cur];
                path.push((cur % cols, cur / cols));
            }
            path.reverse();
            return Ok(path);
        }
        let (x, y) = ((i % cols) as i64, (i / cols) as i64);
        for (d, &(dx, dy)) in MOVES.iter().enumerate() {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx >= cols as i64 || ny >= rows as i64 {
                continue;
            }
            let j = ny as usize * cols + nx as usize;
            if closed[j] || blocked.at(j) {
                continue;
            }
            // no corner cutting through blocked cells
            if dx != 0 && dy != 0 {
                let side_a = y as usize * cols + nx as usize;
                let side_b = ny as usize * cols + x as usize;
                if blocked.at(side_a) || blocked.at(side_b) {
                    continue;
                }
            }
            let step = if dx != 0 && dy != 0 { SQRT_2 } else { 1.0 };
            let c = cost[i] + step;
            if c < cost[j] {
                cost[j] = c;
                parent[j] = i;
                let turn = if node.dir == NO_DIR {
                    0
                } else {
                    let diff = (d as i32 - node.dir as i32).rem_euclid(8);
                    diff.min(8 - diff) as u8
                };
                heap.push(Node {
                    f: c + h(j),
                    turn,
                    index: j,
                    dir: d as u8,
                });
            }
        }
    }
    Err(InitError::NoPath)
}

fn polyline_length(points: &[Vec2]) -> f64 {
    points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// Point at arclength `s` along `points`.
fn point_at(points: &[Vec2], s: f64) -> Vec2 {
    let mut acc = 0.0;
    for w in points.windows(2) {
        let len = (w[1] - w[0]).norm();
        if acc + len >= s && len > 0.0 {
            return w[0] + (w[1] - w[0]) * ((s - acc) / len);
        }
        acc += len;
    }
    *points.last().expect("non-empty polyline")
}

/// A* guess: the grid path is shortened by line-of-sight pruning, then
/// sampled at equal arclength. Falls back to [`baseline_init`] when no
/// path exists.
pub fn geo_init(
    world: &GridWorld,
    init: &BoundaryState,
    target: &BoundaryState,
    cfg: &InitConfig,
    settings: &PlannerSettings,
) -> TrajParams {
    let (a, b) = (planar(&init.position), planar(&target.position));
    let inflation = settings.penalty.d_safe;
    let Ok(cells) = astar_path(world, a, b, inflation) else {
        return baseline_init(init, target, cfg, settings);
    };
    let blocked = Blocked {
        world,
        inflation,
        start: cells.first().map(|&(x, y)| y * world.cols() + x).unwrap_or(usize::MAX),
        goal: cells.last().map(|&(x, y)| y * world.cols() + x).unwrap_or(usize::MAX),
    };
    let mut raw = vec![a];
    if cells.len() > 2 {
        raw.extend(cells[1..cells.len() - 1].iter().map(|&(x, y)| world.cell_center(x, y)));
    }
    raw.push(b);

    let mut pruned = vec![a];
    let mut anchor = 0;
    while anchor < raw.len() - 1 {
        let next = (anchor + 1..raw.len())
            .rev()
            .find(|&j| blocked.line_of_sight(raw[anchor], raw[j]))
            .unwrap_or(anchor + 1);
        pruned.push(raw[next]);
        anchor = next;
    }
    if pruned.len() == 2 {
        return baseline_init(init, target, cfg, settings);
    }

    let length = polyline_length(&pruned);
    let m = cfg.pieces;
    let points: Vec<Vec2> = (1..m)
        .map(|k| point_at(&pruned, length * k as f64 / m as f64))
        .collect();
    params_from_points(&points, split_time(total_time(length, cfg, settings), cfg, settings))
}

/// The three expert guesses: straight, then deformed to the left and right
/// by `±A·sin(πk/M)` along the segment normal.
pub fn expert_seeds(
    init: &BoundaryState,
    target: &BoundaryState,
    cfg: &InitConfig,
    settings: &PlannerSettings,
) -> [TrajParams; 3] {
    let straight = baseline_init(init, target, cfg, settings);
    let d = planar(&target.position) - planar(&init.position);
    let normal = if d.norm() > 0.0 {
        Vec2::new(-d.y, d.x) / d.norm()
    } else {
        Vec2::new(0.0, 1.0)
    };
    let m = cfg.pieces;
    let deform = |sign: f64| {
        let mut p = straight.clone();
        for k in 1..m {
            let off = normal * (sign * cfg.expert_amplitude * (PI * k as f64 / m as f64).sin());
            p.waypoints[(0, k - 1)] += off.x;
            p.waypoints[(1, k - 1)] += off.y;
        }
        p
    };
    let left = deform(1.0);
    let right = deform(-1.0);
    [straight, left, right]
}

/// Index of the lowest cost. Costs within `tolerance` (relative) of the
/// minimum count as tied and the lowest index wins.
pub fn select_lowest(costs: &[f64], tolerance: f64) -> usize {
    let min = costs.iter().copied().fold(f64::INFINITY, f64::min);
    costs
        .iter()
        .position(|&c| c <= min + tolerance * min.abs())
        .unwrap_or(0)
}

#[derive(Debug, Clone)]
pub struct ExpertOutcome {
    pub best: PlanResult,
    pub chosen: usize,
    pub costs: [f64; 3],
    pub results: Vec<PlanResult>,
}

impl ExpertOutcome {
    pub fn total_iterations(&self) -> usize {
        self.results.iter().map(|r| r.iterations).sum()
    }
}

/// Optimizes all three seeds and keeps the cheapest.
pub fn expert_plan(
    world: &GridWorld,
    init: &BoundaryState,
    target: &BoundaryState,
    cfg: &InitConfig,
    settings: &PlannerSettings,
) -> Result<ExpertOutcome, InitError> {
    let results = expert_seeds(init, target, cfg, settings)
        .iter()
        .map(|g| plan(init, target, g, world, settings))
        .collect::<Result<Vec<_>, _>>()?;
    let costs = [results[0].cost, results[1].cost, results[2].cost];
    let chosen = select_lowest(&costs, cfg.expert_tie_tolerance);
    Ok(ExpertOutcome {
        best: results[chosen].clone(),
        chosen,
        costs,
        results,
    })
}

/// Network guess mapped from the body frame of `pose` into the world.
pub fn neural_init(
    model: &MlpModel,
    observation: &Observation,
    pose: &Pose,
    settings: &PlannerSettings,
) -> Result<TrajParams, InitError> {
    let raw = model.forward(observation)?;
    let dim = 2;
    if raw.len() % (dim + 1) != 1 % (dim + 1) {
        return Err(InitError::ModelShapeMismatch(format!("{} outputs", raw.len())));
    }
    let pieces = (raw.len() + dim) / (dim + 1);
    let (body_q, tau) = model.decode(&raw, pieces);
    let points: Vec<Vec2> = body_q
        .chunks(dim)
        .map(|c| pose.point_to_world(Vec2::new(c[0], c[1])))
        .collect();
    let durations = settings
        .time
        .taus_to_times(&tau)
        .into_iter()
        .map(|t| settings.time.clamp(t, GUESS_MARGIN))
        .collect();
    Ok(params_from_points(&points, durations))
}

/// Bound on `|τ|` in training targets; `τ = ±6` is within 0.012 s of the
/// duration limits.
pub const TAU_TARGET_LIMIT: f64 = 6.0;

/// Body-frame waypoints (flattened per waypoint) and `τ` of a planner
/// output; the inverse of [`neural_init`] before normalization.
pub fn body_frame_target(params: &TrajParams, pose: &Pose, settings: &PlannerSettings) -> (Vec<f64>, Vec<f64>) {
    let q = &params.waypoints;
    let body = (0..q.ncols())
        .flat_map(|k| {
            let b = pose.point_to_body(Vec2::new(q[(0, k)], q[(1, k)]));
            [b.x, b.y]
        })
        .collect();
    let tf = &settings.time;
    // durations that drifted onto the flat ends of the sigmoid would give
    // unbounded targets
    let tau = params
        .durations
        .iter()
        .map(|&t| {
            tf.time_to_tau(tf.clamp(t, 1e-9))
                .expect("clamped inside")
                .clamp(-TAU_TARGET_LIMIT, TAU_TARGET_LIMIT)
        })
        .collect();
    (body, tau)
}

/// Heading of the body frame used for a replan: from `from` toward `to`,
/// or along +x when they coincide.
pub fn heading_between(from: Vec2, to: Vec2) -> f64 {
    let d = to - from;
    if d.norm() < 1e-9 {
        0.0
    } else {
        d.y.atan2(d.x)
    }
}

/// Everything a strategy may look at when building its guess.
#[derive(Debug, Clone, Copy)]
pub struct GuessContext<'a> {
    pub world: &'a GridWorld,
    pub init: &'a BoundaryState,
    pub target: &'a BoundaryState,
    /// Body frame for the network's observation and output.
    pub pose: Pose,
    /// Current drone velocity (world frame).
    pub velocity: Vec2,
}

#[derive(Debug, Clone)]
pub struct StrategyOutcome {
    pub result: PlanResult,
    pub guess: TrajParams,
    /// Solver iterations spent, summed over all seeds for the expert.
    pub iterations: usize,
    pub expert: Option<ExpertOutcome>,
}

/// Builds the strategy's guess and optimizes it.
pub fn run_strategy(
    strategy: &InitStrategy,
    ctx: &GuessContext<'_>,
    cfg: &InitConfig,
    settings: &PlannerSettings,
) -> Result<StrategyOutcome, InitError> {
    let single = |guess: TrajParams| -> Result<StrategyOutcome, InitError> {
        let result = plan(ctx.init, ctx.target, &guess, ctx.world, settings)?;
        Ok(StrategyOutcome {
            iterations: result.iterations,
            result,
            guess,
            expert: None,
        })
    };
    match strategy {
        InitStrategy::Baseline => single(baseline_init(ctx.init, ctx.target, cfg, settings)),
        InitStrategy::Geo => single(geo_init(ctx.world, ctx.init, ctx.target, cfg, settings)),
        InitStrategy::Neural(model) => {
            let obs = Observation::build(
                ctx.world,
                &ctx.pose,
                ctx.velocity,
                ctx.init,
                ctx.target,
                &model.normalization,
            );
            single(neural_init(model, &obs, &ctx.pose, settings)?)
        }
        InitStrategy::Expert => {
            let out = expert_plan(ctx.world, ctx.init, ctx.target, cfg, settings)?;
            let guess = expert_seeds(ctx.init, ctx.target, cfg, settings)[out.chosen].clone();
            Ok(StrategyOutcome {
                result: out.best.clone(),
                guess,
                iterations: out.total_iterations(),
                expert: Some(out),
            })
        }
    }
}
