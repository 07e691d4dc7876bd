//! Spatial-temporal trajectory optimization with learned warm starts and a
//! latency-tolerant replanning simulator.

pub mod initializers;
pub mod minco;
pub mod neural;
pub mod objective;
pub mod replan_sim;
pub mod solver;
pub mod world;

pub use initializers::{InitConfig, InitStrategy};
pub use minco::{BoundaryState, MincoError, TrajParams, Trajectory};
pub use neural::{MlpModel, Observation};
pub use objective::{CostWeights, PenaltyConfig, TimeTransform};
pub use replan_sim::{run_episode, EpisodeConfig, EpisodeReport, ReplanConfig};
pub use solver::{plan, PlanResult, PlannerSettings, SolverConfig};
pub use world::{GridWorld, SceneSpec, Vec2};
