//! Shared fixtures for the criterion benches.

use nalgebra::{dvector, DMatrix};
use neotraj::initializers::baseline_init;
use neotraj::world::{build_distance_field, preset_scene};
use neotraj::{BoundaryState, GridWorld, InitConfig, PlannerSettings, TrajParams};

/// A local problem on preset 6: 6 m forward through the obstacle field.
pub struct Fixture {
    pub world: GridWorld,
    pub init: BoundaryState,
    pub target: BoundaryState,
    pub guess: TrajParams,
    pub settings: PlannerSettings,
}

impl Fixture {
    pub fn new() -> Self {
        let spec = preset_scene(6, 3).expect("preset packs");
        let world = build_distance_field(&spec, 0.1);
        let init = BoundaryState::with_velocity(dvector![4.0, 0.5], dvector![1.0, 0.0]);
        let target = BoundaryState::with_velocity(dvector![10.0, -0.5], dvector![1.0, 0.0]);
        let settings = PlannerSettings::default();
        let guess = baseline_init(&init, &target, &InitConfig::default(), &settings);
        Self {
            world,
            init,
            target,
            guess,
            settings,
        }
    }

    /// `m`-piece guess along the straight segment, 1 s per piece.
    pub fn straight(&self, m: usize) -> TrajParams {
        let a = &self.init.position;
        let b = &self.target.position;
        let q = DMatrix::from_fn(2, m - 1, |d, k| a[d] + (b[d] - a[d]) * (k + 1) as f64 / m as f64);
        TrajParams::new(q, vec![1.0; m]).expect("valid")
    }
}

impl Default for Fixture {
    fn default() -> Self {
        Self::new()
    }
}
