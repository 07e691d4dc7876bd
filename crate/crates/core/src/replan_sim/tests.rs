use super::*;
use crate::initializers::baseline_init;
use crate::minco::{solve_coeffs, TrajParams};
use crate::world::{build_distance_field, preset_scene, Obstacle};
use nalgebra::{dvector, DMatrix};

fn empty() -> (SceneSpec, GridWorld) {
    let spec = SceneSpec::empty(0);
    let world = build_distance_field(&spec, 0.1);
    (spec, world)
}

fn scene(id: u32, seed: u64) -> (SceneSpec, GridWorld) {
    let spec = preset_scene(id, seed).unwrap();
    let world = build_distance_field(&spec, 0.1);
    (spec, world)
}

fn planar_of(s: &BoundaryState) -> Vec2 {
    Vec2::new(s.position[0], s.position[1])
}

#[test]
fn local_goal_on_open_ground() {
    let (_, w) = empty();
    let cfg = ReplanConfig::default();
    let g = select_local_goal(&w, Vec2::zeros(), Vec2::new(30.0, 0.0), &cfg, 0.4).unwrap();
    assert!((planar_of(&g) - Vec2::new(6.0, 0.0)).norm() < 1e-12);
    assert!((g.velocity[0] - 1.0).abs() < 1e-12 && g.velocity[1].abs() < 1e-12);
}

#[test]
fn local_goal_close_to_goal_stops_there() {
    let (_, w) = empty();
    let goal = Vec2::new(30.0, 0.0);
    let g = select_local_goal(&w, Vec2::new(29.6, 0.0), goal, &ReplanConfig::default(), 0.4).unwrap();
    assert_eq!(planar_of(&g), goal);
    assert_eq!(g.velocity.norm(), 0.0);
}

#[test]
fn local_goal_moves_out_of_obstacle() {
    let mut spec = SceneSpec::empty(0);
    spec.obstacles.push(Obstacle {
        cx: 6.0,
        cy: 0.0,
        width: 1.0,
    });
    let w = build_distance_field(&spec, 0.1);
    let g = select_local_goal(&w, Vec2::zeros(), Vec2::new(30.0, 0.0), &ReplanConfig::default(), 0.4).unwrap();
    let p = planar_of(&g);
    assert!(w.distance(p) >= 0.4, "{p:?}");
    assert!((p - Vec2::new(6.0, 0.0)).norm() <= 2.0);
    // cruise velocity points at the global goal
    let dir = (Vec2::new(30.0, 0.0) - p).normalize();
    assert!((Vec2::new(g.velocity[0], g.velocity[1]) - dir).norm() < 1e-12);
}

#[test]
fn local_goal_reports_no_free_cell() {
    let mut spec = SceneSpec::empty(0);
    spec.obstacles.push(Obstacle {
        cx: 6.0,
        cy: 0.0,
        width: 9.0,
    });
    let w = build_distance_field(&spec, 0.1);
    let r = select_local_goal(
        &w,
        Vec2::new(0.0, 0.0),
        Vec2::new(30.0, 0.0),
        &ReplanConfig::default(),
        0.4,
    );
    assert_eq!(r.unwrap_err(), SimError::NoFreeCell);
}

fn line_traj(from: [f64; 2], to: [f64; 2], v: f64) -> Trajectory {
    let init = BoundaryState::with_velocity(dvector![from[0], from[1]], dvector![v, 0.0]);
    let target = BoundaryState::with_velocity(dvector![to[0], to[1]], dvector![v, 0.0]);
    let q = DMatrix::from_fn(2, 2, |d, k| from[d] + (to[d] - from[d]) * (k + 1) as f64 / 3.0);
    let len = ((to[0] - from[0]).powi(2) + (to[1] - from[1]).powi(2)).sqrt();
    let params = TrajParams::new(q, vec![len / (3.0 * v); 3]).unwrap();
    solve_coeffs(&init, &target, &params).unwrap()
}

#[test]
fn splice_keeps_prefix_and_hands_over() {
    let old = line_traj([0.0, 0.0], [6.0, 0.0], 1.0);
    let mut c = CommittedTrajectory::hover(&dvector![0.0, 0.0]);
    c.splice_at(old.clone(), 0.0, 0.0).unwrap();
    let (t_x, foresee, eps) = (2.0, 1.0, 1e-3);
    let before = c.query(t_x + foresee - eps);
    let handover = c.query(t_x + foresee);
    let start = handover.clone();
    let new = {
        let target = BoundaryState::with_velocity(dvector![8.0, 2.0], dvector![1.0, 0.0]);
        let guess = baseline_init(&start, &target, &InitConfig::default(), &PlannerSettings::default());
        solve_coeffs(&start, &target, &guess).unwrap()
    };
    let c = splice(c, new.clone(), t_x, foresee).unwrap();
    assert_eq!(c.len(), 3);
    assert_eq!(c.query(t_x + foresee - eps), before);
    let after = c.query(t_x + foresee + eps);
    let local = new.state(eps).unwrap();
    assert!((&after.position - &local.position).norm() < 1e-12);
    assert!((&after.velocity - &local.velocity).norm() < 1e-12);
    let at = c.query(t_x + foresee);
    assert!((&at.position - &handover.position).norm() < 1e-6);
    assert!((&at.velocity - &handover.velocity).norm() < 1e-6);
}

#[test]
fn splice_rejects_past_activation() {
    let mut c = CommittedTrajectory::hover(&dvector![0.0, 0.0]);
    c.splice_at(line_traj([0.0, 0.0], [3.0, 0.0], 1.0), 2.0, 2.0).unwrap();
    let r = splice(c, line_traj([0.0, 0.0], [3.0, 0.0], 1.0), 0.5, 1.0);
    assert_eq!(
        r.unwrap_err(),
        SimError::ActivationInPast {
            activation: 1.5,
            latest: 2.0
        }
    );
}

#[test]
fn query_holds_end_at_rest() {
    let mut c = CommittedTrajectory::hover(&dvector![1.0, 1.0]);
    assert_eq!(c.query(50.0).position, dvector![1.0, 1.0]);
    let line = line_traj([0.0, 0.0], [3.0, 0.0], 1.0);
    c.splice_at(line.clone(), 1.0, 1.0).unwrap();
    let s = c.query(1.0 + line.total_duration() + 5.0);
    assert!((s.position[0] - 3.0).abs() < 1e-9);
    assert_eq!(s.velocity.norm(), 0.0);
    assert_eq!(c.query(0.5).position, dvector![1.0, 1.0]);
}

#[test]
fn tracker_rest_is_a_fixed_point() {
    let cfg = ReplanConfig::default();
    let hold = BoundaryState::at_rest(dvector![2.0, -1.0]);
    let (mut p, mut v) = (Vec2::new(2.0, -1.0), Vec2::zeros());
    for _ in 0..600 {
        (p, v) = tracker_step(p, v, &hold, &cfg);
    }
    assert_eq!((p, v), (Vec2::new(2.0, -1.0), Vec2::zeros()));
    // and pulls back toward the command from an offset
    let (mut p, mut v) = (Vec2::new(2.5, -1.0), Vec2::zeros());
    for _ in 0..600 {
        (p, v) = tracker_step(p, v, &hold, &cfg);
    }
    assert!((p - Vec2::new(2.0, -1.0)).norm() < 1e-3 && v.norm() < 1e-3);
}

#[test]
fn empty_map_flight_succeeds() {
    let (spec, w) = empty();
    let cfg = EpisodeConfig::default();
    for s in [InitStrategy::Baseline, InitStrategy::Geo] {
        let r = run_episode(&w, &spec, &s, &cfg, 3);
        assert!(r.success, "{} {:?}", s.name(), r.outcome);
        assert_eq!(r.collision_samples, 0);
        let end = Vec2::new(r.final_position[0], r.final_position[1]);
        assert!((end - spec.goal()).norm() < 0.5);
        assert_eq!(r.iterations.len(), r.replans.len());
        assert!(r.position_rmse >= 0.0 && r.velocity_rmse >= 0.0);
        assert!(r.max_command_jump < 1.0 / 60.0 * 2.0 + 1e-6);
        // replans fire every ΔT_r until the goal is reached
        let expected = (r.flight_time / cfg.replan.replan_interval).floor() as i64;
        assert!(
            (r.replans.len() as i64 - expected).abs() <= 1,
            "{} replans in {} s",
            r.replans.len(),
            r.flight_time
        );
    }
}

#[test]
fn reports_are_byte_identical() {
    let (spec, w) = scene(4, 12);
    let cfg = EpisodeConfig::default();
    let a = run_episode(&w, &spec, &InitStrategy::Geo, &cfg, 5);
    let b = run_episode(&w, &spec, &InitStrategy::Geo, &cfg, 5);
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(a.samples_csv(), b.samples_csv());
    assert_ne!(
        a.to_json(),
        run_episode(&w, &spec, &InitStrategy::Geo, &cfg, 6).to_json()
    );
}

#[test]
fn sample_log_cadence_and_header() {
    let (spec, w) = empty();
    let r = run_episode(&w, &spec, &InitStrategy::Baseline, &EpisodeConfig::default(), 0);
    let csv = r.samples_csv();
    assert_eq!(csv.lines().next().unwrap(), SAMPLE_CSV_HEADER);
    assert_eq!(csv.lines().count(), r.samples.len() + 1);
    assert!(r.samples.windows(2).all(|s| (s[1].t - s[0].t - 0.5).abs() < 1e-9));
    let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(json["format"], EPISODE_FORMAT);
    assert!(json.get("samples").is_none());
}

#[test]
fn start_jitter_is_seeded_and_bounded() {
    let spec = SceneSpec::empty(0);
    let cfg = ReplanConfig::default();
    let a = start_position(&spec, &cfg, 9);
    assert_eq!(a, start_position(&spec, &cfg, 9));
    assert_ne!(a, start_position(&spec, &cfg, 10));
    for s in 0..50 {
        let p = start_position(&spec, &cfg, s);
        assert_eq!(p.x, 0.0);
        assert!(p.y.abs() <= 0.5);
    }
    let still = ReplanConfig {
        start_jitter: 0.0,
        ..cfg
    };
    assert_eq!(start_position(&spec, &still, 4), spec.start());
}

fn latency_cfg(foresee: f64) -> EpisodeConfig {
    let mut cfg = EpisodeConfig::default();
    cfg.replan.latency = 0.8;
    cfg.replan.foresee = foresee;
    cfg
}

#[test]
fn foresight_absorbs_latency() {
    let (spec, w) = scene(2, 0);
    let with = run_episode(&w, &spec, &InitStrategy::Geo, &latency_cfg(1.0), 1);
    let without = run_episode(&w, &spec, &InitStrategy::Geo, &latency_cfg(0.0), 1);
    assert!(
        with.position_rmse < without.position_rmse,
        "{} vs {}",
        with.position_rmse,
        without.position_rmse
    );
    assert_eq!(with.late_plans, 0);
    assert_eq!(without.late_plans, without.replans.len());
    // latency within the horizon keeps the command continuous
    assert!(
        with.max_command_jump < 1.0 / 60.0 * 2.0 + 1e-6,
        "{}",
        with.max_command_jump
    );
    assert!(without.max_command_jump > 0.1, "{}", without.max_command_jump);
}

#[test]
fn late_plans_are_flagged() {
    let (spec, w) = empty();
    let mut cfg = latency_cfg(0.5);
    cfg.replan.timeout = 10.0;
    let r = run_episode(&w, &spec, &InitStrategy::Baseline, &cfg, 0);
    assert!(r.late_plans > 0 && r.late_plans == r.replans.len());
    assert!(r.replans.iter().all(|p| (p.activation - p.t - 0.8).abs() < 1e-9));
}

#[test]
fn invalid_configs_are_rejected() {
    let mut c = ReplanConfig::default();
    assert!(c.validate().is_ok());
    c.replan_interval = 0.001;
    assert!(c.validate().is_err());
    let c = ReplanConfig {
        foresee: -1.0,
        ..ReplanConfig::default()
    };
    assert!(matches!(c.validate(), Err(SimError::InvalidConfig(_))));
}

#[test]
fn config_json_rejects_unknown_keys() {
    let cfg: EpisodeConfig = serde_json::from_str(r#"{"replan": {"latency": 0.8}}"#).unwrap();
    assert_eq!(cfg.replan.latency, 0.8);
    assert_eq!(cfg.replan.foresee, 1.0);
    assert!(serde_json::from_str::<EpisodeConfig>(r#"{"replan": {"latnecy": 0.8}}"#).is_err());
}
