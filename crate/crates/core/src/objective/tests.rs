use super::gradcheck::{central_difference, relative_error, run_gradcheck, term_error};
use super::*;
use crate::minco::{solve_coeffs, Trajectory};
use crate::world::{build_distance_field, Obstacle, SceneSpec};
use nalgebra::dvector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn v2(x: f64, y: f64) -> DVector<f64> {
    dvector![x, y]
}

fn empty_world() -> GridWorld {
    build_distance_field(&SceneSpec::empty(0), 0.1)
}

fn line(start: [f64; 2], vel: [f64; 2], duration: f64) -> Trajectory {
    let mut c = DMatrix::zeros(6, 2);
    c[(0, 0)] = start[0];
    c[(0, 1)] = start[1];
    c[(1, 0)] = vel[0];
    c[(1, 1)] = vel[1];
    Trajectory::from_coefficients(3, vec![c], vec![duration]).unwrap()
}

fn random_traj(rng: &mut ChaCha8Rng, pieces: usize) -> Trajectory {
    let mut r = || rng.random_range(-1.5..1.5);
    let init = BoundaryState::new(v2(5.0 + r(), r()), v2(r(), r()), v2(r(), r()));
    let target = BoundaryState::new(v2(9.0 + r(), r()), v2(r(), r()), v2(r(), r()));
    let q = DMatrix::from_fn(
        2,
        pieces - 1,
        |d, k| if d == 0 { 6.0 + k as f64 } else { 0.0 } + r() * 2.0,
    );
    let t = (0..pieces).map(|_| 0.8 + r().abs()).collect();
    solve_coeffs(&init, &target, &TrajParams::new(q, t).unwrap()).unwrap()
}

#[test]
fn effort_of_zero_trajectory_is_zero() {
    let t = line([0.0, 0.0], [0.0, 0.0], 2.0);
    let e = control_effort(&t);
    assert_eq!(e.cost, 0.0);
    assert!(e.grad.coeffs[0].iter().all(|&v| v == 0.0));
    assert_eq!(e.grad.durations, vec![0.0]);
}

#[test]
fn min_jerk_effort_closed_form() {
    for &(d, t) in &[(1.0, 1.0), (2.5, 3.0), (0.3, 0.7)] {
        let params = TrajParams::new(DMatrix::zeros(1, 0), vec![t]).unwrap();
        let traj = solve_coeffs(
            &BoundaryState::at_rest(dvector![0.0]),
            &BoundaryState::at_rest(dvector![d]),
            &params,
        )
        .unwrap();
        let cost = control_effort(&traj).cost;
        let closed = 720.0 * d * d / t.powi(5);
        assert!((cost - closed).abs() <= 1e-9 * closed);

        // composite Simpson on the jerk (d/T³)(60 − 360s + 360s²)
        let n = 2000;
        let h = t / n as f64;
        let jerk = |x: f64| {
            let s = x / t;
            d / t.powi(3) * (60.0 - 360.0 * s + 360.0 * s * s)
        };
        let mut quad = jerk(0.0).powi(2) + jerk(t).powi(2);
        for i in 1..n {
            quad += if i % 2 == 1 { 4.0 } else { 2.0 } * jerk(i as f64 * h).powi(2);
        }
        quad *= h / 3.0;
        assert!((quad - closed).abs() <= 1e-8 * closed);
    }
}

#[test]
fn effort_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let t = random_traj(&mut rng, 3);
        assert!(term_error(&t, control_effort) < 1e-5);
    }
}

#[test]
fn time_cost_examples() {
    assert_eq!(time_cost(&[1.0, 1.0, 1.0]), (3.0, vec![1.0, 1.0, 1.0]));
    assert_eq!(time_cost(&[0.5, 2.0, 5.0]).0, 7.5);
    assert_eq!(time_cost(&[5.0, 0.5, 2.0]).0, 7.5);
}

#[test]
fn obstacle_cost_is_zero_in_empty_world() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let t = random_traj(&mut rng, 3);
    let o = obstacle_cost(&t, &empty_world(), &PenaltyConfig::default()).unwrap();
    assert_eq!(o.cost, 0.0);
    assert!(o.grad.coeffs.iter().all(|c| c.iter().all(|&v| v == 0.0)));
    assert!(o.grad.durations.iter().all(|&v| v == 0.0));
}

#[test]
fn obstacle_cost_needs_distance_field() {
    let w = GridWorld::rasterize(&SceneSpec::empty(0), 0.1);
    let t = line([0.0, 0.0], [1.0, 0.0], 1.0);
    assert_eq!(
        obstacle_cost(&t, &w, &PenaltyConfig::default()),
        Err(ObjectiveError::WorldMissingDistanceField)
    );
}

fn pole_world() -> GridWorld {
    // one occupied cell centered at (2.05, 0.05)
    let cols = 60;
    let rows = 40;
    let mut occ = vec![false; cols * rows];
    occ[20 * cols + 40] = true;
    let mut w = GridWorld::from_occupancy(Vec2::new(-2.0, -2.0), 0.1, cols, rows, occ);
    w.compute_distance_field();
    w
}

#[test]
fn obstacle_cost_matches_dense_quadrature() {
    let w = pole_world();
    let cfg = PenaltyConfig::default();
    // passes 0.2 m above the pole center at constant speed
    let traj = line([1.55, 0.25], [1.0, 0.0], 1.0);
    let o = obstacle_cost(&traj, &w, &cfg).unwrap();
    assert!(o.cost > 0.0);

    let n = 4096;
    let h = 1.0 / n as f64;
    let mut dense = 0.0;
    for j in 0..=n {
        let t = j as f64 * h;
        let p = Vec2::new(1.55 + t, 0.25);
        let viol = (cfg.d_safe - w.distance(p)).max(0.0);
        let wj = if j == 0 || j == n { 0.5 } else { 1.0 };
        dense += h * wj * viol.powi(3);
    }
    assert!((o.cost - dense).abs() <= 0.02 * dense, "{} vs {}", o.cost, dense);
}

#[test]
fn obstacle_gradients_match_finite_differences() {
    let w = pole_world();
    let cfg = PenaltyConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut checked = 0;
    while checked < 20 {
        let mut r = || rng.random_range(-0.3..0.3);
        let init = BoundaryState::new(v2(0.3 + r(), 0.2 + r()), v2(1.0, r()), v2(r(), r()));
        let target = BoundaryState::new(v2(3.7 + r(), r()), v2(1.0, r()), v2(0.0, 0.0));
        let q = DMatrix::from_fn(2, 1, |d, _| if d == 0 { 2.0 + r() } else { 0.2 + r() });
        let traj = solve_coeffs(&init, &target, &TrajParams::new(q, vec![1.7 + r(), 1.6 + r()]).unwrap()).unwrap();
        // skip configurations with active samples on interpolation kinks
        let mut kink = false;
        for i in 0..2 {
            for j in 0..=16 {
                let p = traj.eval_piece(i, traj.durations()[i] * j as f64 / 16.0, 0);
                let u = (Vec2::new(p[0], p[1]) - w.origin()) / 0.1 - Vec2::new(0.5, 0.5);
                let near = |v: f64| (v - v.round()).abs() < 2e-3;
                if w.distance(Vec2::new(p[0], p[1])) < 0.45 && (near(u.x) || near(u.y)) {
                    kink = true;
                }
            }
        }
        let o = obstacle_cost(&traj, &w, &cfg).unwrap();
        if kink || o.cost == 0.0 {
            continue;
        }
        checked += 1;
        let err = term_error(&traj, |t| obstacle_cost(t, &w, &cfg).unwrap());
        assert!(err < 1e-4, "relative error {err}");
    }
}

#[test]
fn feasibility_zero_inside_limits() {
    let t = line([0.0, 0.0], [0.6, 0.6], 2.0);
    let f = feasibility_cost(&t, &PenaltyConfig::default());
    assert_eq!(f.cost, 0.0);
    assert_eq!(f.grad.durations, vec![0.0]);
}

#[test]
fn feasibility_constant_overspeed() {
    for duration in [0.5, 1.0, 3.7] {
        let t = line([0.0, 0.0], [1.2, 0.0], duration);
        let f = feasibility_cost(&t, &PenaltyConfig::default());
        let want = duration * 0.085184;
        assert!((f.cost - want).abs() < 1e-12, "{} vs {}", f.cost, want);
    }
}

#[test]
fn feasibility_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let cfg = PenaltyConfig::default();
    let mut active = 0;
    for _ in 0..30 {
        let t = random_traj(&mut rng, 3);
        if feasibility_cost(&t, &cfg).cost > 0.0 {
            active += 1;
        }
        let err = term_error(&t, |t| feasibility_cost(t, &cfg));
        assert!(err < 1e-4, "relative error {err}");
    }
    assert!(active > 10);
}

#[test]
fn tau_transform_examples() {
    let tf = TimeTransform::default();
    assert_eq!(tf.tau_to_time(0.0), 2.75);
    for i in -100..=100 {
        let tau = i as f64 / 10.0;
        let back = tf.time_to_tau(tf.tau_to_time(tau)).unwrap();
        assert!(
            (back - tau).abs() < 1e-10 * tau.abs().max(1.0) * 100.0,
            "{tau} -> {back}"
        );
        assert!((back - tau).abs() < 1e-8);
    }
    let mut prev = tf.tau_to_time(0.0);
    for i in 1..60 {
        let t = tf.tau_to_time(i as f64);
        assert!(t >= prev && t <= 5.0);
        prev = t;
    }
    assert!((tf.tau_to_time(40.0) - 5.0).abs() < 1e-12);
    assert!(matches!(tf.time_to_tau(5.0), Err(ObjectiveError::OutOfRange { .. })));
    assert!(matches!(tf.time_to_tau(0.5), Err(ObjectiveError::OutOfRange { .. })));
    let h = 1e-6;
    let fd = (tf.tau_to_time(0.3 + h) - tf.tau_to_time(0.3 - h)) / (2.0 * h);
    assert!((fd - tf.dtime_dtau(0.3)).abs() < 1e-8);
}

fn setup() -> (BoundaryState, BoundaryState, GridWorld) {
    let mut spec = SceneSpec::empty(0);
    spec.obstacles = vec![
        Obstacle {
            cx: 3.0,
            cy: 0.3,
            width: 0.6,
        },
        Obstacle {
            cx: 4.5,
            cy: -1.0,
            width: 0.8,
        },
    ];
    (
        BoundaryState::with_velocity(v2(0.0, 0.0), v2(1.0, 0.0)),
        BoundaryState::with_velocity(v2(6.0, 0.0), v2(1.0, 0.0)),
        build_distance_field(&spec, 0.1),
    )
}

#[test]
fn time_only_weights() {
    let (init, target, world) = setup();
    let weights = CostWeights::from_array([0.0, 1.0, 0.0, 0.0]);
    let (pc, tf) = (PenaltyConfig::default(), TimeTransform::default());
    let p = Problem {
        init: &init,
        target: &target,
        world: &world,
        weights: &weights,
        penalty: &pc,
        time: &tf,
    };
    let tau = vec![0.2, -0.4, 1.1];
    let e = p
        .total_objective(&DMatrix::from_row_slice(2, 2, &[2.0, 4.0, 0.5, -0.5]), &tau)
        .unwrap();
    let want: f64 = tf.taus_to_times(&tau).iter().sum();
    assert!((e.value - want).abs() < 1e-12);
    assert!(e.d_waypoints.amax() < 1e-12);
}

#[test]
fn empty_world_straight_line_has_no_obstacle_term() {
    let init = BoundaryState::at_rest(v2(0.0, 0.0));
    let target = BoundaryState::at_rest(v2(6.0, 0.0));
    let world = empty_world();
    let (w, pc, tf) = (
        CostWeights::default(),
        PenaltyConfig::default(),
        TimeTransform::default(),
    );
    let p = Problem {
        init: &init,
        target: &target,
        world: &world,
        weights: &w,
        penalty: &pc,
        time: &tf,
    };
    let e = p
        .total_objective(&DMatrix::from_row_slice(2, 2, &[2.0, 4.0, 0.0, 0.0]), &[0.5, 0.0, 0.5])
        .unwrap();
    assert_eq!(e.breakdown.obstacle, 0.0);
    assert!(e.value > 0.0);
}

#[test]
fn total_objective_gradient_and_purity() {
    let (init, target, world) = setup();
    let (w, pc, tf) = (
        CostWeights::default(),
        PenaltyConfig::default(),
        TimeTransform::default(),
    );
    let p = Problem {
        init: &init,
        target: &target,
        world: &world,
        weights: &w,
        penalty: &pc,
        time: &tf,
    };
    let q = DMatrix::from_row_slice(2, 2, &[2.03, 3.96, 0.21, -0.37]);
    let tau = vec![-0.3, 0.1, 0.25];
    let a = p.total_objective(&q, &tau).unwrap();
    let b = p.total_objective(&q, &tau).unwrap();
    assert_eq!(a.value.to_bits(), b.value.to_bits());
    assert_eq!(a, b);
    assert!(a.breakdown.obstacle > 0.0);

    let x = p.pack(&q, &tau);
    let numeric = central_difference(&x, |x| {
        let (q, t) = p.unpack(x, 3);
        p.total_objective(&q, &t).unwrap().value
    });
    assert!(relative_error(a.d_waypoints.as_slice(), &numeric[..4]) < 1e-4);
    assert!(relative_error(&a.d_tau, &numeric[4..]) < 1e-4);

    let mut g = vec![0.0; x.len()];
    let v = p.evaluate_flat(&x, &mut g).unwrap();
    assert_eq!(v, a.value);
    assert_eq!(&g[4..], &a.d_tau[..]);
    let mut bad = vec![0.0; 6];
    assert!(p.evaluate_flat(&x[..6], &mut bad).is_err());
}

#[test]
fn terms_accumulate_per_piece() {
    let (_, _, world) = setup();
    let cfg = PenaltyConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let traj = random_traj(&mut rng, 3);
    let whole = [
        control_effort(&traj).cost,
        obstacle_cost(&traj, &world, &cfg).unwrap().cost,
        feasibility_cost(&traj, &cfg).cost,
    ];
    let mut sums = [0.0; 3];
    for i in 0..3 {
        let piece =
            Trajectory::from_coefficients(3, vec![traj.coefficients()[i].clone()], vec![traj.durations()[i]]).unwrap();
        sums[0] += control_effort(&piece).cost;
        sums[1] += obstacle_cost(&piece, &world, &cfg).unwrap().cost;
        sums[2] += feasibility_cost(&piece, &cfg).cost;
    }
    for (a, b) in whole.iter().zip(sums) {
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }
}

#[test]
fn small_gradcheck_run_passes() {
    let report = run_gradcheck(10, 3);
    assert_eq!(report.trials, 10);
    assert!(report.max_error() < 1e-4, "{report:?}");
    assert_eq!(report, run_gradcheck(10, 3));
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn every_term_is_nonnegative_and_finite(
            q in prop::collection::vec(-6.0f64..6.0, 4),
            tau in prop::collection::vec(-8.0f64..8.0, 3),
        ) {
            let (init, target, world) = setup();
            let (w, pc, tf) = (CostWeights::default(), PenaltyConfig::default(), TimeTransform::default());
            let p = Problem { init: &init, target: &target, world: &world, weights: &w, penalty: &pc, time: &tf };
            let e = p.total_objective(&DMatrix::from_column_slice(2, 2, &q), &tau).unwrap();
            let b = e.breakdown;
            prop_assert!(e.value.is_finite());
            prop_assert!(b.effort >= 0.0 && b.time >= 0.0 && b.obstacle >= 0.0 && b.feasibility >= 0.0);
        }
    }
}
