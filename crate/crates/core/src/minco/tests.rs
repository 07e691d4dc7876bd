use super::*;
use nalgebra::{dmatrix, dvector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rest(p: &[f64]) -> BoundaryState {
    BoundaryState::at_rest(DVector::from_column_slice(p))
}

fn random_state(rng: &mut ChaCha8Rng, dim: usize) -> BoundaryState {
    let mut v = || DVector::from_fn(dim, |_, _| rng.random_range(-2.0..2.0));
    BoundaryState::new(v(), v(), v())
}

fn random_params(rng: &mut ChaCha8Rng, dim: usize, pieces: usize) -> TrajParams {
    let q = DMatrix::from_fn(dim, pieces - 1, |_, _| rng.random_range(-3.0..3.0));
    let t = (0..pieces).map(|_| rng.random_range(0.5..3.0)).collect();
    TrajParams::new(q, t).unwrap()
}

/// Dense Gaussian elimination, independent of the banded path.
fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for k in 0..n {
        let p = (k..n).max_by(|&x, &y| a[x][k].abs().total_cmp(&a[y][k].abs())).unwrap();
        a.swap(k, p);
        b.swap(k, p);
        for i in (k + 1)..n {
            let l = a[i][k] / a[k][k];
            for j in k..n {
                a[i][j] -= l * a[k][j];
            }
            b[i] -= l * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = ((k + 1)..n).map(|j| a[k][j] * x[j]).sum();
        x[k] = (b[k] - s) / a[k][k];
    }
    x
}

#[test]
fn min_jerk_rest_to_rest_matches_dense_solve() {
    // rows: p(0), v(0), a(0), p(1), v(1), a(1) of the monomial basis
    let mut a = vec![vec![0.0; 6]; 6];
    a[0][0] = 1.0;
    a[1][1] = 1.0;
    a[2][2] = 2.0;
    for k in 0..6 {
        a[3][k] = 1.0;
        a[4][k] = k as f64;
        a[5][k] = (k * k.saturating_sub(1)) as f64;
    }
    let oracle = dense_solve(a, vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    let expected = [0.0, 0.0, 0.0, 10.0, -15.0, 6.0];
    for (o, e) in oracle.iter().zip(expected) {
        assert!((o - e).abs() < 1e-12);
    }

    let params = TrajParams::new(DMatrix::zeros(1, 0), vec![1.0]).unwrap();
    let traj = solve_coeffs(&rest(&[0.0]), &rest(&[1.0]), &params).unwrap();
    for (k, e) in expected.iter().enumerate() {
        assert!((traj.coefficients()[0][(k, 0)] - e).abs() < 1e-12);
    }
}

#[test]
fn zero_boundary_gives_zero_trajectory() {
    let params = TrajParams::new(DMatrix::zeros(2, 3), vec![0.7, 1.3, 2.0, 0.9]).unwrap();
    let traj = solve_coeffs(&rest(&[0.0, 0.0]), &rest(&[0.0, 0.0]), &params).unwrap();
    assert!(traj.coefficients().iter().all(|c| c.iter().all(|&v| v == 0.0)));
    for t in [0.0, 0.5, 2.2, 4.9] {
        for order in 0..=5 {
            assert_eq!(traj.eval(t, order).unwrap().amax(), 0.0);
        }
    }
}

#[test]
fn waypoint_interpolation_and_mirror_symmetry() {
    let params = TrajParams::new(dmatrix![1.0; 0.0], vec![1.0, 1.0]).unwrap();
    let traj = solve_coeffs(&rest(&[0.0, 0.0]), &rest(&[2.0, 0.0]), &params).unwrap();
    let mid = traj.eval(1.0, 0).unwrap();
    assert!((mid - dvector![1.0, 0.0]).amax() < 1e-12);
    for i in 0..=40 {
        let t = 2.0 * i as f64 / 40.0;
        let x = traj.eval(t, 0).unwrap()[0];
        let mirrored = 2.0 - traj.eval(2.0 - t, 0).unwrap()[0];
        assert!((x - mirrored).abs() < 1e-12);
    }
}

#[test]
fn eval_min_jerk_midpoint() {
    let params = TrajParams::new(DMatrix::zeros(1, 0), vec![1.0]).unwrap();
    let traj = solve_coeffs(&rest(&[0.0]), &rest(&[1.0]), &params).unwrap();
    assert!((traj.eval(0.5, 0).unwrap()[0] - 0.5).abs() < 1e-12);
    // d/dt (10t³ − 15t⁴ + 6t⁵) = 30t² − 60t³ + 30t⁴ = 1.875 at t = 0.5
    assert!((traj.eval(0.5, 1).unwrap()[0] - 1.875).abs() < 1e-12);
    assert!(matches!(traj.eval(1.0 + 1e-6, 0), Err(MincoError::OutOfDomain { .. })));
    assert!(matches!(traj.eval(-0.1, 0), Err(MincoError::OutOfDomain { .. })));
    assert!((traj.eval(1.0, 0).unwrap()[0] - 1.0).abs() < 1e-12);
}

#[test]
fn rejects_bad_durations() {
    let q = DMatrix::zeros(1, 1);
    assert!(matches!(
        TrajParams::new(q.clone(), vec![1.0, 0.0]),
        Err(MincoError::NonPositiveDuration { index: 1, .. })
    ));
    assert!(matches!(
        TrajParams::new(q, vec![1.0]),
        Err(MincoError::ShapeMismatch(_))
    ));
}

#[test]
fn constraints_hold_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..100 {
        let dim = 1 + trial % 3;
        let pieces = 1 + trial % 6;
        let init = random_state(&mut rng, dim);
        let target = random_state(&mut rng, dim);
        let params = random_params(&mut rng, dim, pieces);
        let traj = solve_coeffs(&init, &target, &params).unwrap();
        let r = constraint_residual(&traj, &init, &target, &params);
        assert!(r < 1e-8, "trial {trial}: residual {r}");
    }
}

#[test]
fn time_dilation_with_rest_boundaries() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let params = random_params(&mut rng, 2, 3);
        let init = rest(&[rng.random_range(-1.0..1.0), 0.3]);
        let target = rest(&[4.0, rng.random_range(-1.0..1.0)]);
        let slow = TrajParams::new(
            params.waypoints.clone(),
            params.durations.iter().map(|t| 2.0 * t).collect(),
        )
        .unwrap();
        let a = solve_coeffs(&init, &target, &params).unwrap();
        let b = solve_coeffs(&init, &target, &slow).unwrap();
        for i in 0..=50 {
            let t = a.total_duration() * i as f64 / 50.0;
            let diff = b.eval(2.0 * t, 0).unwrap() - a.eval(t, 0).unwrap();
            assert!(diff.amax() < 1e-8);
        }
    }
}

/// Five-point Gauss–Legendre, exact for the degree-4 integrand ‖p‴‖².
fn jerk_energy_quadrature(coeffs: &[DMatrix<f64>], durations: &[f64]) -> f64 {
    let nodes = [
        (0.0, 128.0 / 225.0),
        (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
        (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
        (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
        (0.906_179_845_938_664, 0.236_926_885_056_189_1),
    ];
    let mut total = 0.0;
    for (c, &t) in coeffs.iter().zip(durations) {
        for &(x, w) in &nodes {
            let s = 0.5 * t * (x + 1.0);
            for d in 0..c.ncols() {
                let j = 6.0 * c[(3, d)] + 24.0 * c[(4, d)] * s + 60.0 * c[(5, d)] * s * s;
                total += 0.5 * t * w * j * j;
            }
        }
    }
    total
}

#[test]
fn perturbations_in_constraint_null_space_never_lower_effort() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let pieces = 3;
    let params = random_params(&mut rng, 1, pieces);
    let init = random_state(&mut rng, 1);
    let target = random_state(&mut rng, 1);
    let traj = solve_coeffs(&init, &target, &params).unwrap();
    let base_effort = jerk_energy_quadrature(traj.coefficients(), traj.durations());

    // admissible set: boundary derivatives 0..2, waypoint positions, C² across knots
    let n = 6 * pieces;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let basis_row = |piece: usize, t: f64, d: usize| {
        let mut r = vec![0.0; n];
        for k in d..6 {
            r[6 * piece + k] = falling(k, d) * powi(t, k - d);
        }
        r
    };
    for d in 0..3 {
        rows.push(basis_row(0, 0.0, d));
        rows.push(basis_row(pieces - 1, params.durations[pieces - 1], d));
    }
    for knot in 1..pieces {
        let t = params.durations[knot - 1];
        rows.push(basis_row(knot - 1, t, 0));
        rows.push(basis_row(knot, 0.0, 0));
        for d in 1..3 {
            let left = basis_row(knot - 1, t, d);
            let right = basis_row(knot, 0.0, d);
            rows.push(left.iter().zip(&right).map(|(a, b)| a - b).collect());
        }
    }
    let a = DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]);
    // zero-padded to square so the SVD yields a full right basis
    let padded = DMatrix::from_fn(n, n, |i, j| if i < rows.len() { rows[i][j] } else { 0.0 });
    let svd = padded.svd(false, true);
    let vt = svd.v_t.unwrap();
    let rank = svd.singular_values.iter().filter(|&&s| s > 1e-10).count();
    let null: Vec<DVector<f64>> = (rank..n).map(|i| vt.row(i).transpose()).collect();
    assert_eq!(null.len(), n - rows.len());

    for _ in 0..100 {
        let mut delta = DVector::zeros(n);
        for v in &null {
            delta += v * rng.random_range(-1.0..1.0);
        }
        delta *= 1e-3 / delta.norm();
        assert!((&a * &delta).amax() < 1e-12);
        let perturbed: Vec<DMatrix<f64>> = (0..pieces)
            .map(|p| DMatrix::from_fn(6, 1, |k, _| traj.coefficients()[p][(k, 0)] + delta[6 * p + k]))
            .collect();
        let effort = jerk_energy_quadrature(&perturbed, traj.durations());
        assert!(effort >= base_effort - 1e-9, "{effort} < {base_effort}");
    }
}

/// Smooth test objective of (C, t̄) with an analytic gradient.
struct ToyCost {
    linear: Vec<DMatrix<f64>>,
}

impl ToyCost {
    fn eval(&self, traj: &Trajectory) -> (f64, CoeffGradient) {
        let mut grad = CoeffGradient::zeros_like(traj);
        let mut cost = 0.0;
        for (i, c) in traj.coefficients().iter().enumerate() {
            let t = traj.durations()[i];
            for (idx, &v) in c.iter().enumerate() {
                cost += self.linear[i].as_slice()[idx] * v + 0.5 * v * v * t;
                grad.coeffs[i].as_mut_slice()[idx] = self.linear[i].as_slice()[idx] + v * t;
                grad.durations[i] += 0.5 * v * v;
            }
            cost += t.sin();
            grad.durations[i] += t.cos();
        }
        (cost, grad)
    }
}

fn fd_check(rng: &mut ChaCha8Rng, dim: usize, pieces: usize) -> f64 {
    let init = random_state(rng, dim);
    let target = random_state(rng, dim);
    let params = random_params(rng, dim, pieces);
    let cost = ToyCost {
        linear: (0..pieces)
            .map(|_| DMatrix::from_fn(6, dim, |_, _| rng.random_range(-1.0..1.0)))
            .collect(),
    };
    let traj = solve_coeffs(&init, &target, &params).unwrap();
    let (_, g) = cost.eval(&traj);
    let analytic = propagate_gradients(&traj, &g, &params).unwrap();

    let h_of = |p: &TrajParams| cost.eval(&solve_coeffs(&init, &target, p).unwrap()).0;
    let mut analytic_flat: Vec<f64> = analytic.waypoints.iter().copied().collect();
    analytic_flat.extend(&analytic.durations);
    let mut numeric = Vec::new();
    for idx in 0..params.waypoints.len() {
        let x = params.waypoints.as_slice()[idx];
        let h = 1e-5 * x.abs().max(1.0);
        let mut plus = params.clone();
        plus.waypoints.as_mut_slice()[idx] += h;
        let mut minus = params.clone();
        minus.waypoints.as_mut_slice()[idx] -= h;
        numeric.push((h_of(&plus) - h_of(&minus)) / (2.0 * h));
    }
    for i in 0..pieces {
        let x = params.durations[i];
        let h = 1e-5 * x.abs().max(1.0);
        let mut plus = params.clone();
        plus.durations[i] += h;
        let mut minus = params.clone();
        minus.durations[i] -= h;
        numeric.push((h_of(&plus) - h_of(&minus)) / (2.0 * h));
    }
    let scale = numeric.iter().fold(1e-8f64, |m, v| m.max(v.abs()));
    analytic_flat
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / scale)
        .fold(0.0, f64::max)
}

#[test]
fn propagated_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for trial in 0..100 {
        let err = fd_check(&mut rng, 1 + trial % 3, 1 + trial % 5);
        assert!(err < 1e-4, "trial {trial}: relative error {err}");
    }
}

#[test]
fn zero_coefficient_gradient_passes_time_gradient_through() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let params = random_params(&mut rng, 2, 3);
    let traj = solve_coeffs(&random_state(&mut rng, 2), &random_state(&mut rng, 2), &params).unwrap();
    let mut g = CoeffGradient::zeros_like(&traj);
    g.durations = vec![0.3, -1.0, 2.5];
    let out = propagate_gradients(&traj, &g, &params).unwrap();
    assert_eq!(out.waypoints.amax(), 0.0);
    assert_eq!(out.durations, vec![0.3, -1.0, 2.5]);
}

#[test]
fn squared_knot_position_gradient() {
    let q1 = 0.8;
    let params = TrajParams::new(dmatrix![q1], vec![1.2, 0.7]).unwrap();
    let init = BoundaryState::new(dvector![0.1], dvector![0.5], dvector![0.0]);
    let target = rest(&[2.0]);
    let traj = solve_coeffs(&init, &target, &params).unwrap();
    let t1 = params.durations[0];
    let p = traj.eval_piece(0, t1, 0)[0];
    let v = traj.eval_piece(0, t1, 1)[0];
    let mut g = CoeffGradient::zeros_like(&traj);
    for k in 0..6 {
        g.coeffs[0][(k, 0)] = 2.0 * p * powi(t1, k);
    }
    g.durations[0] = 2.0 * p * v;
    let out = propagate_gradients(&traj, &g, &params).unwrap();
    assert!((out.waypoints[(0, 0)] - 2.0 * q1).abs() < 1e-10);
    assert!(out.durations.iter().all(|d| d.abs() < 1e-10));
}

#[test]
fn propagate_rejects_mismatched_shapes() {
    let params = TrajParams::new(DMatrix::zeros(2, 1), vec![1.0, 1.0]).unwrap();
    let traj = solve_coeffs(&rest(&[0.0, 0.0]), &rest(&[1.0, 1.0]), &params).unwrap();
    let g = CoeffGradient::zeros(3, 6, 2);
    assert!(matches!(
        propagate_gradients(&traj, &g, &params),
        Err(MincoError::ShapeMismatch(_))
    ));
}

#[test]
fn hand_built_trajectory_propagates_without_cached_system() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let params = random_params(&mut rng, 2, 3);
    let traj = solve_coeffs(&random_state(&mut rng, 2), &random_state(&mut rng, 2), &params).unwrap();
    let copy = Trajectory::from_coefficients(3, traj.coefficients().to_vec(), traj.durations().to_vec()).unwrap();
    let mut g = CoeffGradient::zeros_like(&traj);
    g.coeffs[1][(2, 1)] = 1.0;
    assert_eq!(
        propagate_gradients(&traj, &g, &params).unwrap(),
        propagate_gradients(&copy, &g, &params).unwrap()
    );
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn piece_lookup_is_consistent(durations in prop::collection::vec(0.1f64..3.0, 1..6), frac in 0.0f64..=1.0) {
            let q = DMatrix::zeros(1, durations.len() - 1);
            let params = TrajParams::new(q, durations).unwrap();
            let traj = solve_coeffs(&rest(&[0.0]), &rest(&[1.0]), &params).unwrap();
            let t = frac * traj.total_duration();
            let (piece, local) = traj.locate(t).unwrap();
            prop_assert!(local >= 0.0 && local <= traj.durations()[piece] + 1e-12);
            prop_assert!((traj.knot_times()[piece] + local - t).abs() < 1e-9);
        }
    }
}
