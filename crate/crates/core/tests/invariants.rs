use std::f64::consts::FRAC_1_SQRT_2;

use conecraft::rng::{seed_stream, StreamKey};
use conecraft::simulate::{fmt_f64, simulate_path, simulate_terminal, step_count, step_length};
use conecraft::skorokhod::{reflect_half_line, reflection_matrix, solve_sp, Projector};
use conecraft::stats::wilson_lower;
use conecraft::{DiffusionModel, Dispersion, Domain, Drift, PiecewisePath, PolyhedralCone};
use proptest::prelude::*;
use rand::RngCore;

fn skew_orthant() -> PolyhedralCone {
    PolyhedralCone::new(
        vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        vec![vec![1.0, 0.0], vec![FRAC_1_SQRT_2, FRAC_1_SQRT_2]],
    )
    .unwrap()
}

/// Piecewise-linear path on `[0, 1]` from `increments`, started at `start`.
fn path_from(start: Vec<f64>, increments: &[Vec<f64>]) -> PiecewisePath {
    let n = increments.len();
    let times: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
    let mut values = vec![start];
    for inc in increments {
        let last = values.last().unwrap();
        values.push(last.iter().zip(inc).map(|(a, b)| a + b).collect());
    }
    PiecewisePath::new(times, values).unwrap()
}

fn increments(dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-1.0..1.0f64, dim), 1..30)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn half_line_reflection_matches_running_minimum(start in 0.0..1.0f64, inc in increments(1)) {
        let psi = path_from(vec![start], &inc);
        let solved = solve_sp(&PolyhedralCone::orthant(1), &psi, 1e-2).unwrap();
        let mut low = 0.0f64;
        for j in 0..solved.len() {
            let v = solved.psi_at(j)[0];
            low = low.max(-v);
            prop_assert!((solved.phi_at(j)[0] - (v + low)).abs() < 1e-12);
            prop_assert!(solved.phi_at(j)[0] >= 0.0);
        }
    }

    #[test]
    fn explicit_formula_pushes_only_at_zero(values in prop::collection::vec(-2.0..2.0f64, 1..50)) {
        let (phi, eta) = reflect_half_line(&values);
        for i in 0..values.len() {
            prop_assert!(phi[i] >= 0.0);
            prop_assert!((phi[i] - values[i] - eta[i]).abs() < 1e-12);
            if i > 0 {
                prop_assert!(eta[i] >= eta[i - 1]);
                if eta[i] > eta[i - 1] {
                    prop_assert!(phi[i].abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn skew_solution_stays_in_cone(start in prop::collection::vec(0.0..1.0f64, 2), inc in increments(2)) {
        let cone = skew_orthant();
        let psi = path_from(start, &inc);
        let solved = solve_sp(&cone, &psi, 1e-2).unwrap();
        prop_assert!(solved.containment_violation(&cone) <= 1e-12);
        prop_assert!(solved.complementarity_ratio(&cone) <= 1e-10);
        prop_assert!(solved.decomposition_residual() <= 1e-10);
    }

    #[test]
    fn solution_is_positively_homogeneous(
        start in prop::collection::vec(0.0..1.0f64, 2),
        inc in increments(2),
        c in 0.01..10.0f64,
    ) {
        let cone = skew_orthant();
        let psi = path_from(start, &inc);
        let base = solve_sp(&cone, &psi, 1e-2).unwrap();
        let scaled = solve_sp(&cone, &psi.scaled(c), 1e-2).unwrap();
        prop_assert_eq!(base.len(), scaled.len());
        for j in 0..base.len() {
            for (a, b) in scaled.phi_at(j).iter().zip(base.phi_at(j)) {
                prop_assert!((a - c * b).abs() <= 1e-9 * (1.0 + (c * b).abs()));
            }
        }
    }

    #[test]
    fn projection_lands_in_cone_and_is_idempotent(p in prop::collection::vec(-3.0..3.0f64, 2)) {
        let cone = skew_orthant();
        let matrix = reflection_matrix(&cone);
        let mut projector = Projector::new(&cone, &matrix);
        let mut z = p.clone();
        let mut alpha = [0.0; 2];
        projector.project(&mut z, &mut alpha).unwrap();
        prop_assert!(cone.min_inner(&z) >= -1e-12);
        prop_assert!(alpha.iter().all(|&a| a >= 0.0));
        // A second projection moves the point by rounding error at most.
        let once = z.clone();
        projector.project(&mut z, &mut alpha).unwrap();
        for (a, b) in once.iter().zip(&z) {
            prop_assert!((a - b).abs() <= 1e-14 * (1.0 + a.abs()), "{once:?} -> {z:?}");
        }
        prop_assert!(alpha.iter().all(|&a| a <= 1e-14));
    }

    #[test]
    fn interior_points_are_left_alone(p in prop::collection::vec(1e-6..3.0f64, 2)) {
        let cone = skew_orthant();
        let matrix = reflection_matrix(&cone);
        let mut z = p.clone();
        let mut alpha = [0.0; 2];
        let pushed = Projector::new(&cone, &matrix).project(&mut z, &mut alpha).unwrap();
        prop_assert!(!pushed);
        prop_assert_eq!(z, p);
        prop_assert_eq!(alpha, [0.0; 2]);
    }

    #[test]
    fn step_grid_covers_horizon(horizon in 1e-3..50.0f64, dt in 1e-4..1.0f64) {
        let n = step_count(horizon, dt);
        let total: f64 = (0..n).map(|j| step_length(j, n, horizon, dt)).sum();
        prop_assert!((total - horizon).abs() <= 1e-9 * horizon.max(1.0));
        let last = step_length(n - 1, n, horizon, dt);
        prop_assert!(last > 0.0 && last <= dt * (1.0 + 1e-6));
    }

    #[test]
    fn wilson_bound_is_below_the_estimate(trials in 1u64..100_000, frac in 0.0..=1.0f64) {
        let successes = (frac * trials as f64).floor() as u64;
        let lower = wilson_lower(successes, trials, 2.326);
        prop_assert!((0.0..=1.0).contains(&lower));
        prop_assert!(lower <= successes as f64 / trials as f64 + 1e-15);
        if successes < trials {
            prop_assert!(wilson_lower(successes + 1, trials, 2.326) >= lower);
        }
    }

    #[test]
    fn float_format_round_trips(v in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
        prop_assert_eq!(fmt_f64(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
    }

    #[test]
    fn ball_crossing_lies_on_sphere(
        inside in prop::collection::vec(-0.5..0.5f64, 2),
        outside in prop::collection::vec(1.5..3.0f64, 2),
    ) {
        let ball = Domain::ball(1.0).unwrap();
        let (lambda, point) = ball.crossing(&inside, &outside);
        prop_assert!(lambda > 0.0 && lambda <= 1.0);
        let r = point.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn streams_are_reproducible_and_distinct(master in any::<u64>(), a in 0u64..1000, b in 0u64..1000) {
        let key = StreamKey::new(master);
        let x = key.child(a).rng().next_u64();
        prop_assert_eq!(x, key.child(a).rng().next_u64());
        if a != b {
            prop_assert_ne!(key.child(a).id, key.child(b).id);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn simulated_paths_stay_in_cone(seed in any::<u64>(), eps in 0.05..1.0f64) {
        let cone = skew_orthant();
        let model = DiffusionModel::with_default_bounds(
            2,
            Drift::Saturating { base: vec![-FRAC_1_SQRT_2, -FRAC_1_SQRT_2], gain: 0.5 },
            Dispersion::Modulated { matrix: vec![1.0, 0.0, 0.3, 1.0], amplitude: 0.25 },
            eps,
        )
        .unwrap();
        let path = simulate_path(&cone, &model, &[0.2, 0.1], 1.0, 1e-2, &mut seed_stream(seed, 0)).unwrap();
        prop_assert!(path.containment_violation(&cone) <= 1e-12);
        prop_assert!(path.decomposition_residual(&cone, &model) <= 1e-9);
        let matrix = reflection_matrix(&cone);
        let terminal =
            simulate_terminal(&cone, &matrix, &model, &[0.2, 0.1], 1.0, 1e-2, &mut seed_stream(seed, 0)).unwrap();
        prop_assert_eq!(terminal, path.terminal().to_vec());
    }
}
