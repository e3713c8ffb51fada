//! Fixtures shared by the throughput benchmarks.

use std::f64::consts::FRAC_1_SQRT_2;

use conecraft::{DiffusionModel, Dispersion, Drift, PolyhedralCone};

/// Two-dimensional orthant with one skewed reflection direction.
pub fn skew_orthant() -> PolyhedralCone {
    PolyhedralCone::new(
        vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        vec![vec![1.0, 0.0], vec![FRAC_1_SQRT_2, FRAC_1_SQRT_2]],
    )
    .expect("valid cone")
}

/// Constant stable drift, identity dispersion.
pub fn reference_model(epsilon: f64) -> DiffusionModel {
    DiffusionModel::with_default_bounds(
        2,
        Drift::Constant(vec![-FRAC_1_SQRT_2, -FRAC_1_SQRT_2]),
        Dispersion::Identity,
        epsilon,
    )
    .expect("valid model")
}

/// Saturating drift with a modulated dispersion matrix.
pub fn variable_model(epsilon: f64) -> DiffusionModel {
    DiffusionModel::with_default_bounds(
        2,
        Drift::Saturating {
            base: vec![-FRAC_1_SQRT_2, -FRAC_1_SQRT_2],
            gain: 0.5,
        },
        Dispersion::Modulated {
            matrix: vec![1.0, 0.0, 0.3, 1.0],
            amplitude: 0.25,
        },
        epsilon,
    )
    .expect("valid model")
}

/// Points straddling the cone boundary, for projection benchmarks.
pub fn projection_points(n: usize) -> Vec<[f64; 2]> {
    (0..n)
        .map(|i| {
            let a = i as f64 * 0.618_033_988_749_895 * std::f64::consts::TAU;
            [a.cos(), a.sin()]
        })
        .collect()
}
