//! Shared fixtures for the pipeline benchmarks.

use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use tubegate_core::widthlp::StackedRegressor;
use tubegate_core::{ParameterBox, RegressorRecord, RunConfig};

/// A reproducible stack of `n` velocity regressors for the vector-drag model,
/// at cruise-like speeds, suitable for LP benchmarks.
pub fn cruise_stack(n: usize) -> StackedRegressor {
    let cfg = RunConfig::case_study_2();
    let model = cfg.system_model();
    let mut rng = StdRng::seed_from_u64(17);
    let regressors: Vec<DMatrix<f64>> = (0..n)
        .map(|_| {
            let v = nalgebra::Vector3::new(
                rng.gen_range(0.8..1.6),
                rng.gen_range(-0.4..0.4),
                rng.gen_range(-0.1..0.1),
            );
            model.regressor_matrix(&v)
        })
        .collect();
    let times = (0..n).map(|k| 0.5 * (k + 1) as f64).collect();
    StackedRegressor::stack(&regressors, model.meas_bound, times).expect("stack builds")
}

/// A batch of consistent measurement records around a fixed true parameter.
pub fn record_batch(n: usize) -> (ParameterBox, Vec<RegressorRecord>) {
    let cfg = RunConfig::case_study_2();
    let model = cfg.system_model();
    let theta_box = cfg.theta_box().expect("valid box");
    let star = cfg.true_params_vector();
    let mut rng = StdRng::seed_from_u64(29);
    let records = (0..n)
        .map(|_| {
            let v = nalgebra::Vector3::new(
                rng.gen_range(0.5..1.8),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.2..0.2),
            );
            let phi = model.regressor_matrix(&v);
            let noise = DVector::from_fn(phi.nrows(), |_, _| {
                rng.gen_range(-model.meas_bound..=model.meas_bound)
            });
            let z = &phi * &star + noise;
            RegressorRecord::new(phi, z, model.meas_bound)
        })
        .collect();
    (theta_box, records)
}
