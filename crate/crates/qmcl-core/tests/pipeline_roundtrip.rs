//! End-to-end pipeline runs at toy scale: generate → train → predict →
//! report, persistence round trips, and determinism.

use qmcl_core::pipeline::{
    self, config::RunConfig, predict::PredictionRequest, ModelBundle, PredictionReport,
    TrainingSet,
};

fn toy_config() -> RunConfig {
    let mut c = RunConfig::desk();
    c.fine_cells = 96;
    c.coarsen_ratio = 4;
    c.spinup_steps = 200;
    c.sample_steps = 440;
    c.train_deltas = vec![0.0, 1.0];
    c.test_deltas = vec![0.5];
    c.delays = 8;
    c.stencil_width = 5;
    c.basis_size = 64;
    c.cholesky_rank = 128;
    c.conditioning_period = 5;
    c.prediction_horizon = 10;
    c.validate().unwrap();
    c
}

#[test]
fn toy_run_end_to_end() {
    let config = toy_config();
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path();

    let set = pipeline::run_generate(&config, run).unwrap();
    assert_eq!(set.trajectories.len(), 2);
    // 440 steps / stride 4 = 110 samples; Q=8 → 103 embedded times.
    assert_eq!(set.trajectories[0].resolved.len(), 110);

    let (bundle, diagnostics) = pipeline::run_train(run).unwrap();
    assert_eq!(bundle.basis.num_columns(), 64);
    assert_eq!(bundle.basis.num_samples(), 2 * 103 * 24);
    assert_eq!(diagnostics.kept_columns, vec![32, 32]);
    assert!(bundle.basis_epsilon > 0.0);
    // Leading eigenvalue of each trajectory block is 1 (bistochastic).
    assert!((bundle.basis.eigenvalues[0] - 1.0).abs() < 1e-9);
    assert!((bundle.basis.eigenvalues[32] - 1.0).abs() < 1e-9);

    let report = pipeline::run_predict(run, 0.5, None, None).unwrap();
    assert_eq!(report.horizon(), 10);
    assert_eq!(report.num_cells(), 24);
    assert!(report.truth.is_some());
    // Truth columns come straight from the coarsened fine trajectory.
    let truth = report.truth.as_ref().unwrap();
    assert!(truth.h.iter().all(|&x| x.is_finite() && x > 0.0));
    // Fluxes finite everywhere.
    assert!(report.surrogate_flux.h.iter().all(|x| x.is_finite()));

    let files = pipeline::run_report(run, 0.5).unwrap();
    assert!(files.iter().any(|f| f == "predicted_h.csv"));
    assert!(files.iter().any(|f| f == "rmse.csv"));
    assert!(files.iter().any(|f| f == "summary.csv"));
    let grid = std::fs::read_to_string(pipeline::report_dir(run, 0.5).join("predicted_h.csv"))
        .unwrap();
    assert_eq!(grid.lines().count(), 11);
    assert_eq!(grid.lines().next().unwrap().split(',').count(), 24);
}

#[test]
fn model_bundle_round_trip() {
    let config = toy_config();
    let set = pipeline::generate_training_data(&config).unwrap();
    let (bundle, diagnostics) = pipeline::train(&config, &set).unwrap();
    let dir = tempfile::tempdir().unwrap();
    bundle.save(dir.path(), &diagnostics).unwrap();
    let back = ModelBundle::load(dir.path()).unwrap();
    assert_eq!(bundle.basis.phi, back.basis.phi);
    assert_eq!(bundle.basis.eigenvalues, back.basis.eigenvalues);
    assert_eq!(bundle.basis.weights, back.basis.weights);
    assert_eq!(bundle.basis.blocks, back.basis.blocks);
    assert_eq!(bundle.transfer.matrix, back.transfer.matrix);
    assert_eq!(bundle.obs_h.matrix, back.obs_h.matrix);
    assert_eq!(bundle.conditioning.stencils, back.conditioning.stencils);
    assert_eq!(
        bundle.conditioning.bandwidth.variable_scale,
        back.conditioning.bandwidth.variable_scale
    );
}

#[test]
fn prediction_horizon_zero_contains_only_initial_state() {
    let config = toy_config();
    let set = pipeline::generate_training_data(&config).unwrap();
    let (bundle, _) = pipeline::train(&config, &set).unwrap();
    let initial = set.trajectories[0].resolved[config.delays - 1].clone();
    let request = PredictionRequest {
        initial_resolved: initial.clone(),
        initial_fine: None,
        horizon: 0,
        conditioning_period: 1,
        delta: None,
    };
    let report = pipeline::predict(&bundle, &request).unwrap();
    assert_eq!(report.horizon(), 0);
    assert!(report.truth.is_none());
    for m in 0..24 {
        assert_eq!(report.predicted.h[(0, m)], initial.h[m]);
        assert_eq!(report.predicted.q[(0, m)], initial.q[m]);
    }
}

#[test]
fn report_save_load_round_trip() {
    let config = toy_config();
    let dir = tempfile::tempdir().unwrap();
    pipeline::run_generate(&config, dir.path()).unwrap();
    pipeline::run_train(dir.path()).unwrap();
    let report = pipeline::run_predict(dir.path(), 0.5, Some(4), Some(2)).unwrap();
    let back = PredictionReport::load(&pipeline::report_dir(dir.path(), 0.5)).unwrap();
    assert_eq!(report.predicted, back.predicted);
    assert_eq!(report.zero_closure, back.zero_closure);
    assert_eq!(report.truth, back.truth);
    assert_eq!(report.surrogate_flux, back.surrogate_flux);
    assert_eq!(report.rmse_predicted_h, back.rmse_predicted_h);
}

#[test]
fn observables_f32_storage_toggle() {
    let mut config = toy_config();
    config.observables_f32 = true;
    let set = pipeline::generate_training_data(&config).unwrap();
    let (bundle, diagnostics) = pipeline::train(&config, &set).unwrap();
    let dir = tempfile::tempdir().unwrap();
    bundle.save(dir.path(), &diagnostics).unwrap();
    assert!(dir.path().join("obs_h.f32").exists());
    let back = ModelBundle::load(dir.path()).unwrap();
    // Basis stays f64; only the two observables round-trip through f32.
    assert_eq!(bundle.basis.phi, back.basis.phi);
    let scale = bundle
        .obs_h
        .matrix
        .iter()
        .fold(0.0f64, |a, &x| a.max(x.abs()));
    for (a, b) in bundle.obs_h.matrix.iter().zip(back.obs_h.matrix.iter()) {
        assert!((a - b).abs() <= 1e-6 * scale, "{a} vs {b}");
    }
}

#[test]
fn training_set_echoes_config() {
    let config = toy_config();
    let dir = tempfile::tempdir().unwrap();
    pipeline::run_generate(&config, dir.path()).unwrap();
    let loaded = TrainingSet::load(&pipeline::data_dir(dir.path())).unwrap();
    assert_eq!(loaded.config, config);
    let echoed = pipeline::load_config(dir.path()).unwrap();
    assert_eq!(echoed, config);
}
