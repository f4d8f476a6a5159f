//! Configuration, orchestration of the offline/online stages,
//! persistence, metrics, and the run-directory layout used by the CLI.
//!
//! A run directory holds `config.toml` plus three subtrees:
//! `data/` (training samples), `model/` (trained bundle), and
//! `report/delta_<δ>/` (per-prediction raw arrays and text exports).
//! The prediction horizon and conditioning period count coarse steps.

pub mod config;
pub mod data;
pub mod persist;
pub mod predict;
pub mod report;
pub mod train;

use std::path::{Path, PathBuf};

use crate::coarsening::{coarsen_state, CoarsePair};
use crate::error::{Error, Result, StageExt};
use crate::swe_fv::Grid1D;

pub use config::RunConfig;
pub use data::{generate_training_data, spinup_fine_state, TrainingSet};
pub use predict::{predict, PredictionReport, PredictionRequest};
pub use report::export_report;
pub use train::{train, ModelBundle, TrainDiagnostics};

pub fn config_path(run_dir: &Path) -> PathBuf {
    run_dir.join("config.toml")
}

pub fn data_dir(run_dir: &Path) -> PathBuf {
    run_dir.join("data")
}

pub fn model_dir(run_dir: &Path) -> PathBuf {
    run_dir.join("model")
}

pub fn report_dir(run_dir: &Path, delta: f64) -> PathBuf {
    run_dir.join("report").join(format!("delta_{delta}"))
}

/// `generate`: resolve the configuration, echo it into the run directory,
/// integrate the training trajectories, and persist the samples.
pub fn run_generate(config: &RunConfig, run_dir: &Path) -> Result<TrainingSet> {
    config.validate().stage("generate")?;
    std::fs::create_dir_all(run_dir)?;
    std::fs::write(config_path(run_dir), config.to_toml()?)?;
    let set = generate_training_data(config)?;
    set.save(&data_dir(run_dir)).stage("generate")?;
    Ok(set)
}

pub fn load_config(run_dir: &Path) -> Result<RunConfig> {
    let path = config_path(run_dir);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    RunConfig::from_toml(&text)
}

/// `train`: offline stage from the persisted training data.
pub fn run_train(run_dir: &Path) -> Result<(ModelBundle, TrainDiagnostics)> {
    let config = load_config(run_dir).stage("train")?;
    let set = TrainingSet::load(&data_dir(run_dir)).stage("train")?;
    let (bundle, diagnostics) = train(&config, &set)?;
    bundle.save(&model_dir(run_dir), &diagnostics).stage("train")?;
    Ok((bundle, diagnostics))
}

/// `predict`: spin up the test initial condition with the same protocol
/// as training, run the online stage with truth and zero-closure
/// baselines, and persist the raw report.
pub fn run_predict(
    run_dir: &Path,
    delta: f64,
    horizon: Option<usize>,
    conditioning_period: Option<usize>,
) -> Result<PredictionReport> {
    let bundle = ModelBundle::load(&model_dir(run_dir)).stage("predict")?;
    let config = &bundle.config;
    let fine = spinup_fine_state(config, delta).stage("predict")?;
    let grid = Grid1D::new(config.fine_cells, config.domain_min, config.domain_max)?;
    let pair = CoarsePair::new(grid, config.coarsen_ratio)?;
    let initial_resolved = coarsen_state(&fine, &pair)?;
    let request = PredictionRequest {
        initial_resolved,
        initial_fine: Some(fine),
        horizon: horizon.unwrap_or(config.prediction_horizon),
        conditioning_period: conditioning_period.unwrap_or(config.conditioning_period),
        delta: Some(delta),
    };
    let report = predict(&bundle, &request)?;
    report.save(&report_dir(run_dir, delta)).stage("predict")?;
    Ok(report)
}

/// `report`: render the delimited-text tables from a saved prediction.
pub fn run_report(run_dir: &Path, delta: f64) -> Result<Vec<String>> {
    let dir = report_dir(run_dir, delta);
    let report = PredictionReport::load(&dir).stage("report")?;
    export_report(&report, &dir).stage("report")
}
