//! Training-data generation: fine-grid integration, spatial averaging,
//! and exact subgrid-flux sampling.

use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coarsening::{coarsen_state, exact_subgrid_flux, ic_family, CoarsePair};
use crate::error::{Error, Result, StageExt};
use crate::pipeline::config::RunConfig;
use crate::pipeline::persist::{
    read_f64_array, read_manifest, write_f64_array, write_manifest, ArrayEntry,
};
use crate::swe_fv::{fine_rhs, step_modified_euler, Grid1D, SweState};

/// Resolved-state and subgrid-flux samples of one training trajectory.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub delta: f64,
    /// Coarse states at the sampling instants (every M_s-th fine step).
    pub resolved: Vec<SweState<f64>>,
    /// Exact subgrid fluxes at the same instants; rows are samples,
    /// columns coarse cells.
    pub flux_h: Array2<f64>,
    pub flux_q: Array2<f64>,
    /// Samples whose flux magnitude exceeds 8×RMS of the component.
    pub flux_outlier_count: usize,
}

/// Every training trajectory plus the configuration that produced it.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub config: RunConfig,
    pub trajectories: Vec<Trajectory>,
}

/// Convention marker recorded in manifests: subgrid fluxes are sampled at
/// the coarse step start, the same instant as the resolved state.
pub const SUBGRID_SAMPLE_CONVENTION: &str = "coarse-step-start";

/// Integrate the fine dynamics for each training δ and sample resolved
/// states and exact subgrid fluxes every `stride` fine steps.
pub fn generate_training_data(config: &RunConfig) -> Result<TrainingSet> {
    config.validate().stage("generate")?;
    let trajectories: Result<Vec<Trajectory>> = config
        .train_deltas
        .par_iter()
        .map(|&delta| generate_trajectory(config, delta))
        .collect();
    Ok(TrainingSet {
        config: config.clone(),
        trajectories: trajectories.stage("generate")?,
    })
}

/// Spin up the fine dynamics from the family initial condition and return
/// the fine state at the end of the spin-up window.
pub fn spinup_fine_state(config: &RunConfig, delta: f64) -> Result<SweState<f64>> {
    let grid = Grid1D::new(config.fine_cells, config.domain_min, config.domain_max)?;
    let params = config.swe_params()?;
    let mut state = ic_family(delta, &grid)?;
    for step in 0..config.spinup_steps {
        state = step_modified_euler(&state, params.dt, |u| fine_rhs(u, &grid, &params)).map_err(
            |e| Error::SolverBlowup {
                step: step + 1,
                reason: format!("delta={delta}: {e}"),
            },
        )?;
    }
    Ok(state)
}

fn generate_trajectory(config: &RunConfig, delta: f64) -> Result<Trajectory> {
    let grid = Grid1D::new(config.fine_cells, config.domain_min, config.domain_max)?;
    let pair = CoarsePair::new(grid.clone(), config.coarsen_ratio)?;
    let params = config.swe_params()?;
    let stride = config.stride();

    let mut fine = spinup_fine_state(config, delta)?;
    let coarse_cells = config.coarse_cells();
    let samples = config.samples_per_trajectory();
    let mut resolved = Vec::with_capacity(samples);
    let mut flux_h = Array2::zeros((samples, coarse_cells));
    let mut flux_q = Array2::zeros((samples, coarse_cells));

    let mut recorded = 0;
    for step in 0..config.sample_steps {
        if step % stride == 0 {
            let coarse = coarsen_state(&fine, &pair)?;
            let subgrid = exact_subgrid_flux(&fine, &pair, &params)?;
            for m in 0..coarse_cells {
                flux_h[(recorded, m)] = subgrid.g_h[m];
                flux_q[(recorded, m)] = subgrid.g_q[m];
            }
            resolved.push(coarse);
            recorded += 1;
        }
        fine = step_modified_euler(&fine, params.dt, |u| fine_rhs(u, &grid, &params)).map_err(
            |e| Error::SolverBlowup {
                step: config.spinup_steps + step + 1,
                reason: format!("delta={delta}: {e}"),
            },
        )?;
    }
    debug_assert_eq!(recorded, samples);

    let flux_outlier_count = count_outliers(&flux_h) + count_outliers(&flux_q);
    if flux_outlier_count > 0 {
        log::warn!(
            "delta={delta}: {flux_outlier_count} subgrid-flux sample(s) exceed 8x RMS; \
             possible shock formation in the sampling window"
        );
    }
    Ok(Trajectory {
        delta,
        resolved,
        flux_h,
        flux_q,
        flux_outlier_count,
    })
}

fn count_outliers(flux: &Array2<f64>) -> usize {
    let n = flux.len();
    if n == 0 {
        return 0;
    }
    let rms = (flux.iter().map(|&x| x * x).sum::<f64>() / n as f64).sqrt();
    if rms == 0.0 {
        return 0;
    }
    flux.iter().filter(|&&x| x.abs() > 8.0 * rms).count()
}

#[derive(Debug, Serialize, Deserialize)]
struct TrajectoryManifest {
    delta: f64,
    samples: usize,
    flux_outlier_count: usize,
    resolved: ArrayEntry,
    flux_h: ArrayEntry,
    flux_q: ArrayEntry,
}

#[derive(Debug, Serialize, Deserialize)]
struct DataManifest {
    subgrid_sample_convention: String,
    config: RunConfig,
    trajectories: Vec<TrajectoryManifest>,
}

impl TrainingSet {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let cells = self.config.coarse_cells();
        let mut manifests = Vec::with_capacity(self.trajectories.len());
        for (i, traj) in self.trajectories.iter().enumerate() {
            let samples = traj.resolved.len();
            let mut flat = Vec::with_capacity(samples * 2 * cells);
            for state in &traj.resolved {
                flat.extend_from_slice(&state.to_flat());
            }
            let resolved = write_f64_array(
                &dir.join(format!("traj{i}_resolved.f64")),
                &[samples, 2 * cells],
                &flat,
            )?;
            let flux_h = write_f64_array(
                &dir.join(format!("traj{i}_flux_h.f64")),
                &[samples, cells],
                traj.flux_h.as_slice().expect("contiguous"),
            )?;
            let flux_q = write_f64_array(
                &dir.join(format!("traj{i}_flux_q.f64")),
                &[samples, cells],
                traj.flux_q.as_slice().expect("contiguous"),
            )?;
            manifests.push(TrajectoryManifest {
                delta: traj.delta,
                samples,
                flux_outlier_count: traj.flux_outlier_count,
                resolved,
                flux_h,
                flux_q,
            });
        }
        write_manifest(
            &dir.join("manifest.toml"),
            &DataManifest {
                subgrid_sample_convention: SUBGRID_SAMPLE_CONVENTION.into(),
                config: self.config.clone(),
                trajectories: manifests,
            },
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: DataManifest = read_manifest(&dir.join("manifest.toml"))?;
        manifest.config.validate()?;
        let cells = manifest.config.coarse_cells();
        let mut trajectories = Vec::with_capacity(manifest.trajectories.len());
        for tm in &manifest.trajectories {
            let flat = read_f64_array(dir, &tm.resolved)?;
            let mut resolved = Vec::with_capacity(tm.samples);
            for row in flat.chunks_exact(2 * cells) {
                resolved.push(SweState::from_flat(row)?);
            }
            let flux_h =
                Array2::from_shape_vec((tm.samples, cells), read_f64_array(dir, &tm.flux_h)?)
                    .map_err(|e| Error::Manifest(e.to_string()))?;
            let flux_q =
                Array2::from_shape_vec((tm.samples, cells), read_f64_array(dir, &tm.flux_q)?)
                    .map_err(|e| Error::Manifest(e.to_string()))?;
            trajectories.push(Trajectory {
                delta: tm.delta,
                resolved,
                flux_h,
                flux_q,
                flux_outlier_count: tm.flux_outlier_count,
            });
        }
        Ok(TrainingSet {
            config: manifest.config,
            trajectories,
        })
    }
}
