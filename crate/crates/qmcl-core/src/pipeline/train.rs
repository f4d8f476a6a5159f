//! Offline stage: bandwidth calibration, per-trajectory low-rank kernel
//! factorization and eigenbases, transfer operator, flux observables, and
//! the conditioning model. Produces a persisted model bundle.

use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, StageExt};
use crate::kernel::{
    bistochastic_normalize, delay_embed, gaussian_kernel, pairwise_sqdist_sample, stencil_vectors,
    tune_bandwidth, variable_scales, BandwidthSpec,
};
use crate::pipeline::config::RunConfig;
use crate::pipeline::data::TrainingSet;
use crate::pipeline::persist::{
    read_f32_array, read_f64_array, read_manifest, write_f32_array, write_f64_array,
    write_manifest, ArrayEntry,
};
use crate::quantum::{
    build_observables, build_transfer, Conditioning, FluxComponent, PilotStats,
    QuantumObservable, TransferMatrix,
};
use crate::spectral::{
    assemble_multi_trajectory, eigenbasis, pivoted_cholesky, PivotRule, SpectralBasis,
    TrajectoryBlock,
};

/// Trained closure model: everything the online stage needs.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub config: RunConfig,
    pub basis: SpectralBasis<f64>,
    pub transfer: TransferMatrix<f64>,
    pub obs_h: QuantumObservable<f64>,
    pub obs_q: QuantumObservable<f64>,
    pub conditioning: Conditioning<f64>,
    /// Tuned bandwidth of the basis kernel.
    pub basis_epsilon: f64,
}

/// Per-stage diagnostics recorded in the model manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainDiagnostics {
    pub basis_epsilon: f64,
    pub conditioning_epsilon: f64,
    pub pilot_epsilon: Option<f64>,
    pub sinkhorn_iterations: Vec<usize>,
    pub cholesky_trace_residuals: Vec<f64>,
    pub kept_columns: Vec<usize>,
}

/// Run the offline stage on a training set.
pub fn train(config: &RunConfig, training: &TrainingSet) -> Result<(ModelBundle, TrainDiagnostics)> {
    config.validate().stage("train")?;
    validate_training_set(config, training).stage("train")?;

    let delays = config.delays;
    let cells = config.coarse_cells();
    let trajectories = training.trajectories.len();
    let ranks = config.per_trajectory_ranks();
    let basis_sizes = config.per_trajectory_basis_sizes();

    // Delay-embed each trajectory.
    let embedded: Vec<Array2<f64>> = training
        .trajectories
        .iter()
        .map(|traj| delay_embed(&traj.resolved, delays))
        .collect::<Result<_>>()
        .stage("delay-embed")?;

    // Basis bandwidth from pooled within-trajectory distances.
    let per_traj_pairs = config.max_tuning_pairs / trajectories.max(1);
    let mut basis_dists = Vec::new();
    for (i, data) in embedded.iter().enumerate() {
        basis_dists.extend(pairwise_sqdist_sample(
            data,
            per_traj_pairs,
            config.seed.wrapping_add(i as u64),
        ));
    }
    let basis_epsilon =
        tune_bandwidth(&basis_dists, delays as f64).stage("tune-basis-bandwidth")?;
    log::info!("basis kernel bandwidth: {basis_epsilon:.6e}");

    // Per-trajectory: factor, normalize, eigensolve.
    let mut bases = Vec::with_capacity(trajectories);
    let mut sinkhorn_iterations = Vec::with_capacity(trajectories);
    let mut cholesky_trace_residuals = Vec::with_capacity(trajectories);
    let mut kept_columns = Vec::with_capacity(trajectories);
    for (i, data) in embedded.iter().enumerate() {
        let n = data.nrows();
        let rank = ranks[i].min(n);
        let rule = if config.randomized_pivoting {
            PivotRule::Randomized {
                seed: config.seed.wrapping_add(1000 + i as u64),
            }
        } else {
            PivotRule::Greedy
        };
        let factor = pivoted_cholesky(
            |row| {
                let a = data.row(row);
                (0..n)
                    .map(|j| gaussian_kernel(a, data.row(j), basis_epsilon, delays))
                    .collect()
            },
            &vec![1.0; n],
            rank,
            rule,
        )
        .stage("pivoted-cholesky")?;
        cholesky_trace_residuals.push(factor.trace_residual);
        let scaled = bistochastic_normalize(&factor.factor).stage("bistochastic")?;
        sinkhorn_iterations.push(scaled.iterations);
        let weights = vec![1.0 / n as f64; n];
        let embedded_times = n / cells;
        let basis = eigenbasis(
            &scaled.factor,
            basis_sizes[i].min(rank),
            &weights,
            embedded_times,
            cells,
        )
        .stage("eigenbasis")?;
        kept_columns.push(basis.num_columns());
        bases.push(basis);
    }

    let kept: Vec<usize> = bases.iter().map(|b| b.num_columns()).collect();
    let basis = assemble_multi_trajectory(&bases, &kept).stage("assemble-basis")?;
    let transfer = build_transfer(&basis).stage("transfer")?;

    // Flux observables, aligned to the embedded sample indexing: embedded
    // time n pairs with original sample n + Q − 1.
    let total_samples = basis.num_samples();
    let mut flux_h = Vec::with_capacity(total_samples);
    let mut flux_q = Vec::with_capacity(total_samples);
    for (traj, data) in training.trajectories.iter().zip(embedded.iter()) {
        let embedded_times = data.nrows() / cells;
        for n in 0..embedded_times {
            let original = n + delays - 1;
            for m in 0..cells {
                flux_h.push(traj.flux_h[(original, m)]);
                flux_q.push(traj.flux_q[(original, m)]);
            }
        }
    }
    let (obs_h, obs_q) = build_observables(&flux_h, &flux_q, &basis).stage("observables")?;

    // Conditioning stencils use the same alignment.
    let stencil_width = config.stencil_width;
    let mut stencils = Array2::zeros((total_samples, 2 * stencil_width));
    let mut offset = 0;
    for (traj, data) in training.trajectories.iter().zip(embedded.iter()) {
        let embedded_times = data.nrows() / cells;
        for n in 0..embedded_times {
            let per_state = stencil_vectors(&traj.resolved[n + delays - 1], stencil_width)?;
            for m in 0..cells {
                stencils.row_mut(offset + n * cells + m).assign(&per_state.row(m));
            }
        }
        offset += data.nrows();
    }

    let (bandwidth, pilot, pilot_epsilon, conditioning_epsilon) = if config.variable_bandwidth {
        let raw = pairwise_sqdist_sample(&stencils, config.max_tuning_pairs, config.seed + 7);
        let pilot_epsilon =
            tune_bandwidth(&raw, stencil_width as f64).stage("tune-pilot-bandwidth")?;
        let scales =
            variable_scales(&stencils, pilot_epsilon, stencil_width).stage("variable-scales")?;
        let log_geo_mean = log_geometric_mean_density(&stencils, pilot_epsilon, stencil_width);
        // Re-tune on scale-adjusted distances.
        let scaled = scaled_sqdist_sample(
            &stencils,
            &scales,
            config.max_tuning_pairs,
            config.seed + 8,
        );
        let eps = tune_bandwidth(&scaled, stencil_width as f64)
            .stage("tune-conditioning-bandwidth")?;
        (
            BandwidthSpec {
                epsilon: eps,
                variable_scale: Some(scales),
            },
            Some(PilotStats {
                epsilon: pilot_epsilon,
                log_geometric_mean_density: log_geo_mean,
            }),
            Some(pilot_epsilon),
            eps,
        )
    } else {
        let raw = pairwise_sqdist_sample(&stencils, config.max_tuning_pairs, config.seed + 7);
        let eps =
            tune_bandwidth(&raw, stencil_width as f64).stage("tune-conditioning-bandwidth")?;
        (BandwidthSpec::fixed(eps)?, None, None, eps)
    };
    log::info!("conditioning bandwidth: {conditioning_epsilon:.6e}");

    let bundle = ModelBundle {
        config: config.clone(),
        basis,
        transfer,
        obs_h,
        obs_q,
        conditioning: Conditioning {
            stencils,
            stencil_width,
            bandwidth,
            pilot,
        },
        basis_epsilon,
    };
    let diagnostics = TrainDiagnostics {
        basis_epsilon,
        conditioning_epsilon,
        pilot_epsilon,
        sinkhorn_iterations,
        cholesky_trace_residuals,
        kept_columns,
    };
    Ok((bundle, diagnostics))
}

fn validate_training_set(config: &RunConfig, training: &TrainingSet) -> Result<()> {
    if training.trajectories.len() != config.train_deltas.len() {
        return Err(Error::LengthMismatch {
            what: "training trajectories vs config",
            expected: config.train_deltas.len(),
            got: training.trajectories.len(),
        });
    }
    let cells = config.coarse_cells();
    for traj in &training.trajectories {
        if traj.resolved.len() < config.delays {
            return Err(Error::TrajectoryTooShort {
                len: traj.resolved.len(),
                delays: config.delays,
            });
        }
        if traj.resolved[0].num_cells() != cells {
            return Err(Error::LengthMismatch {
                what: "resolved sample cells",
                expected: cells,
                got: traj.resolved[0].num_cells(),
            });
        }
        if traj.flux_h.dim() != (traj.resolved.len(), cells) {
            return Err(Error::LengthMismatch {
                what: "flux samples vs resolved samples",
                expected: traj.resolved.len() * cells,
                got: traj.flux_h.len(),
            });
        }
    }
    Ok(())
}

fn log_geometric_mean_density(stencils: &Array2<f64>, eps_pilot: f64, width: usize) -> f64 {
    use crate::kernel::pilot_density;
    let n = stencils.nrows();
    let sum: f64 = (0..n)
        .map(|i| {
            pilot_density(stencils.row(i), stencils, eps_pilot, width)
                .max(f64::MIN_POSITIVE)
                .ln()
        })
        .sum();
    sum / n as f64
}

/// Ordered-pair squared distances divided by the per-sample scale product.
fn scaled_sqdist_sample(
    stencils: &Array2<f64>,
    scales: &[f64],
    max_pairs: usize,
    seed: u64,
) -> Vec<f64> {
    use crate::kernel::squared_distance;
    let n = stencils.nrows();
    let pairs: Vec<(usize, usize)> = if n * n <= max_pairs {
        (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect()
    } else {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        (0..max_pairs)
            .map(|_| (rng.gen_range(0..n), rng.gen_range(0..n)))
            .collect()
    };
    pairs
        .iter()
        .map(|&(i, j)| squared_distance(stencils.row(i), stencils.row(j)) / (scales[i] * scales[j]))
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct BlockManifest {
    sample_start: usize,
    sample_end: usize,
    column_start: usize,
    column_end: usize,
    embedded_times: usize,
    num_cells: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelManifest {
    config: RunConfig,
    factorization_order: String,
    basis_epsilon: f64,
    conditioning_epsilon: f64,
    pilot_epsilon: Option<f64>,
    pilot_log_geometric_mean_density: Option<f64>,
    stencil_width: usize,
    blocks: Vec<BlockManifest>,
    diagnostics: TrainDiagnostics,
    phi: ArrayEntry,
    eigenvalues: ArrayEntry,
    weights: ArrayEntry,
    transfer: ArrayEntry,
    obs_h: ArrayEntry,
    obs_q: ArrayEntry,
    stencils: ArrayEntry,
    scales: Option<ArrayEntry>,
}

impl ModelBundle {
    pub fn save(&self, dir: &Path, diagnostics: &TrainDiagnostics) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let basis = &self.basis;
        let (n, l) = basis.phi.dim();
        let phi = write_f64_array(
            &dir.join("basis_phi.f64"),
            &[n, l],
            basis.phi.as_slice().expect("contiguous"),
        )?;
        let eigenvalues =
            write_f64_array(&dir.join("eigenvalues.f64"), &[l], &basis.eigenvalues)?;
        let weights = write_f64_array(&dir.join("weights.f64"), &[n], &basis.weights)?;
        let transfer = write_f64_array(
            &dir.join("transfer.f64"),
            &[l, l],
            self.transfer.matrix.as_slice().expect("contiguous"),
        )?;
        let write_observable = |name: &str, obs: &QuantumObservable<f64>| -> Result<ArrayEntry> {
            if self.config.observables_f32 {
                let data: Vec<f32> = obs.matrix.iter().map(|&x| x as f32).collect();
                write_f32_array(&dir.join(format!("{name}.f32")), &[l, l], &data)
            } else {
                write_f64_array(
                    &dir.join(format!("{name}.f64")),
                    &[l, l],
                    obs.matrix.as_slice().expect("contiguous"),
                )
            }
        };
        let obs_h = write_observable("obs_h", &self.obs_h)?;
        let obs_q = write_observable("obs_q", &self.obs_q)?;
        let cond = &self.conditioning;
        let stencils = write_f64_array(
            &dir.join("stencils.f64"),
            &[cond.stencils.nrows(), cond.stencils.ncols()],
            cond.stencils.as_slice().expect("contiguous"),
        )?;
        let scales = cond
            .bandwidth
            .variable_scale
            .as_ref()
            .map(|s| write_f64_array(&dir.join("scales.f64"), &[s.len()], s))
            .transpose()?;

        let manifest = ModelManifest {
            config: self.config.clone(),
            factorization_order: "cholesky-then-sinkhorn-then-eigensolve".into(),
            basis_epsilon: self.basis_epsilon,
            conditioning_epsilon: cond.bandwidth.epsilon,
            pilot_epsilon: cond.pilot.map(|p| p.epsilon),
            pilot_log_geometric_mean_density: cond.pilot.map(|p| p.log_geometric_mean_density),
            stencil_width: cond.stencil_width,
            blocks: basis
                .blocks
                .iter()
                .map(|b| BlockManifest {
                    sample_start: b.sample_range.start,
                    sample_end: b.sample_range.end,
                    column_start: b.column_range.start,
                    column_end: b.column_range.end,
                    embedded_times: b.embedded_times,
                    num_cells: b.num_cells,
                })
                .collect(),
            diagnostics: diagnostics.clone(),
            phi,
            eigenvalues,
            weights,
            transfer,
            obs_h,
            obs_q,
            stencils,
            scales,
        };
        write_manifest(&dir.join("manifest.toml"), &manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: ModelManifest = read_manifest(&dir.join("manifest.toml"))?;
        manifest.config.validate()?;
        let n = manifest.phi.shape[0];
        let l = manifest.phi.shape[1];
        let phi = Array2::from_shape_vec((n, l), read_f64_array(dir, &manifest.phi)?)
            .map_err(|e| Error::Manifest(e.to_string()))?;
        let eigenvalues = read_f64_array(dir, &manifest.eigenvalues)?;
        let weights = read_f64_array(dir, &manifest.weights)?;
        let transfer = Array2::from_shape_vec((l, l), read_f64_array(dir, &manifest.transfer)?)
            .map_err(|e| Error::Manifest(e.to_string()))?;
        let read_observable = |entry: &ArrayEntry, label: FluxComponent| -> Result<QuantumObservable<f64>> {
            let data: Vec<f64> = if entry.dtype == "f32" {
                read_f32_array(dir, entry)?.into_iter().map(f64::from).collect()
            } else {
                read_f64_array(dir, entry)?
            };
            Ok(QuantumObservable {
                matrix: Array2::from_shape_vec((l, l), data)
                    .map_err(|e| Error::Manifest(e.to_string()))?,
                label,
            })
        };
        let obs_h = read_observable(&manifest.obs_h, FluxComponent::Height)?;
        let obs_q = read_observable(&manifest.obs_q, FluxComponent::Momentum)?;
        let stencils = Array2::from_shape_vec(
            (manifest.stencils.shape[0], manifest.stencils.shape[1]),
            read_f64_array(dir, &manifest.stencils)?,
        )
        .map_err(|e| Error::Manifest(e.to_string()))?;
        let scales = manifest
            .scales
            .as_ref()
            .map(|entry| read_f64_array(dir, entry))
            .transpose()?;

        let blocks = manifest
            .blocks
            .iter()
            .map(|b| TrajectoryBlock {
                sample_range: b.sample_start..b.sample_end,
                column_range: b.column_start..b.column_end,
                embedded_times: b.embedded_times,
                num_cells: b.num_cells,
            })
            .collect();
        let pilot = match (manifest.pilot_epsilon, manifest.pilot_log_geometric_mean_density) {
            (Some(epsilon), Some(log_geometric_mean_density)) => Some(PilotStats {
                epsilon,
                log_geometric_mean_density,
            }),
            _ => None,
        };
        Ok(ModelBundle {
            config: manifest.config,
            basis: SpectralBasis {
                phi,
                eigenvalues,
                weights,
                blocks,
            },
            transfer: TransferMatrix { matrix: transfer },
            obs_h,
            obs_q,
            conditioning: Conditioning {
                stencils,
                stencil_width: manifest.stencil_width,
                bandwidth: BandwidthSpec {
                    epsilon: manifest.conditioning_epsilon,
                    variable_scale: scales,
                },
                pilot,
            },
            basis_epsilon: manifest.basis_epsilon,
        })
    }

    /// Combined digest of every persisted array, for determinism checks.
    pub fn fingerprint(dir: &Path) -> Result<String> {
        let manifest: ModelManifest = read_manifest(&dir.join("manifest.toml"))?;
        let mut parts = vec![
            manifest.phi.sha256.clone(),
            manifest.eigenvalues.sha256.clone(),
            manifest.weights.sha256.clone(),
            manifest.transfer.sha256.clone(),
            manifest.obs_h.sha256.clone(),
            manifest.obs_q.sha256.clone(),
            manifest.stencils.sha256.clone(),
        ];
        if let Some(scales) = &manifest.scales {
            parts.push(scales.sha256.clone());
        }
        Ok(parts.join("-"))
    }
}
