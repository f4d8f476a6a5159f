//! Run configuration: grid geometry, solver parameters, training and
//! prediction protocol. Defaults reproduce the reference configuration
//! (fine grid 1920, ratio 20, three training trajectories, Q=64, J=5,
//! L=r=6144); `RunConfig::desk()` is a CI-sized variant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::swe_fv::SweParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Fine grid cell count M_f.
    pub fine_cells: usize,
    /// Coarsening ratio M_s (fine cells per coarse cell).
    pub coarsen_ratio: usize,
    pub domain_min: f64,
    pub domain_max: f64,
    /// Gravitational acceleration used to derive the Froude number when
    /// `froude` is not set explicitly.
    pub gravity: f64,
    /// Explicit Froude number; overrides `gravity` when present.
    pub froude: Option<f64>,
    /// Fine timestep as a fraction of Δx: `dt = cfl_factor·Δx`.
    pub cfl_factor: f64,
    /// Fine steps integrated before sampling starts.
    pub spinup_steps: usize,
    /// Fine steps in the sampling window.
    pub sample_steps: usize,
    /// Keep every `sample_stride`-th fine step. Defaults to the
    /// coarsening ratio; any other value breaks Δt̂ = M_s·Δt and is
    /// rejected by validation.
    pub sample_stride: Option<usize>,
    /// Initial-condition parameters of the training trajectories.
    pub train_deltas: Vec<f64>,
    /// Initial-condition parameters used for prediction tests.
    pub test_deltas: Vec<f64>,
    /// Delay count Q.
    pub delays: usize,
    /// Conditioning stencil width J (odd).
    pub stencil_width: usize,
    /// Total eigenfunctions L (split equally across trajectories unless
    /// `per_trajectory_l` is set).
    pub basis_size: usize,
    pub per_trajectory_l: Option<Vec<usize>>,
    /// Total pivoted-Cholesky rank r (split equally across trajectories
    /// unless `per_trajectory_rank` is set).
    pub cholesky_rank: usize,
    pub per_trajectory_rank: Option<Vec<usize>>,
    /// Randomized pivoting instead of greedy diagonal pivoting.
    pub randomized_pivoting: bool,
    /// Variable-bandwidth conditioning (pilot density scales).
    pub variable_bandwidth: bool,
    /// Max pair count for bandwidth tuning subsamples.
    pub max_tuning_pairs: usize,
    pub seed: u64,
    /// Condition the densities every this many coarse steps.
    pub conditioning_period: usize,
    /// Prediction horizon in coarse steps.
    pub prediction_horizon: usize,
    /// Store the two observables in 32-bit floats on disk.
    pub observables_f32: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            fine_cells: 1920,
            coarsen_ratio: 20,
            domain_min: -25.0,
            domain_max: 25.0,
            gravity: 9.81,
            froude: None,
            cfl_factor: 0.1,
            spinup_steps: 12_200,
            sample_steps: 3_260,
            sample_stride: None,
            train_deltas: vec![0.0, 0.5, 1.0],
            test_deltas: vec![0.25, 0.75],
            delays: 64,
            stencil_width: 5,
            basis_size: 6144,
            per_trajectory_l: None,
            cholesky_rank: 6144,
            per_trajectory_rank: None,
            randomized_pivoting: false,
            variable_bandwidth: true,
            max_tuning_pairs: 4_000_000,
            seed: 0,
            conditioning_period: 10,
            prediction_horizon: 120,
            observables_f32: false,
        }
    }
}

impl RunConfig {
    /// Desk-scale configuration: small enough for CI, large enough for
    /// the surrogate to beat the zero-closure baseline out of sample.
    pub fn desk() -> Self {
        RunConfig {
            fine_cells: 480,
            coarsen_ratio: 10,
            spinup_steps: 3_000,
            sample_steps: 800,
            train_deltas: vec![0.0, 1.0],
            test_deltas: vec![0.5],
            delays: 16,
            stencil_width: 5,
            basis_size: 256,
            cholesky_rank: 512,
            conditioning_period: 10,
            prediction_horizon: 60,
            ..RunConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("fine_cells", self.fine_cells),
            ("coarsen_ratio", self.coarsen_ratio),
            ("delays", self.delays),
            ("stencil_width", self.stencil_width),
            ("basis_size", self.basis_size),
            ("cholesky_rank", self.cholesky_rank),
            ("conditioning_period", self.conditioning_period),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(Error::InvalidParameter(format!("{name} must be positive")));
            }
        }
        if self.fine_cells % self.coarsen_ratio != 0 {
            return Err(Error::InvalidParameter(format!(
                "fine_cells {} not divisible by coarsen_ratio {}",
                self.fine_cells, self.coarsen_ratio
            )));
        }
        if self.domain_max <= self.domain_min {
            return Err(Error::InvalidParameter("empty spatial domain".into()));
        }
        if !(self.cfl_factor > 0.0) || !(self.gravity > 0.0) {
            return Err(Error::InvalidParameter(
                "cfl_factor and gravity must be positive".into(),
            ));
        }
        if let Some(fr) = self.froude {
            if !(fr > 0.0) {
                return Err(Error::InvalidParameter("froude must be positive".into()));
            }
        }
        if self.stencil_width % 2 == 0 {
            return Err(Error::InvalidParameter(format!(
                "stencil_width must be odd, got {}",
                self.stencil_width
            )));
        }
        if let Some(stride) = self.sample_stride {
            if stride != self.coarsen_ratio {
                return Err(Error::InvalidParameter(format!(
                    "sample_stride {stride} must equal coarsen_ratio {}: the resolved \
                     sampling cadence defines the coarse timestep Δt̂ = M_s·Δt",
                    self.coarsen_ratio
                )));
            }
        }
        if self.train_deltas.is_empty() {
            return Err(Error::InvalidParameter("no training trajectories".into()));
        }
        for &d in self.train_deltas.iter().chain(self.test_deltas.iter()) {
            if !(0.0..=1.0).contains(&d) {
                return Err(Error::InvalidParameter(format!(
                    "initial-condition parameter {d} outside [0,1]"
                )));
            }
        }
        let trajectories = self.train_deltas.len();
        for (name, per) in [
            ("per_trajectory_l", &self.per_trajectory_l),
            ("per_trajectory_rank", &self.per_trajectory_rank),
        ] {
            if let Some(values) = per {
                if values.len() != trajectories {
                    return Err(Error::InvalidParameter(format!(
                        "{name} needs one entry per training trajectory ({trajectories})"
                    )));
                }
                if values.iter().any(|&v| v == 0) {
                    return Err(Error::InvalidParameter(format!("{name} entries must be positive")));
                }
            }
        }
        if self.per_trajectory_l.is_none() && self.basis_size % trajectories != 0 {
            return Err(Error::InvalidParameter(format!(
                "basis_size {} not divisible by {trajectories} trajectories; \
                 set per_trajectory_l explicitly",
                self.basis_size
            )));
        }
        if self.per_trajectory_rank.is_none() && self.cholesky_rank % trajectories != 0 {
            return Err(Error::InvalidParameter(format!(
                "cholesky_rank {} not divisible by {trajectories} trajectories; \
                 set per_trajectory_rank explicitly",
                self.cholesky_rank
            )));
        }
        if self.samples_per_trajectory() < self.delays {
            return Err(Error::InvalidParameter(format!(
                "sampling window keeps {} samples per trajectory, fewer than {} delays",
                self.samples_per_trajectory(),
                self.delays
            )));
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        self.sample_stride.unwrap_or(self.coarsen_ratio)
    }

    /// Resolved samples kept per trajectory: the window start plus every
    /// stride-th step within the window.
    pub fn samples_per_trajectory(&self) -> usize {
        self.sample_steps.div_ceil(self.stride())
    }

    pub fn embedded_per_trajectory(&self) -> usize {
        self.samples_per_trajectory() + 1 - self.delays
    }

    pub fn coarse_cells(&self) -> usize {
        self.fine_cells / self.coarsen_ratio
    }

    pub fn fine_dx(&self) -> f64 {
        (self.domain_max - self.domain_min) / self.fine_cells as f64
    }

    pub fn fine_dt(&self) -> f64 {
        self.cfl_factor * self.fine_dx()
    }

    pub fn froude_number(&self) -> f64 {
        self.froude
            .unwrap_or_else(|| SweParams::<f64>::froude_from_gravity(self.gravity))
    }

    pub fn swe_params(&self) -> Result<SweParams<f64>> {
        SweParams::new(self.froude_number(), self.fine_dt())
    }

    pub fn per_trajectory_basis_sizes(&self) -> Vec<usize> {
        self.per_trajectory_l.clone().unwrap_or_else(|| {
            vec![self.basis_size / self.train_deltas.len(); self.train_deltas.len()]
        })
    }

    pub fn per_trajectory_ranks(&self) -> Vec<usize> {
        self.per_trajectory_rank.clone().unwrap_or_else(|| {
            vec![self.cholesky_rank / self.train_deltas.len(); self.train_deltas.len()]
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Manifest(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| Error::Manifest(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }
}
