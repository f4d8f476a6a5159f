//! Online stage: initialize and condition the density field, advance the
//! coarse dynamics with surrogate subgrid fluxes, and track truth and
//! zero-closure baselines.

use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::coarsening::{
    coarsen_state, exact_subgrid_flux, step_coarse, CoarsePair, SubgridFluxField,
};
use crate::error::{Error, Result, StageExt};
use crate::pipeline::persist::{
    read_f64_array, read_manifest, write_f64_array, write_manifest, ArrayEntry,
};
use crate::pipeline::train::ModelBundle;
use crate::quantum::{
    condition_density, evolve_density, feature_field, init_density_uniform, surrogate_flux,
};
use crate::swe_fv::{fine_rhs, step_modified_euler, Grid1D, SweState};

/// What to predict and which baselines to carry along.
#[derive(Debug, Clone)]
pub struct PredictionRequest {
    /// Initial resolved (coarse) state.
    pub initial_resolved: SweState<f64>,
    /// Fine state at the same instant; enables the truth trajectory and
    /// exact subgrid fluxes in the report.
    pub initial_fine: Option<SweState<f64>>,
    /// Coarse steps to integrate.
    pub horizon: usize,
    /// Condition the densities every this many coarse steps.
    pub conditioning_period: usize,
    /// Label recorded in the report (initial-condition parameter).
    pub delta: Option<f64>,
}

/// Space-time grid per field: `(horizon+1) × M`, row per coarse time.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSeries {
    pub h: Array2<f64>,
    pub q: Array2<f64>,
}

impl FieldSeries {
    fn zeros(rows: usize, cells: usize) -> Self {
        FieldSeries {
            h: Array2::zeros((rows, cells)),
            q: Array2::zeros((rows, cells)),
        }
    }

    fn record(&mut self, row: usize, state: &SweState<f64>) {
        for (m, (&h, &q)) in state.h.iter().zip(state.q.iter()).enumerate() {
            self.h[(row, m)] = h;
            self.q[(row, m)] = q;
        }
    }
}

/// Full prediction output: predicted, truth, and zero-closure resolved
/// fields, surrogate and exact subgrid fluxes, per-step RMSE series, and
/// wall-clock timings (timings stay in memory; exports are bit-stable).
#[derive(Debug, Clone)]
pub struct PredictionReport {
    pub delta: Option<f64>,
    pub coarse_dt: f64,
    pub conditioning_period: usize,
    pub predicted: FieldSeries,
    pub zero_closure: FieldSeries,
    pub truth: Option<FieldSeries>,
    pub surrogate_flux: FieldSeries,
    pub true_flux: Option<FieldSeries>,
    /// RMSE over cells per step, predicted vs truth.
    pub rmse_predicted_h: Vec<f64>,
    pub rmse_predicted_q: Vec<f64>,
    /// RMSE over cells per step, zero-closure vs truth.
    pub rmse_zero_h: Vec<f64>,
    pub rmse_zero_q: Vec<f64>,
    /// (step, cell) pairs where conditioning kept the prior.
    pub skipped_conditioning: Vec<(usize, usize)>,
    pub timings: Timings,
}

#[derive(Debug, Clone, Default)]
pub struct Timings {
    pub total_seconds: f64,
    pub conditioning_seconds: f64,
}

impl PredictionReport {
    pub fn horizon(&self) -> usize {
        self.predicted.h.nrows() - 1
    }

    pub fn num_cells(&self) -> usize {
        self.predicted.h.ncols()
    }

    /// Normalized RMSE over the whole space-time grid:
    /// `‖pred − truth‖ / ‖truth − mean(truth)‖`.
    pub fn normalized_rmse(pred: &Array2<f64>, truth: &Array2<f64>) -> f64 {
        let mean = truth.iter().sum::<f64>() / truth.len() as f64;
        let num: f64 = pred
            .iter()
            .zip(truth.iter())
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum();
        let den: f64 = truth.iter().map(|&t| (t - mean) * (t - mean)).sum();
        (num / den).sqrt()
    }
}

/// Run the online stage of the closure model.
pub fn predict(bundle: &ModelBundle, request: &PredictionRequest) -> Result<PredictionReport> {
    let start = Instant::now();
    let config = &bundle.config;
    let cells = config.coarse_cells();
    if request.initial_resolved.num_cells() != cells {
        return Err(Error::LengthMismatch {
            what: "initial resolved state vs coarse grid",
            expected: cells,
            got: request.initial_resolved.num_cells(),
        }
        .in_stage("predict"));
    }
    if request.conditioning_period == 0 {
        return Err(Error::InvalidParameter("conditioning period must be >= 1".into())
            .in_stage("predict"));
    }
    let fine_grid = Grid1D::new(config.fine_cells, config.domain_min, config.domain_max)?;
    let pair = CoarsePair::new(fine_grid.clone(), config.coarsen_ratio)?;
    let params = config.swe_params()?;
    let horizon = request.horizon;
    let rows = horizon + 1;

    let mut predicted = FieldSeries::zeros(rows, cells);
    let mut zero_closure = FieldSeries::zeros(rows, cells);
    let mut surrogate = FieldSeries::zeros(rows, cells);
    let mut truth = request.initial_fine.as_ref().map(|_| FieldSeries::zeros(rows, cells));
    let mut true_flux = truth.clone();

    let mut state = request.initial_resolved.clone();
    let mut zero_state = state.clone();
    let mut fine = request.initial_fine.clone();
    if let Some(f) = &fine {
        if f.num_cells() != config.fine_cells {
            return Err(Error::LengthMismatch {
                what: "initial fine state vs fine grid",
                expected: config.fine_cells,
                got: f.num_cells(),
            }
            .in_stage("predict"));
        }
    }

    let mut skipped = Vec::new();
    let mut conditioning_seconds = 0.0;

    // Online initialization: uniform densities conditioned on the initial
    // resolved state, then the first flux read.
    let mut densities =
        init_density_uniform(&bundle.basis, cells).stage("init-density")?;
    let cond_start = Instant::now();
    let features = feature_field(&state, &bundle.conditioning);
    let outcome = condition_density(&mut densities, &features, &bundle.basis)
        .stage("conditioning")?;
    conditioning_seconds += cond_start.elapsed().as_secs_f64();
    skipped.extend(outcome.skipped_cells.into_iter().map(|c| (0, c)));
    let (mut g_h, mut g_q) = surrogate_flux(&densities, &bundle.obs_h, &bundle.obs_q);

    record_step(
        0,
        &state,
        &zero_state,
        &fine,
        &pair,
        &params,
        &g_h,
        &g_q,
        &mut predicted,
        &mut zero_closure,
        &mut surrogate,
        &mut truth,
        &mut true_flux,
    )?;

    for step in 1..=horizon {
        // Advance the resolved state with the surrogate fluxes held fixed.
        let subgrid = SubgridFluxField {
            g_h: g_h.clone(),
            g_q: g_q.clone(),
        };
        state = step_coarse(&state, &subgrid, &pair, &params).map_err(|e| {
            Error::SolverBlowup {
                step,
                reason: format!("surrogate run: {e}"),
            }
            .in_stage("predict")
        })?;
        zero_state = step_coarse(&zero_state, &SubgridFluxField::zeros(cells), &pair, &params)
            .map_err(|e| {
                Error::SolverBlowup {
                    step,
                    reason: format!("zero-closure run: {e}"),
                }
                .in_stage("predict")
            })?;
        if let Some(f) = fine.as_mut() {
            for substep in 0..pair.ratio() {
                *f = step_modified_euler(f, params.dt, |u| fine_rhs(u, &fine_grid, &params))
                    .map_err(|e| {
                        Error::SolverBlowup {
                            step: (step - 1) * pair.ratio() + substep + 1,
                            reason: format!("truth run: {e}"),
                        }
                        .in_stage("predict")
                    })?;
            }
        }

        // Advance the densities; condition on the updated resolved state
        // every conditioning_period steps.
        evolve_density(&mut densities, &bundle.transfer).stage("transfer")?;
        if step % request.conditioning_period == 0 {
            let cond_start = Instant::now();
            let features = feature_field(&state, &bundle.conditioning);
            let outcome = condition_density(&mut densities, &features, &bundle.basis)
                .stage("conditioning")?;
            conditioning_seconds += cond_start.elapsed().as_secs_f64();
            skipped.extend(outcome.skipped_cells.into_iter().map(|c| (step, c)));
        }
        let flux = surrogate_flux(&densities, &bundle.obs_h, &bundle.obs_q);
        g_h = flux.0;
        g_q = flux.1;

        record_step(
            step,
            &state,
            &zero_state,
            &fine,
            &pair,
            &params,
            &g_h,
            &g_q,
            &mut predicted,
            &mut zero_closure,
            &mut surrogate,
            &mut truth,
            &mut true_flux,
        )?;
    }

    let (rmse_predicted_h, rmse_predicted_q, rmse_zero_h, rmse_zero_q) = match &truth {
        Some(t) => (
            rmse_series(&predicted.h, &t.h),
            rmse_series(&predicted.q, &t.q),
            rmse_series(&zero_closure.h, &t.h),
            rmse_series(&zero_closure.q, &t.q),
        ),
        None => (Vec::new(), Vec::new(), Vec::new(), Vec::new()),
    };

    Ok(PredictionReport {
        delta: request.delta,
        coarse_dt: pair.dt_coarse(params.dt),
        conditioning_period: request.conditioning_period,
        predicted,
        zero_closure,
        truth,
        surrogate_flux: surrogate,
        true_flux,
        rmse_predicted_h,
        rmse_predicted_q,
        rmse_zero_h,
        rmse_zero_q,
        skipped_conditioning: skipped,
        timings: Timings {
            total_seconds: start.elapsed().as_secs_f64(),
            conditioning_seconds,
        },
    })
}

#[allow(clippy::too_many_arguments)]
fn record_step(
    row: usize,
    state: &SweState<f64>,
    zero_state: &SweState<f64>,
    fine: &Option<SweState<f64>>,
    pair: &CoarsePair<f64>,
    params: &crate::swe_fv::SweParams<f64>,
    g_h: &[f64],
    g_q: &[f64],
    predicted: &mut FieldSeries,
    zero_closure: &mut FieldSeries,
    surrogate: &mut FieldSeries,
    truth: &mut Option<FieldSeries>,
    true_flux: &mut Option<FieldSeries>,
) -> Result<()> {
    predicted.record(row, state);
    zero_closure.record(row, zero_state);
    for (m, (&gh, &gq)) in g_h.iter().zip(g_q.iter()).enumerate() {
        surrogate.h[(row, m)] = gh;
        surrogate.q[(row, m)] = gq;
    }
    if let Some(f) = fine {
        let coarse = coarsen_state(f, pair)?;
        truth.as_mut().expect("truth allocated").record(row, &coarse);
        let exact = exact_subgrid_flux(f, pair, params)?;
        let tf = true_flux.as_mut().expect("true flux allocated");
        for m in 0..exact.num_cells() {
            tf.h[(row, m)] = exact.g_h[m];
            tf.q[(row, m)] = exact.g_q[m];
        }
    }
    Ok(())
}

fn rmse_series(pred: &Array2<f64>, truth: &Array2<f64>) -> Vec<f64> {
    let cells = pred.ncols() as f64;
    pred.rows()
        .into_iter()
        .zip(truth.rows())
        .map(|(p, t)| {
            let sum: f64 = p
                .iter()
                .zip(t.iter())
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum();
            (sum / cells).sqrt()
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct SeriesManifest {
    h: ArrayEntry,
    q: ArrayEntry,
}

#[derive(Debug, Serialize, Deserialize)]
struct ReportManifest {
    delta: Option<f64>,
    horizon: usize,
    num_cells: usize,
    coarse_dt: f64,
    conditioning_period: usize,
    skipped_conditioning: Vec<(usize, usize)>,
    predicted: SeriesManifest,
    zero_closure: SeriesManifest,
    truth: Option<SeriesManifest>,
    surrogate_flux: SeriesManifest,
    true_flux: Option<SeriesManifest>,
}

impl PredictionReport {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let rows = self.horizon() + 1;
        let cells = self.num_cells();
        let write_series = |name: &str, series: &FieldSeries| -> Result<SeriesManifest> {
            Ok(SeriesManifest {
                h: write_f64_array(
                    &dir.join(format!("{name}_h.f64")),
                    &[rows, cells],
                    series.h.as_slice().expect("contiguous"),
                )?,
                q: write_f64_array(
                    &dir.join(format!("{name}_q.f64")),
                    &[rows, cells],
                    series.q.as_slice().expect("contiguous"),
                )?,
            })
        };
        let manifest = ReportManifest {
            delta: self.delta,
            horizon: self.horizon(),
            num_cells: cells,
            coarse_dt: self.coarse_dt,
            conditioning_period: self.conditioning_period,
            skipped_conditioning: self.skipped_conditioning.clone(),
            predicted: write_series("predicted", &self.predicted)?,
            zero_closure: write_series("zero_closure", &self.zero_closure)?,
            truth: self.truth.as_ref().map(|t| write_series("truth", t)).transpose()?,
            surrogate_flux: write_series("surrogate_flux", &self.surrogate_flux)?,
            true_flux: self
                .true_flux
                .as_ref()
                .map(|t| write_series("true_flux", t))
                .transpose()?,
        };
        write_manifest(&dir.join("manifest.toml"), &manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: ReportManifest = read_manifest(&dir.join("manifest.toml"))?;
        let rows = manifest.horizon + 1;
        let cells = manifest.num_cells;
        let read_series = |entry: &SeriesManifest| -> Result<FieldSeries> {
            Ok(FieldSeries {
                h: Array2::from_shape_vec((rows, cells), read_f64_array(dir, &entry.h)?)
                    .map_err(|e| Error::Manifest(e.to_string()))?,
                q: Array2::from_shape_vec((rows, cells), read_f64_array(dir, &entry.q)?)
                    .map_err(|e| Error::Manifest(e.to_string()))?,
            })
        };
        let predicted = read_series(&manifest.predicted)?;
        let zero_closure = read_series(&manifest.zero_closure)?;
        let truth = manifest.truth.as_ref().map(&read_series).transpose()?;
        let surrogate_flux = read_series(&manifest.surrogate_flux)?;
        let true_flux = manifest.true_flux.as_ref().map(&read_series).transpose()?;
        let (rmse_predicted_h, rmse_predicted_q, rmse_zero_h, rmse_zero_q) = match &truth {
            Some(t) => (
                rmse_series(&predicted.h, &t.h),
                rmse_series(&predicted.q, &t.q),
                rmse_series(&zero_closure.h, &t.h),
                rmse_series(&zero_closure.q, &t.q),
            ),
            None => (Vec::new(), Vec::new(), Vec::new(), Vec::new()),
        };
        Ok(PredictionReport {
            delta: manifest.delta,
            coarse_dt: manifest.coarse_dt,
            conditioning_period: manifest.conditioning_period,
            predicted,
            zero_closure,
            truth,
            surrogate_flux,
            true_flux,
            rmse_predicted_h,
            rmse_predicted_q,
            rmse_zero_h,
            rmse_zero_q,
            skipped_conditioning: manifest.skipped_conditioning,
            timings: Timings::default(),
        })
    }
}
