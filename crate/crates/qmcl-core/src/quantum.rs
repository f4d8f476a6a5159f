//! Quantum observables, density-operator fields, projected transfer
//! operator, effect operators, Bayesian conditioning, and surrogate flux
//! evaluation.
//!
//! Every operator is the orthogonal projection of a multiplication or
//! shift operator onto the spectral basis. Pure states are unit-norm
//! coefficient vectors; one per coarse cell. Conditioning applies the
//! projected multiplication-by-√f operator to the coefficient vector
//! without materializing the L×L effect matrix (the two routes agree to
//! roundoff; see [`project_multiplication`] for the materialized form).

use ndarray::{s, Array1, Array2, ArrayView1};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernel::{conditioning_kernel, pilot_density, BandwidthSpec};
use crate::spectral::SpectralBasis;
use crate::swe_fv::SweState;
use crate::Scalar;

/// Which flux component an observable produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FluxComponent {
    Height,
    Momentum,
}

/// Projected multiplication operator for one flux component.
#[derive(Debug, Clone)]
pub struct QuantumObservable<S> {
    pub matrix: Array2<S>,
    pub label: FluxComponent,
}

/// Projected within-trajectory shift operator.
#[derive(Debug, Clone)]
pub struct TransferMatrix<S> {
    pub matrix: Array2<S>,
}

/// Projected multiplication by the square root of a feature vector.
#[derive(Debug, Clone)]
pub struct EffectMatrix<S> {
    pub matrix: Array2<S>,
}

/// One unit-norm coefficient vector per coarse cell (rows).
#[derive(Debug, Clone)]
pub struct DensityField<S> {
    pub coeffs: Array2<S>,
}

impl<S: Scalar> DensityField<S> {
    pub fn num_cells(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn dimension(&self) -> usize {
        self.coeffs.ncols()
    }
}

/// Project pointwise multiplication by `values` onto the basis:
/// `M_{ik} = Σ_s w_s·φ_i(s)·values_s·φ_k(s)`.
///
/// The result is symmetric; entries coupling different trajectory blocks
/// vanish exactly (disjoint column supports), so the computation runs
/// blockwise.
pub fn project_multiplication<S: Scalar>(
    values: &[S],
    basis: &SpectralBasis<S>,
) -> Result<Array2<S>> {
    let n = basis.num_samples();
    if values.len() != n {
        return Err(Error::LengthMismatch {
            what: "multiplication values vs samples",
            expected: n,
            got: values.len(),
        });
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::DegenerateData(format!(
            "non-finite multiplication value at sample {i}"
        )));
    }
    let l = basis.num_columns();
    let mut out = Array2::zeros((l, l));
    let half = S::from_f64_lossy(0.5);
    for block in &basis.blocks {
        let phi = basis
            .phi
            .slice(s![block.sample_range.clone(), block.column_range.clone()]);
        let mut scaled = phi.to_owned();
        for (row_idx, mut row) in scaled.rows_mut().into_iter().enumerate() {
            let sample = block.sample_range.start + row_idx;
            let factor = basis.weights[sample] * values[sample];
            row.mapv_inplace(|x| x * factor);
        }
        let product = phi.t().dot(&scaled);
        let cols = block.column_range.clone();
        let mut target = out.slice_mut(s![cols.clone(), cols]);
        for i in 0..product.nrows() {
            for j in 0..product.ncols() {
                target[(i, j)] = half * (product[(i, j)] + product[(j, i)]);
            }
        }
    }
    Ok(out)
}

/// Build the two flux observables from per-sample subgrid flux values.
pub fn build_observables<S: Scalar>(
    flux_h: &[S],
    flux_q: &[S],
    basis: &SpectralBasis<S>,
) -> Result<(QuantumObservable<S>, QuantumObservable<S>)> {
    let a_h = project_multiplication(flux_h, basis)?;
    let a_q = project_multiplication(flux_q, basis)?;
    Ok((
        QuantumObservable {
            matrix: a_h,
            label: FluxComponent::Height,
        },
        QuantumObservable {
            matrix: a_q,
            label: FluxComponent::Momentum,
        },
    ))
}

const TRANSFER_NORM_BOUND: f64 = 1.0 + 1e-6;

/// Project the within-trajectory shift operator onto the basis:
/// `P_{ik} = ⟨φ_i, P_N φ_k⟩` with `(P_N φ)(n,m) = φ(n−1,m)` and zero at
/// each trajectory's first embedded time.
///
/// The shift is a contraction in the weighted inner product, so the
/// projected matrix must have operator norm ≤ 1; this is verified by
/// power iteration and violation is an error.
pub fn build_transfer<S: Scalar>(basis: &SpectralBasis<S>) -> Result<TransferMatrix<S>> {
    let l = basis.num_columns();
    let mut out = Array2::zeros((l, l));
    for block in &basis.blocks {
        let times = block.embedded_times;
        let cells = block.num_cells;
        let phi = basis
            .phi
            .slice(s![block.sample_range.clone(), block.column_range.clone()]);
        // Shifted-and-weighted copy: row (n,m) ← w_{(n,m)}·φ(n−1,m).
        let mut shifted = Array2::zeros(phi.dim());
        for n in 1..times {
            for m in 0..cells {
                let w = basis.weights[block.sample_range.start + n * cells + m];
                let src = phi.row((n - 1) * cells + m);
                let mut dst = shifted.row_mut(n * cells + m);
                for (d, &x) in dst.iter_mut().zip(src.iter()) {
                    *d = w * x;
                }
            }
        }
        let product = phi.t().dot(&shifted);
        let cols = block.column_range.clone();
        out.slice_mut(s![cols.clone(), cols]).assign(&product);
    }
    let norm = operator_norm_estimate(&out);
    if norm.to_f64_lossy() > TRANSFER_NORM_BOUND {
        return Err(Error::TransferNormBound {
            norm: norm.to_f64_lossy(),
        });
    }
    Ok(TransferMatrix { matrix: out })
}

/// Spectral norm lower estimate by power iteration on `PᵀP` from a fixed
/// start vector (deterministic; underestimates only).
fn operator_norm_estimate<S: Scalar>(matrix: &Array2<S>) -> S {
    let l = matrix.ncols();
    if l == 0 {
        return S::zero();
    }
    let mut x = Array1::from_elem(l, S::one() / S::from_f64_lossy((l as f64).sqrt()));
    let mut sigma = S::zero();
    for _ in 0..60 {
        let y = matrix.t().dot(&matrix.dot(&x));
        let norm = y.iter().map(|&v| v * v).sum::<S>().sqrt();
        if !(norm > S::zero()) {
            return S::zero();
        }
        sigma = norm;
        x = y.mapv(|v| v / norm);
    }
    sigma.sqrt()
}

const DENSITY_NORM_FLOOR: f64 = 1e-12;

/// Uninformative initial density field: every cell carries the projection
/// of the unit function, normalized to unit coefficient norm.
pub fn init_density_uniform<S: Scalar>(
    basis: &SpectralBasis<S>,
    num_cells: usize,
) -> Result<DensityField<S>> {
    let l = basis.num_columns();
    let mut coeffs = Array1::zeros(l);
    for block in &basis.blocks {
        let phi = basis
            .phi
            .slice(s![block.sample_range.clone(), block.column_range.clone()]);
        for (col, target) in block.column_range.clone().enumerate() {
            let mut acc = S::zero();
            for (row_idx, sample) in block.sample_range.clone().enumerate() {
                acc += basis.weights[sample] * phi[(row_idx, col)];
            }
            coeffs[target] = acc;
        }
    }
    let norm = coeffs.iter().map(|&v| v * v).sum::<S>().sqrt();
    if norm.to_f64_lossy() < DENSITY_NORM_FLOOR {
        return Err(Error::DegenerateData(
            "projection of the unit function is numerically zero".into(),
        ));
    }
    if norm.to_f64_lossy() < 1e-8 {
        log::warn!(
            "projection of the unit function has small norm {:e}; basis may not resolve constants",
            norm.to_f64_lossy()
        );
    }
    let unit = coeffs.mapv(|v| v / norm);
    let mut field = Array2::zeros((num_cells, l));
    for mut row in field.rows_mut() {
        row.assign(&unit);
    }
    Ok(DensityField { coeffs: field })
}

/// Advance every cell's density one coarse step: `ρ ← P·ρ / ‖P·ρ‖`.
pub fn evolve_density<S: Scalar>(
    field: &mut DensityField<S>,
    transfer: &TransferMatrix<S>,
) -> Result<()> {
    let floor = S::from_f64_lossy(DENSITY_NORM_FLOOR);
    for (cell, mut row) in field.coeffs.rows_mut().into_iter().enumerate() {
        let advanced = transfer.matrix.dot(&row.to_owned());
        let norm = advanced.iter().map(|&v| v * v).sum::<S>().sqrt();
        if norm < floor {
            return Err(Error::DegenerateDensity {
                cell,
                norm: norm.to_f64_lossy(),
            });
        }
        for (dst, &v) in row.iter_mut().zip(advanced.iter()) {
            *dst = v / norm;
        }
    }
    Ok(())
}

/// Everything needed to evaluate conditioning feature vectors against the
/// training data: the training stencils, the tuned bandwidth (optionally
/// variable), and the pilot-density statistics that extend the variable
/// bandwidth to out-of-sample query states.
#[derive(Debug, Clone)]
pub struct Conditioning<S> {
    /// Training stencil vectors, one row per product sample (NM × 2J).
    pub stencils: Array2<S>,
    /// Stencil width J (odd).
    pub stencil_width: usize,
    /// Conditioning bandwidth ε′ and per-sample scales.
    pub bandwidth: BandwidthSpec<S>,
    /// Pilot bandwidth and log geometric-mean density backing the
    /// variable scales; `None` for fixed bandwidth.
    pub pilot: Option<PilotStats<S>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PilotStats<S> {
    pub epsilon: S,
    pub log_geometric_mean_density: S,
}

const PILOT_DENSITY_FLOOR: f64 = 1e-300;

impl<S: Scalar> Conditioning<S> {
    /// Bandwidth scale for an out-of-sample stencil: the training-sample
    /// power rule applied to the query's pilot density.
    fn query_scale(&self, query: ArrayView1<S>) -> S {
        match (&self.pilot, &self.bandwidth.variable_scale) {
            (Some(pilot), Some(_)) => {
                let density = pilot_density(
                    query,
                    &self.stencils,
                    pilot.epsilon,
                    self.stencil_width,
                )
                .max(S::from_f64_lossy(PILOT_DENSITY_FLOOR));
                let half = S::from_f64_lossy(0.5);
                (-(density.ln() - pilot.log_geometric_mean_density) * half).exp()
            }
            _ => S::one(),
        }
    }
}

/// Stencil of one cell of a resolved state, matching the training stencil
/// layout (left-to-right `(h,q)` pairs, periodic wrap).
pub fn query_stencil<S: Scalar>(
    state: &SweState<S>,
    cell: usize,
    stencil_width: usize,
) -> Vec<S> {
    let num_cells = state.num_cells();
    let half = stencil_width / 2;
    let mut out = Vec::with_capacity(2 * stencil_width);
    for k in 0..stencil_width {
        let c = (cell + num_cells + k - half) % num_cells;
        out.push(state.h[c]);
        out.push(state.q[c]);
    }
    out
}

/// Feature vector for one cell: the conditioning kernel between the
/// query stencil at `cell` and every training stencil. Values in (0,1].
pub fn feature_vector<S: Scalar>(
    state: &SweState<S>,
    cell: usize,
    conditioning: &Conditioning<S>,
) -> Vec<S> {
    let query = query_stencil(state, cell, conditioning.stencil_width);
    let query = Array1::from_vec(query);
    let scale_q = conditioning.query_scale(query.view());
    (0..conditioning.stencils.nrows())
        .map(|sample| {
            conditioning_kernel(
                query.view(),
                conditioning.stencils.row(sample),
                conditioning.bandwidth.epsilon,
                conditioning.stencil_width,
                scale_q,
                conditioning.bandwidth.scale(sample),
            )
        })
        .collect()
}

/// Feature vectors for every cell of the resolved state (parallel over
/// cells; each cell's vector is computed sequentially).
pub fn feature_field<S: Scalar>(
    state: &SweState<S>,
    conditioning: &Conditioning<S>,
) -> Vec<Vec<S>> {
    (0..state.num_cells())
        .into_par_iter()
        .map(|cell| feature_vector(state, cell, conditioning))
        .collect()
}

/// Cells skipped because conditioning was uninformative.
#[derive(Debug, Clone, Default)]
pub struct ConditionOutcome {
    pub skipped_cells: Vec<usize>,
}

/// Bayesian conditioning of every cell's density: build the effect from
/// the square root of the cell's feature vector and apply
/// `ρ ← e·ρ / ‖e·ρ‖`.
///
/// The effect is applied matrix-free as `Φᵀ·(w·√f ⊙ (Φ·ρ))`. When
/// `‖e·ρ‖` falls below 1e−12 the prior is kept for that cell and the
/// cell is reported as skipped.
pub fn condition_density<S: Scalar>(
    field: &mut DensityField<S>,
    features: &[Vec<S>],
    basis: &SpectralBasis<S>,
) -> Result<ConditionOutcome> {
    let cells = field.num_cells();
    if features.len() != cells {
        return Err(Error::LengthMismatch {
            what: "feature vectors vs cells",
            expected: cells,
            got: features.len(),
        });
    }
    let n = basis.num_samples();
    for (cell, f) in features.iter().enumerate() {
        if f.len() != n {
            return Err(Error::LengthMismatch {
                what: "feature vector vs samples",
                expected: n,
                got: f.len(),
            });
        }
        if let Some(i) = f.iter().position(|x| !(*x >= S::zero()) || !x.is_finite()) {
            return Err(Error::DegenerateData(format!(
                "feature value at cell {cell}, sample {i} is negative or non-finite"
            )));
        }
    }
    let floor = S::from_f64_lossy(DENSITY_NORM_FLOOR);
    let updates: Vec<Option<Array1<S>>> = (0..cells)
        .into_par_iter()
        .map(|cell| {
            let rho = field.coeffs.row(cell).to_owned();
            let posterior = apply_effect(&features[cell], basis, &rho);
            let norm = posterior.iter().map(|&v| v * v).sum::<S>().sqrt();
            if norm < floor {
                None
            } else {
                Some(posterior.mapv(|v| v / norm))
            }
        })
        .collect();
    let mut outcome = ConditionOutcome::default();
    for (cell, update) in updates.into_iter().enumerate() {
        match update {
            Some(new_row) => field.coeffs.row_mut(cell).assign(&new_row),
            None => outcome.skipped_cells.push(cell),
        }
    }
    if !outcome.skipped_cells.is_empty() {
        log::warn!(
            "conditioning kept the prior at {} cell(s): {:?}",
            outcome.skipped_cells.len(),
            outcome.skipped_cells
        );
    }
    Ok(outcome)
}

/// `e·ρ` for the effect built from √f, applied without materializing the
/// L×L matrix: `Φᵀ·diag(w·√f)·(Φ·ρ)` evaluated blockwise.
fn apply_effect<S: Scalar>(
    features: &[S],
    basis: &SpectralBasis<S>,
    rho: &Array1<S>,
) -> Array1<S> {
    let l = basis.num_columns();
    let mut out = Array1::zeros(l);
    for block in &basis.blocks {
        let phi = basis
            .phi
            .slice(s![block.sample_range.clone(), block.column_range.clone()]);
        let rho_block = rho.slice(s![block.column_range.clone()]).to_owned();
        let mut values = phi.dot(&rho_block);
        for (row_idx, v) in values.iter_mut().enumerate() {
            let sample = block.sample_range.start + row_idx;
            *v = *v * basis.weights[sample] * features[sample].sqrt();
        }
        let projected = phi.t().dot(&values);
        out.slice_mut(s![block.column_range.clone()]).assign(&projected);
    }
    out
}

/// Materialized effect matrix for one feature vector (projection of
/// multiplication by √f). Used where the operator itself is wanted;
/// conditioning uses the matrix-free route.
pub fn effect_matrix<S: Scalar>(
    features: &[S],
    basis: &SpectralBasis<S>,
) -> Result<EffectMatrix<S>> {
    let sqrt_f: Vec<S> = features.iter().map(|&x| x.sqrt()).collect();
    Ok(EffectMatrix {
        matrix: project_multiplication(&sqrt_f, basis)?,
    })
}

/// Surrogate fluxes `f̃_j(m) = ρ_mᵀ·A_j·ρ_m` for both components.
pub fn surrogate_flux<S: Scalar>(
    field: &DensityField<S>,
    obs_h: &QuantumObservable<S>,
    obs_q: &QuantumObservable<S>,
) -> (Vec<S>, Vec<S>) {
    let quadratic = |a: &Array2<S>| -> Vec<S> {
        field
            .coeffs
            .rows()
            .into_iter()
            .map(|rho| {
                let rho = rho.to_owned();
                let y = a.dot(&rho);
                rho.iter().zip(y.iter()).map(|(&r, &v)| r * v).sum()
            })
            .collect()
    };
    (quadratic(&obs_h.matrix), quadratic(&obs_q.matrix))
}
