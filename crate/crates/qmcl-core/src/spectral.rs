//! Low-rank kernel factorization, eigenbasis of the normalized kernel
//! operator, and multi-trajectory block-diagonal basis assembly.
//!
//! The eigenpath is: factor the raw kernel (partial pivoted Cholesky),
//! Sinkhorn-scale the factor (see [`crate::kernel::bistochastic_normalize`]),
//! then solve the r×r reduced eigenproblem of the scaled factor and lift
//! the eigenvectors back to sample space. Eigenvalues are reported on the
//! scale of the doubly stochastic kernel matrix, so a bistochastic input
//! has leading eigenvalue 1 with the constant eigenvector.

use std::ops::Range;

use nalgebra::DMatrix;
use ndarray::Array2;
use num_traits::Float;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::Scalar;

/// Pivot selection strategy for the partial Cholesky factorization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PivotRule {
    /// Deterministic: largest residual diagonal entry.
    Greedy,
    /// Sample pivots with probability proportional to the residual
    /// diagonal (seeded).
    Randomized { seed: u64 },
}

/// Partial Cholesky factor of a PSD kernel matrix.
#[derive(Debug, Clone)]
pub struct LowRankFactor<S> {
    /// `n × rank` factor; `F·Fᵀ` approximates the kernel. Trailing
    /// columns are zero when the matrix rank is exhausted early.
    pub factor: Array2<S>,
    /// Selected pivot sample indices (length = realized rank).
    pub pivots: Vec<usize>,
    /// Remaining trace `Σ(diag − row-norm²) ≥ 0` after factorization.
    pub trace_residual: S,
}

const BREAKDOWN_TOLERANCE: f64 = -1e-12;

/// Partial pivoted Cholesky driven by a kernel row oracle.
///
/// After `r` pivots the factor reproduces the kernel exactly on pivot
/// rows: `(F·Fᵀ)_{p,·} = K_{p,·}`.
pub fn pivoted_cholesky<S, F>(
    row_oracle: F,
    diag: &[S],
    rank: usize,
    rule: PivotRule,
) -> Result<LowRankFactor<S>>
where
    S: Scalar,
    F: Fn(usize) -> Vec<S>,
{
    let n = diag.len();
    if rank == 0 || n == 0 {
        return Err(Error::InvalidParameter(
            "pivoted Cholesky needs rank >= 1 and a nonempty diagonal".into(),
        ));
    }
    if let Some(i) = diag.iter().position(|d| !(*d > S::zero())) {
        return Err(Error::InvalidParameter(format!(
            "kernel diagonal must be positive, got {} at {i}",
            diag[i]
        )));
    }
    let rank = rank.min(n);
    let breakdown = S::from_f64_lossy(BREAKDOWN_TOLERANCE);
    let mut residual: Vec<S> = diag.to_vec();
    let mut factor = Array2::zeros((n, rank));
    let mut pivots = Vec::with_capacity(rank);
    let mut rng = match rule {
        PivotRule::Randomized { seed } => Some(ChaCha20Rng::seed_from_u64(seed)),
        PivotRule::Greedy => None,
    };

    for k in 0..rank {
        let pivot = match rng.as_mut() {
            None => {
                let (p, _) = residual
                    .iter()
                    .enumerate()
                    .fold((0, S::neg_infinity()), |(bi, bv), (i, &v)| {
                        if v > bv {
                            (i, v)
                        } else {
                            (bi, bv)
                        }
                    });
                p
            }
            Some(rng) => {
                let total: S = residual.iter().fold(S::zero(), |a, &d| a + d.max(S::zero()));
                if !(total > S::zero()) {
                    break;
                }
                let mut target = S::from_f64_lossy(rng.gen_range(0.0..1.0)) * total;
                let mut chosen = n - 1;
                for (i, &d) in residual.iter().enumerate() {
                    let d = d.max(S::zero());
                    if target < d {
                        chosen = i;
                        break;
                    }
                    target -= d;
                }
                chosen
            }
        };
        let d_pivot = residual[pivot];
        if !(d_pivot > S::zero()) {
            break; // trace exhausted: remaining columns stay zero
        }
        let row = row_oracle(pivot);
        if row.len() != n {
            return Err(Error::LengthMismatch {
                what: "kernel row",
                expected: n,
                got: row.len(),
            });
        }
        let sqrt_d = d_pivot.sqrt();
        // Residual column: K[·,pivot] − F[·,..k]·F[pivot,..k]ᵀ
        let pivot_prefix: Vec<S> = (0..k).map(|j| factor[(pivot, j)]).collect();
        for i in 0..n {
            let mut proj = S::zero();
            for (j, &fp) in pivot_prefix.iter().enumerate() {
                proj += factor[(i, j)] * fp;
            }
            factor[(i, k)] = (row[i] - proj) / sqrt_d;
        }
        factor[(pivot, k)] = sqrt_d;
        for i in 0..n {
            let f = factor[(i, k)];
            let next = residual[i] - f * f;
            if next < breakdown {
                return Err(Error::CholeskyBreakdown {
                    index: i,
                    value: next.to_f64_lossy(),
                });
            }
            residual[i] = next.max(S::zero());
        }
        residual[pivot] = S::zero();
        pivots.push(pivot);
    }

    let trace_residual = residual.iter().copied().sum();
    Ok(LowRankFactor {
        factor,
        pivots,
        trace_residual,
    })
}

/// Sample/column extent of one trajectory inside a basis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrajectoryBlock {
    pub sample_range: Range<usize>,
    pub column_range: Range<usize>,
    /// Embedded time samples in this block.
    pub embedded_times: usize,
    /// Coarse cells per time sample.
    pub num_cells: usize,
}

/// Orthonormal eigenfunction basis over product samples.
///
/// Columns of `phi` are orthonormal under the weighted inner product
/// `⟨f,g⟩ = Σ_s weights_s·f_s·g_s`. In multi-trajectory form each column
/// is supported on exactly one trajectory's sample block, and columns are
/// grouped contiguously per trajectory with eigenvalues nonincreasing
/// within each block.
#[derive(Debug, Clone)]
pub struct SpectralBasis<S> {
    pub phi: Array2<S>,
    pub eigenvalues: Vec<S>,
    pub weights: Vec<S>,
    pub blocks: Vec<TrajectoryBlock>,
}

impl<S: Scalar> SpectralBasis<S> {
    pub fn num_samples(&self) -> usize {
        self.phi.nrows()
    }

    pub fn num_columns(&self) -> usize {
        self.phi.ncols()
    }

    /// Weighted inner product of two sample-space vectors.
    pub fn inner(&self, a: &[S], b: &[S]) -> S {
        self.weights
            .iter()
            .zip(a.iter().zip(b.iter()))
            .map(|(&w, (&x, &y))| w * x * y)
            .sum()
    }
}

const RANK_TOLERANCE: f64 = 1e-12;

/// Symmetric eigendecomposition, eigenvalues descending. Solved in f64
/// internally (nalgebra) regardless of `S`.
fn sym_eigh_desc<S: Scalar>(matrix: &Array2<S>) -> (Vec<S>, Array2<S>) {
    let r = matrix.nrows();
    let mut dense = DMatrix::<f64>::zeros(r, r);
    for i in 0..r {
        for j in 0..r {
            dense[(i, j)] = matrix[(i, j)].to_f64_lossy();
        }
    }
    // Exact symmetry keeps the decomposition well behaved.
    let dense = (&dense + dense.transpose()) * 0.5;
    let eig = dense.symmetric_eigen();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("finite eigenvalues")
    });
    let values = order
        .iter()
        .map(|&i| S::from_f64_lossy(eig.eigenvalues[i]))
        .collect();
    let mut vectors = Array2::zeros((r, r));
    for (col, &src) in order.iter().enumerate() {
        for i in 0..r {
            vectors[(i, col)] = S::from_f64_lossy(eig.eigenvectors[(i, src)]);
        }
    }
    (values, vectors)
}

/// Eigenbasis of the normalized kernel operator from its scaled low-rank
/// factor (single trajectory block).
///
/// Solves the r×r weighted reduced problem `Gᵀ·diag(w)·G`, lifts the
/// eigenvectors through `G`, and rescales eigenvalues by the mean weight
/// so they match the spectrum of the doubly stochastic kernel matrix.
/// Columns come out weighted-orthonormal with the sign convention that
/// the first nonzero entry of each column is positive. Requests beyond
/// the numerical rank (eigenvalue below 1e−12) truncate with a warning.
pub fn eigenbasis<S: Scalar>(
    scaled_factor: &Array2<S>,
    num_functions: usize,
    weights: &[S],
    embedded_times: usize,
    num_cells: usize,
) -> Result<SpectralBasis<S>> {
    let n = scaled_factor.nrows();
    let r = scaled_factor.ncols();
    if weights.len() != n {
        return Err(Error::LengthMismatch {
            what: "weights vs factor rows",
            expected: n,
            got: weights.len(),
        });
    }
    if embedded_times * num_cells != n {
        return Err(Error::LengthMismatch {
            what: "block shape vs samples",
            expected: n,
            got: embedded_times * num_cells,
        });
    }
    if num_functions == 0 || num_functions > r {
        return Err(Error::InvalidParameter(format!(
            "basis size {num_functions} must lie in 1..=rank {r}"
        )));
    }
    if let Some(i) = weights.iter().position(|w| !(*w > S::zero())) {
        return Err(Error::InvalidParameter(format!(
            "weights must be positive, got {} at {i}",
            weights[i]
        )));
    }
    let mean_weight = weights.iter().copied().sum::<S>() / S::from_f64_lossy(n as f64);

    // Reduced problem C = Gᵀ·diag(w)·G.
    let mut weighted = scaled_factor.clone();
    for (mut row, &w) in weighted.rows_mut().into_iter().zip(weights.iter()) {
        row.mapv_inplace(|x| x * w);
    }
    let reduced = scaled_factor.t().dot(&weighted);
    let (reduced_vals, reduced_vecs) = sym_eigh_desc(&reduced);

    let rank_floor = S::from_f64_lossy(RANK_TOLERANCE);
    let usable = reduced_vals
        .iter()
        .take_while(|&&lambda| lambda / mean_weight > rank_floor)
        .count();
    let kept = num_functions.min(usable);
    if kept < num_functions {
        log::warn!(
            "requested {num_functions} eigenfunctions but numerical rank supports {kept}; truncating"
        );
    }
    if kept == 0 {
        return Err(Error::DegenerateData(
            "kernel factor has no usable spectrum".into(),
        ));
    }

    let mut eigenvalues = Vec::with_capacity(kept);
    let mut phi = Array2::zeros((n, kept));
    for l in 0..kept {
        let lambda = reduced_vals[l];
        eigenvalues.push(lambda / mean_weight);
        let inv_norm = S::one() / Float::sqrt(lambda);
        let v = reduced_vecs.column(l);
        let mut column = scaled_factor.dot(&v.to_owned());
        column.mapv_inplace(|x| x * inv_norm);
        let flip = column
            .iter()
            .find(|x| **x != S::zero())
            .is_some_and(|x| *x < S::zero());
        if flip {
            column.mapv_inplace(|x| -x);
        }
        phi.column_mut(l).assign(&column);
    }

    Ok(SpectralBasis {
        phi,
        eigenvalues,
        weights: weights.to_vec(),
        blocks: vec![TrajectoryBlock {
            sample_range: 0..n,
            column_range: 0..kept,
            embedded_times,
            num_cells,
        }],
    })
}

/// Stack per-trajectory bases into the block-diagonal joint basis.
///
/// Column `ℓ` of trajectory `i` is zero-padded outside that trajectory's
/// sample block and rescaled by `√I` so the combined columns stay
/// orthonormal under the joint weights `w_s = w_s^{(i)}/I`
/// (`= 1/(I·N_i·M)` for empirical per-trajectory weights). Each input
/// basis may be truncated to `per_traj_l[i]` leading columns.
pub fn assemble_multi_trajectory<S: Scalar>(
    bases: &[SpectralBasis<S>],
    per_traj_l: &[usize],
) -> Result<SpectralBasis<S>> {
    if bases.is_empty() || bases.len() != per_traj_l.len() {
        return Err(Error::InvalidParameter(format!(
            "need one basis per trajectory, got {} bases and {} sizes",
            bases.len(),
            per_traj_l.len()
        )));
    }
    for (i, (basis, &l)) in bases.iter().zip(per_traj_l.iter()).enumerate() {
        if basis.blocks.len() != 1 {
            return Err(Error::InvalidParameter(format!(
                "trajectory {i}: expected a single-block basis, found {} blocks",
                basis.blocks.len()
            )));
        }
        if l == 0 || l > basis.num_columns() {
            return Err(Error::InvalidParameter(format!(
                "trajectory {i}: cannot keep {l} of {} columns",
                basis.num_columns()
            )));
        }
    }
    let count = bases.len();
    let total_samples: usize = bases.iter().map(|b| b.num_samples()).sum();
    let total_columns: usize = per_traj_l.iter().sum();
    let rescale = S::from_f64_lossy(count as f64).sqrt();
    let inv_count = S::one() / S::from_f64_lossy(count as f64);

    let mut phi = Array2::zeros((total_samples, total_columns));
    let mut eigenvalues = Vec::with_capacity(total_columns);
    let mut weights = Vec::with_capacity(total_samples);
    let mut blocks = Vec::with_capacity(count);
    let mut sample_offset = 0;
    let mut column_offset = 0;
    for (basis, &keep) in bases.iter().zip(per_traj_l.iter()) {
        let n = basis.num_samples();
        for l in 0..keep {
            for s in 0..n {
                phi[(sample_offset + s, column_offset + l)] = basis.phi[(s, l)] * rescale;
            }
        }
        eigenvalues.extend(basis.eigenvalues[..keep].iter().copied());
        weights.extend(basis.weights.iter().map(|&w| w * inv_count));
        let src = &basis.blocks[0];
        blocks.push(TrajectoryBlock {
            sample_range: sample_offset..sample_offset + n,
            column_range: column_offset..column_offset + keep,
            embedded_times: src.embedded_times,
            num_cells: src.num_cells,
        });
        sample_offset += n;
        column_offset += keep;
    }

    Ok(SpectralBasis {
        phi,
        eigenvalues,
        weights,
        blocks,
    })
}
