//! Delay-embedding and stencil feature maps, Gaussian kernels with tuned
//! (and variable) bandwidth, and bistochastic normalization of kernel
//! matrices.
//!
//! Product samples are indexed time-major: the sample for embedded time
//! `n` and coarse cell `m` sits at flat row `n·M + m`. Delay vectors and
//! stencil vectors are rows of dense matrices in that order.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::swe_fv::SweState;
use crate::Scalar;

/// Identifies one product sample: trajectory, embedded time index, cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProductSampleIndex {
    pub traj: usize,
    pub time: usize,
    pub cell: usize,
}

impl ProductSampleIndex {
    /// Flat row within a trajectory block of `num_cells` columns.
    pub fn flat(&self, num_cells: usize) -> usize {
        self.time * num_cells + self.cell
    }
}

/// Bandwidth of a Gaussian kernel, optionally with per-sample scale
/// factors (variable bandwidth).
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthSpec<S> {
    pub epsilon: S,
    pub variable_scale: Option<Vec<S>>,
}

impl<S: Scalar> BandwidthSpec<S> {
    pub fn fixed(epsilon: S) -> Result<Self> {
        if !(epsilon > S::zero()) {
            return Err(Error::InvalidParameter(format!(
                "bandwidth must be positive, got {epsilon}"
            )));
        }
        Ok(BandwidthSpec {
            epsilon,
            variable_scale: None,
        })
    }

    pub fn scale(&self, sample: usize) -> S {
        self.variable_scale
            .as_ref()
            .map_or_else(S::one, |b| b[sample])
    }
}

pub fn squared_distance<S: Scalar>(a: ArrayView1<S>, b: ArrayView1<S>) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = S::zero();
    for (&x, &y) in a.iter().zip(b.iter()) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

/// Pointwise time-delay embedding of a resolved trajectory.
///
/// A trajectory of `T` coarse states over `M` cells yields
/// `(T − Q + 1)·M` delay vectors of length `2Q`. Row `n·M + m` holds the
/// per-cell history `(h, q)` at embedded time `n`, newest first: the
/// entries for delay `d` are the fields at original time `n + Q − 1 − d`.
pub fn delay_embed<S: Scalar>(resolved: &[SweState<S>], delays: usize) -> Result<Array2<S>> {
    if delays == 0 {
        return Err(Error::InvalidParameter("delay count must be >= 1".into()));
    }
    if resolved.len() < delays {
        return Err(Error::TrajectoryTooShort {
            len: resolved.len(),
            delays,
        });
    }
    let num_cells = resolved[0].num_cells();
    if resolved.iter().any(|s| s.num_cells() != num_cells) {
        return Err(Error::LengthMismatch {
            what: "trajectory states",
            expected: num_cells,
            got: 0,
        });
    }
    let embedded_times = resolved.len() - delays + 1;
    let mut out = Array2::zeros((embedded_times * num_cells, 2 * delays));
    for n in 0..embedded_times {
        for m in 0..num_cells {
            let mut row = out.row_mut(n * num_cells + m);
            for d in 0..delays {
                let state = &resolved[n + delays - 1 - d];
                row[2 * d] = state.h[m];
                row[2 * d + 1] = state.q[m];
            }
        }
    }
    Ok(out)
}

/// Stencil vectors for one resolved state: row `m` concatenates the
/// `(h, q)` pairs at the `J` nearest spatial neighbors of cell `m`
/// (periodic), in left-to-right order.
pub fn stencil_vectors<S: Scalar>(state: &SweState<S>, stencil_width: usize) -> Result<Array2<S>> {
    if stencil_width % 2 == 0 || stencil_width == 0 {
        return Err(Error::InvalidParameter(format!(
            "stencil width must be odd and positive, got {stencil_width}"
        )));
    }
    let num_cells = state.num_cells();
    let half = stencil_width / 2;
    let mut out = Array2::zeros((num_cells, 2 * stencil_width));
    for m in 0..num_cells {
        let mut row = out.row_mut(m);
        for k in 0..stencil_width {
            let cell = (m + num_cells + k - half) % num_cells;
            row[2 * k] = state.h[cell];
            row[2 * k + 1] = state.q[cell];
        }
    }
    Ok(out)
}

/// Basis kernel `exp(−‖a−b‖²/(ε·Q))`.
pub fn gaussian_kernel<S: Scalar>(a: ArrayView1<S>, b: ArrayView1<S>, epsilon: S, delays: usize) -> S {
    let d2 = squared_distance(a, b);
    (-d2 / (epsilon * S::from_f64_lossy(delays as f64))).exp()
}

/// Conditioning kernel `exp(−‖a−b‖²/(ε′·J·scale_a·scale_b))`; with unit
/// scales this is the fixed-bandwidth form.
pub fn conditioning_kernel<S: Scalar>(
    a: ArrayView1<S>,
    b: ArrayView1<S>,
    epsilon: S,
    stencil_width: usize,
    scale_a: S,
    scale_b: S,
) -> S {
    let d2 = squared_distance(a, b);
    (-d2 / (epsilon * S::from_f64_lossy(stencil_width as f64) * scale_a * scale_b)).exp()
}

/// One kernel-matrix row: `k(data[i], data[j])` for all `j`.
pub fn kernel_row<S: Scalar>(data: &Array2<S>, i: usize, epsilon: S, delays: usize) -> Vec<S> {
    let a = data.row(i);
    (0..data.nrows())
        .map(|j| gaussian_kernel(a, data.row(j), epsilon, delays))
        .collect()
}

/// Dense kernel matrix over all sample rows (small instances).
pub fn dense_kernel_matrix<S: Scalar>(data: &Array2<S>, epsilon: S, delays: usize) -> Array2<S> {
    let n = data.nrows();
    let mut k = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            k[(i, j)] = gaussian_kernel(data.row(i), data.row(j), epsilon, delays);
        }
    }
    k
}

/// Squared distances over the ordered pair set `(i, j) ∈ [n]²`, the same
/// index set as the kernel double sum (self-pairs included — their zero
/// distances are what caps the bandwidth sweep's slope at small ε).
/// Uniformly subsampled with replacement when `n²` exceeds `max_pairs`;
/// the seed makes the subsample reproducible.
pub fn pairwise_sqdist_sample<S: Scalar>(
    data: &Array2<S>,
    max_pairs: usize,
    seed: u64,
) -> Vec<S> {
    let n = data.nrows();
    if n < 2 {
        return Vec::new();
    }
    let pairs: Vec<(usize, usize)> = if n * n <= max_pairs {
        (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect()
    } else {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        (0..max_pairs)
            .map(|_| (rng.gen_range(0..n), rng.gen_range(0..n)))
            .collect()
    };
    pairs
        .par_iter()
        .map(|&(i, j)| squared_distance(data.row(i), data.row(j)))
        .collect()
}

/// Number of grid points swept by `tune_bandwidth`.
pub const BANDWIDTH_GRID_POINTS: usize = 48;

/// Bandwidth calibration by the steepest-growth criterion: sweep ε over a
/// log grid spanning `[1e−6, 1e6]` times the median squared distance,
/// compute `T(ε) = Σ exp(−d²/(ε·D))`, and return the grid ε maximizing
/// `d log T / d log ε` (centered differences in log-log).
///
/// When all distances are equal the slope is monotone decreasing in ε and
/// the sweep returns its first interior grid point (the smallest ε
/// evaluated by the centered difference).
pub fn tune_bandwidth<S: Scalar>(sqdists: &[S], denominator: S) -> Result<S> {
    if sqdists.is_empty() {
        return Err(Error::DegenerateData("empty distance sample".into()));
    }
    if sqdists.iter().any(|d| !d.is_finite() || *d < S::zero()) {
        return Err(Error::DegenerateData(
            "distance sample contains negative or non-finite entries".into(),
        ));
    }
    if !sqdists.iter().any(|d| *d > S::zero()) {
        return Err(Error::DegenerateData(
            "all pairwise distances are zero".into(),
        ));
    }
    let mut sorted: Vec<S> = sqdists.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    // Median of the positive regime; zeros (duplicate samples) would drag
    // the grid toward degenerate scales.
    let positive_from = sorted.iter().position(|d| *d > S::zero()).unwrap();
    let positive = &sorted[positive_from..];
    let median = positive[positive.len() / 2];

    let lo = median * S::from_f64_lossy(1e-6);
    let hi = median * S::from_f64_lossy(1e6);
    let log_lo = lo.ln();
    let log_hi = hi.ln();
    let count = BANDWIDTH_GRID_POINTS;
    let step = (log_hi - log_lo) / S::from_f64_lossy((count - 1) as f64);

    // log T(ε) via log-sum-exp so tiny ε cannot underflow to log(0).
    let log_t: Vec<S> = (0..count)
        .map(|k| {
            let eps = (log_lo + step * S::from_f64_lossy(k as f64)).exp();
            let scale = eps * denominator;
            let max_exponent = -sorted[0] / scale;
            let sum: S = sorted
                .iter()
                .map(|&d| (-d / scale - max_exponent).exp())
                .sum();
            max_exponent + sum.ln()
        })
        .collect();

    let mut best_k = 1;
    let mut best_slope = S::neg_infinity();
    for k in 1..count - 1 {
        let slope = (log_t[k + 1] - log_t[k - 1]) / (step + step);
        if slope > best_slope {
            best_slope = slope;
            best_k = k;
        }
    }
    Ok((log_lo + step * S::from_f64_lossy(best_k as f64)).exp())
}

/// Per-sample bandwidth scale factors from a pilot density estimate:
/// `p_i = (1/N)Σ_j exp(−‖w_i−w_j‖²/(ε_pilot·J))`,
/// `b_i = (p_i / geometric_mean(p))^(−1/2)`.
///
/// The geometric mean of the returned scales is 1 by construction.
pub fn variable_scales<S: Scalar>(
    stencils: &Array2<S>,
    eps_pilot: S,
    stencil_width: usize,
) -> Result<Vec<S>> {
    let n = stencils.nrows();
    if n == 0 {
        return Err(Error::DegenerateData("no stencil samples".into()));
    }
    let scale = eps_pilot * S::from_f64_lossy(stencil_width as f64);
    let log_density: Vec<S> = (0..n)
        .into_par_iter()
        .map(|i| {
            let a = stencils.row(i);
            let mut acc = S::zero();
            for j in 0..n {
                acc += (-squared_distance(a, stencils.row(j)) / scale).exp();
            }
            (acc / S::from_f64_lossy(n as f64)).ln()
        })
        .collect();
    let mean_log = log_density.iter().copied().sum::<S>() / S::from_f64_lossy(n as f64);
    let half = S::from_f64_lossy(0.5);
    Ok(log_density
        .iter()
        .map(|&lp| (-(lp - mean_log) * half).exp())
        .collect())
}

/// Pilot density of an out-of-sample point against the training stencils,
/// used to extend the variable-bandwidth scale to query states.
pub fn pilot_density<S: Scalar>(
    query: ArrayView1<S>,
    stencils: &Array2<S>,
    eps_pilot: S,
    stencil_width: usize,
) -> S {
    let n = stencils.nrows();
    let scale = eps_pilot * S::from_f64_lossy(stencil_width as f64);
    let mut acc = S::zero();
    for j in 0..n {
        acc += (-squared_distance(query, stencils.row(j)) / scale).exp();
    }
    acc / S::from_f64_lossy(n as f64)
}

pub const SINKHORN_TOLERANCE: f64 = 1e-10;
pub const SINKHORN_MAX_ITERATIONS: usize = 500;

/// Result of the symmetric Sinkhorn scaling of a low-rank kernel factor.
#[derive(Debug, Clone)]
pub struct BistochasticFactor<S> {
    /// Scaled factor `G = diag(v)·F`; `G·Gᵀ` is doubly stochastic.
    pub factor: Array2<S>,
    /// Scaling vector `v`.
    pub scaling: Vec<S>,
    pub iterations: usize,
    /// Max row-sum deviation at convergence.
    pub residual: f64,
}

/// Symmetric Sinkhorn-Knopp scaling through a low-rank factor: finds
/// `v > 0` with `diag(v)·F·Fᵀ·diag(v)` having unit row sums and returns
/// `G = diag(v)·F`. Iterates `v ← sqrt(v ⊘ (F·Fᵀ·v))` until the max
/// row-sum deviation drops below 1e−10 (or fails after 500 iterations).
pub fn bistochastic_normalize<S: Scalar>(factor: &Array2<S>) -> Result<BistochasticFactor<S>> {
    let n = factor.nrows();
    if n == 0 {
        return Err(Error::DegenerateData("empty kernel factor".into()));
    }
    let tol = S::from_f64_lossy(SINKHORN_TOLERANCE);
    let mut v: Array1<S> = Array1::ones(n);
    let mut residual = S::infinity();
    for iteration in 0..=SINKHORN_MAX_ITERATIONS {
        let kv = factor.dot(&factor.t().dot(&v));
        if let Some(i) = kv.iter().position(|x| !(*x > S::zero())) {
            return Err(Error::DegenerateData(format!(
                "kernel row sum nonpositive at sample {i}; kernel must be entrywise positive"
            )));
        }
        residual = v
            .iter()
            .zip(kv.iter())
            .map(|(&vi, &kvi)| (vi * kvi - S::one()).abs())
            .fold(S::zero(), S::max);
        if residual < tol {
            let mut scaled = factor.clone();
            for (mut row, &vi) in scaled.rows_mut().into_iter().zip(v.iter()) {
                row.mapv_inplace(|x| x * vi);
            }
            return Ok(BistochasticFactor {
                factor: scaled,
                scaling: v.to_vec(),
                iterations: iteration,
                residual: residual.to_f64_lossy(),
            });
        }
        v = ndarray::Zip::from(&v).and(&kv).map_collect(|&vi, &kvi| (vi / kvi).sqrt());
    }
    Err(Error::SinkhornNonConvergence {
        iterations: SINKHORN_MAX_ITERATIONS,
        residual: residual.to_f64_lossy(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn states(values: &[(f64, f64)], cells: usize) -> Vec<SweState<f64>> {
        values
            .iter()
            .map(|&(h, q)| SweState::constant(cells, h, q))
            .collect()
    }

    #[test]
    fn delay_embed_single_delay_is_current_state() {
        let traj = vec![
            SweState::new(vec![1.0, 2.0], vec![0.1, 0.2]).unwrap(),
            SweState::new(vec![3.0, 4.0], vec![0.3, 0.4]).unwrap(),
        ];
        let e = delay_embed(&traj, 1).unwrap();
        assert_eq!(e.nrows(), 4);
        assert_eq!(e.row(0).to_vec(), vec![1.0, 0.1]);
        assert_eq!(e.row(3).to_vec(), vec![4.0, 0.4]);
    }

    #[test]
    fn delay_embed_sample_count() {
        let traj: Vec<SweState<f64>> = (0..163)
            .map(|t| SweState::constant(3, 1.0 + t as f64, 0.0))
            .collect();
        let e = delay_embed(&traj, 64).unwrap();
        assert_eq!(e.nrows(), 100 * 3);
        assert_eq!(e.ncols(), 128);
    }

    #[test]
    fn delay_embed_newest_first() {
        let traj = states(&[(10.0, 0.1), (20.0, 0.2), (30.0, 0.3)], 1);
        let e = delay_embed(&traj, 3).unwrap();
        assert_eq!(e.row(0).to_vec(), vec![30.0, 0.3, 20.0, 0.2, 10.0, 0.1]);
    }

    #[test]
    fn delay_embed_constant_trajectory() {
        let traj = states(&[(2.0, 1.0); 5], 2);
        let e = delay_embed(&traj, 4).unwrap();
        for row in e.rows() {
            for d in 0..4 {
                assert_eq!(row[2 * d], 2.0);
                assert_eq!(row[2 * d + 1], 1.0);
            }
        }
    }

    #[test]
    fn delay_embed_rejects_short_trajectory() {
        let traj = states(&[(1.0, 0.0); 3], 2);
        assert!(matches!(
            delay_embed(&traj, 4),
            Err(Error::TrajectoryTooShort { len: 3, delays: 4 })
        ));
    }

    #[test]
    fn delay_embedding_is_shift_invariant() {
        // W_Q((Γu, Γx)) = W_Q((u, x)) exactly: shifting the trajectory by k
        // cells permutes rows within each embedded time.
        let cells = 6;
        let traj: Vec<SweState<f64>> = (0..5)
            .map(|t| {
                let h: Vec<f64> = (0..cells)
                    .map(|m| 1.0 + 0.3 * ((m as f64 + t as f64) * 0.9).sin())
                    .collect();
                let q: Vec<f64> = (0..cells).map(|m| 0.2 * (m as f64 * 1.3 - t as f64).cos()).collect();
                SweState::new(h, q).unwrap()
            })
            .collect();
        let shifted: Vec<SweState<f64>> = traj.iter().map(|s| s.shifted(2)).collect();
        let e = delay_embed(&traj, 3).unwrap();
        let e_shifted = delay_embed(&shifted, 3).unwrap();
        for n in 0..3 {
            for m in 0..cells {
                let src = ProductSampleIndex { traj: 0, time: n, cell: m };
                let dst = ProductSampleIndex {
                    traj: 0,
                    time: n,
                    cell: (m + 2) % cells,
                };
                assert_eq!(
                    e.row(src.flat(cells)).to_vec(),
                    e_shifted.row(dst.flat(cells)).to_vec()
                );
            }
        }
    }

    #[test]
    fn stencil_layout_and_wrap() {
        let s = SweState::new(vec![1.0, 2.0, 3.0, 4.0], vec![10.0, 11.0, 12.0, 13.0]).unwrap();
        let w = stencil_vectors(&s, 3).unwrap();
        // cell 0: neighbors 3,0,1
        assert_eq!(w.row(0).to_vec(), vec![4.0, 13.0, 1.0, 10.0, 2.0, 11.0]);
        // cell 3: neighbors 2,3,0
        assert_eq!(w.row(3).to_vec(), vec![3.0, 12.0, 4.0, 13.0, 1.0, 10.0]);
    }

    #[test]
    fn gaussian_kernel_basics() {
        let a = array![1.0, 2.0, 3.0, 4.0];
        let b = array![1.0, 2.0, 3.0, 4.0];
        assert_eq!(gaussian_kernel(a.view(), b.view(), 0.5, 2), 1.0);
        // ‖a−b‖² = ε·Q ⇒ e⁻¹
        let c = array![2.0, 2.0, 3.0, 4.0];
        let k = gaussian_kernel(a.view(), c.view(), 0.5, 2);
        assert_relative_eq!(k, (-1.0f64).exp(), max_relative = 1e-15);
    }

    #[test]
    fn gaussian_kernel_symmetry() {
        let a = array![0.3, -0.7, 1.1];
        let b = array![-0.2, 0.4, 0.9];
        assert_eq!(
            gaussian_kernel(a.view(), b.view(), 0.7, 3),
            gaussian_kernel(b.view(), a.view(), 0.7, 3)
        );
    }

    #[test]
    fn conditioning_kernel_unit_scales() {
        let a = array![1.0, 0.0];
        let b = array![0.0, 1.0]; // d² = 2 = ε′·J with ε′=2/5·... pick ε′ = 2/5, J=5
        let k = conditioning_kernel(a.view(), b.view(), 0.4, 5, 1.0, 1.0);
        assert_relative_eq!(k, (-1.0f64).exp(), max_relative = 1e-15);
        assert_eq!(conditioning_kernel(a.view(), a.view(), 0.4, 5, 1.0, 1.0), 1.0);
    }

    #[test]
    fn conditioning_kernel_scale_algebra() {
        // k(a,b; 2,2) = k(a,b; 1,1)^{1/4}
        let a = array![0.5f64, 1.5, -0.5];
        let b = array![0.0f64, 1.0, 0.5];
        let k11 = conditioning_kernel(a.view(), b.view(), 0.3, 3, 1.0, 1.0);
        let k22 = conditioning_kernel(a.view(), b.view(), 0.3, 3, 2.0, 2.0);
        assert_relative_eq!(k22, k11.powf(0.25), max_relative = 1e-13);
    }

    #[test]
    fn tune_bandwidth_two_scale_cloud() {
        // Two well-separated distance scales, with the diagonal zeros a
        // real ordered-pair sample carries. The tuned ε resolves the
        // small scale: within a log-factor below 0.01, far under 100.
        let mut d = vec![0.0; 29];
        d.extend(vec![0.01; 406]);
        d.extend(vec![100.0; 406]);
        let eps = tune_bandwidth(&d, 1.0).unwrap();
        assert!(eps > 0.001 && eps < 100.0, "eps = {eps}");
        // Brute-force slope curve: single interior maximum.
        let log_t = |eps: f64| d.iter().map(|&x| (-x / eps).exp()).sum::<f64>().ln();
        let slopes: Vec<f64> = (1..200)
            .map(|k| {
                let e0 = 1e-5 * (1e9f64).powf((k - 1) as f64 / 199.0);
                let e2 = 1e-5 * (1e9f64).powf((k + 1) as f64 / 199.0);
                (log_t(e2) - log_t(e0)) / (e2.ln() - e0.ln())
            })
            .collect();
        let peak = slopes
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert!(peak > 0 && peak < 198, "interior max expected, got index {peak}");
    }

    #[test]
    fn tune_bandwidth_brute_force_slope_agreement() {
        // Independent slope sweep over a fine grid: the returned ε must be
        // within one coarse-grid step of the brute-force maximizer.
        let d: Vec<f64> = (0..500)
            .map(|k| {
                let t = k as f64 / 499.0;
                if k % 3 == 0 { 0.05 + t } else { 30.0 + 5.0 * t }
            })
            .collect();
        let eps = tune_bandwidth(&d, 2.0).unwrap();
        let log_t = |eps: f64| {
            let s: f64 = d.iter().map(|&x| (-x / (eps * 2.0)).exp()).sum();
            s.ln()
        };
        let mut best = (f64::NEG_INFINITY, 0.0);
        let n = 4800;
        for k in 1..n {
            let e0 = 1e-8 * (1e16f64).powf((k - 1) as f64 / (n - 1) as f64);
            let e2 = 1e-8 * (1e16f64).powf((k + 1) as f64 / (n - 1) as f64);
            let slope = (log_t(e2) - log_t(e0)) / (e2.ln() - e0.ln());
            let e1 = 1e-8 * (1e16f64).powf(k as f64 / (n - 1) as f64);
            if slope > best.0 {
                best = (slope, e1);
            }
        }
        assert!(
            (eps.ln() - best.1.ln()).abs() < 1.0,
            "tuned {eps} vs brute-force {}",
            best.1
        );
    }

    #[test]
    fn tune_bandwidth_scaling_equivariance() {
        let d: Vec<f64> = (1..200).map(|k| 0.1 * k as f64).collect();
        let eps = tune_bandwidth(&d, 3.0).unwrap();
        let scaled: Vec<f64> = d.iter().map(|&x| 25.0 * x).collect();
        let eps_scaled = tune_bandwidth(&scaled, 3.0).unwrap();
        assert_relative_eq!(eps_scaled, 25.0 * eps, max_relative = 1e-12);
    }

    #[test]
    fn tune_bandwidth_equal_distances_returns_first_interior_point() {
        // Monotone decreasing slope c/(εD): steepest growth at the smallest
        // swept ε.
        let d = vec![2.0; 50];
        let eps = tune_bandwidth(&d, 1.0).unwrap();
        let lo: f64 = 2.0 * 1e-6;
        let hi: f64 = 2.0 * 1e6;
        let step = (hi.ln() - lo.ln()) / (BANDWIDTH_GRID_POINTS - 1) as f64;
        let expected = (lo.ln() + step).exp();
        assert_relative_eq!(eps, expected, max_relative = 1e-12);
    }

    #[test]
    fn tune_bandwidth_rejects_degenerate_input() {
        assert!(tune_bandwidth::<f64>(&[], 1.0).is_err());
        assert!(tune_bandwidth(&[0.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn variable_scales_uniform_cloud() {
        // Evenly spread points on a circle: all densities equal, b ≈ 1.
        let n = 40;
        let mut pts = Array2::zeros((n, 2));
        for i in 0..n {
            let t = std::f64::consts::TAU * i as f64 / n as f64;
            pts[(i, 0)] = t.cos();
            pts[(i, 1)] = t.sin();
        }
        let b = variable_scales(&pts, 1.0, 1).unwrap();
        for &bi in &b {
            assert_relative_eq!(bi, 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn variable_scales_geometric_mean_is_one() {
        let mut pts = Array2::zeros((30, 1));
        for i in 0..30 {
            pts[(i, 0)] = (i as f64 * 0.37).sin() * (1.0 + i as f64 / 10.0);
        }
        let b = variable_scales(&pts, 0.5, 1).unwrap();
        let mean_log: f64 = b.iter().map(|x| x.ln()).sum::<f64>() / 30.0;
        assert!(mean_log.abs() < 1e-12);
    }

    #[test]
    fn variable_scales_isolated_point_gets_larger_scale() {
        // Brute-force pilot densities: a far-away point is less dense.
        let mut pts = Array2::zeros((21, 1));
        for i in 0..20 {
            pts[(i, 0)] = 0.01 * i as f64; // dense cluster
        }
        pts[(20, 0)] = 10.0; // isolated
        let b = variable_scales(&pts, 0.1, 1).unwrap();
        let cluster_max = b[..20].iter().cloned().fold(0.0, f64::max);
        assert!(b[20] > 2.0 * cluster_max, "isolated {} vs cluster {}", b[20], cluster_max);
    }

    #[test]
    fn sinkhorn_fixed_point_on_doubly_stochastic_input() {
        // K = I (factor = I) is already doubly stochastic: v stays 1.
        let f = Array2::<f64>::eye(5);
        let out = bistochastic_normalize(&f).unwrap();
        assert_eq!(out.iterations, 0);
        assert!(out.scaling.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn sinkhorn_2x2_analytic() {
        // K = [[1,a],[a,1]] ⇒ v = [1,1]/√(1+a); use a factor with F·Fᵀ = K.
        let a: f64 = 0.6;
        // Cholesky of K: [[1,0],[a,√(1−a²)]]
        let f = array![[1.0, 0.0], [a, (1.0 - a * a).sqrt()]];
        let out = bistochastic_normalize(&f).unwrap();
        let expect = 1.0 / (1.0 + a).sqrt();
        assert_relative_eq!(out.scaling[0], expect, max_relative = 1e-9);
        assert_relative_eq!(out.scaling[1], expect, max_relative = 1e-9);
        let g = &out.factor;
        let k = g.dot(&g.t());
        assert_relative_eq!(k.row(0).sum(), 1.0, epsilon = 1e-10);
        assert_relative_eq!(k.row(1).sum(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn sinkhorn_row_sums_within_tolerance() {
        // Random-ish PSD factor with positive kernel.
        let n = 24;
        let mut f = Array2::zeros((n, 3));
        for i in 0..n {
            f[(i, 0)] = 1.0;
            f[(i, 1)] = 0.5 * (i as f64 * 0.71).sin();
            f[(i, 2)] = 0.3 * (i as f64 * 0.29).cos();
        }
        let out = bistochastic_normalize(&f).unwrap();
        let k = out.factor.dot(&out.factor.t());
        for i in 0..n {
            assert!((k.row(i).sum() - 1.0).abs() < 1e-10);
        }
        // Symmetric by construction.
        for i in 0..n {
            for j in 0..n {
                assert_eq!(k[(i, j)], k[(j, i)]);
            }
        }
    }

    #[test]
    fn sinkhorn_low_rank_matches_dense_route() {
        // Full-rank factor: scaling the factor equals scaling the dense
        // matrix entrywise. Dense route implemented independently here.
        let n = 16;
        let mut data = Array2::zeros((n, 2));
        for i in 0..n {
            data[(i, 0)] = (i as f64 * 0.4).sin();
            data[(i, 1)] = (i as f64 * 0.9).cos();
        }
        let k = dense_kernel_matrix(&data, 0.8, 1);
        // Dense symmetric Sinkhorn (oracle).
        let mut v = vec![1.0f64; n];
        for _ in 0..2000 {
            let kv: Vec<f64> = (0..n)
                .map(|i| (0..n).map(|j| k[(i, j)] * v[j]).sum())
                .collect();
            let res = (0..n)
                .map(|i| (v[i] * kv[i] - 1.0).abs())
                .fold(0.0, f64::max);
            if res < 1e-13 {
                break;
            }
            for i in 0..n {
                v[i] = (v[i] / kv[i]).sqrt();
            }
        }
        // Low-rank route with an exact full-rank Cholesky factor of K.
        let factor = crate::spectral::pivoted_cholesky(
            |i| k.row(i).to_vec(),
            &vec![1.0; n],
            n,
            crate::spectral::PivotRule::Greedy,
        )
        .unwrap();
        let out = bistochastic_normalize(&factor.factor).unwrap();
        let k_lr = out.factor.dot(&out.factor.t());
        for i in 0..n {
            for j in 0..n {
                let dense = v[i] * k[(i, j)] * v[j];
                assert!(
                    (k_lr[(i, j)] - dense).abs() < 1e-9,
                    "entry ({i},{j}): {} vs {}",
                    k_lr[(i, j)],
                    dense
                );
            }
        }
    }
}
