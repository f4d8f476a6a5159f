//! Coarse-grid geometry, spatial averaging, coarse fluxes, exact subgrid
//! fluxes, and the coarse evolution law.
//!
//! The central identity: averaging the fine tendency over each coarse
//! cell equals the coarse tendency driven by coarse face fluxes plus the
//! exact subgrid fluxes `G_m = F_{M_s·m} − F̂_m`. The surrogate model's
//! job is to predict `G` from resolved variables alone.

use crate::error::{Error, Result};
use crate::swe_fv::{face_fluxes, step_modified_euler, Grid1D, SweParams, SweState};
use crate::Scalar;

/// Fine/coarse grid pair with integer averaging ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarsePair<S> {
    fine: Grid1D<S>,
    coarse: Grid1D<S>,
    ratio: usize,
}

impl<S: Scalar> CoarsePair<S> {
    /// Build a coarse grid by merging every `ratio` fine cells.
    pub fn new(fine: Grid1D<S>, ratio: usize) -> Result<Self> {
        if ratio == 0 || fine.num_cells() % ratio != 0 {
            return Err(Error::InvalidParameter(format!(
                "fine cell count {} not divisible by coarsening ratio {ratio}",
                fine.num_cells()
            )));
        }
        let coarse = Grid1D::new(
            fine.num_cells() / ratio,
            fine.domain_min(),
            fine.domain_max(),
        )?;
        Ok(CoarsePair { fine, coarse, ratio })
    }

    pub fn fine(&self) -> &Grid1D<S> {
        &self.fine
    }

    pub fn coarse(&self) -> &Grid1D<S> {
        &self.coarse
    }

    pub fn ratio(&self) -> usize {
        self.ratio
    }

    /// Coarse timestep implied by a fine timestep: `Δt̂ = M_s·Δt`.
    pub fn dt_coarse(&self, dt_fine: S) -> S {
        S::from_f64_lossy(self.ratio as f64) * dt_fine
    }
}

/// Subgrid fluxes at coarse cell left faces.
#[derive(Debug, Clone, PartialEq)]
pub struct SubgridFluxField<S> {
    pub g_h: Vec<S>,
    pub g_q: Vec<S>,
}

impl<S: Scalar> SubgridFluxField<S> {
    pub fn zeros(num_cells: usize) -> Self {
        SubgridFluxField {
            g_h: vec![S::zero(); num_cells],
            g_q: vec![S::zero(); num_cells],
        }
    }

    pub fn num_cells(&self) -> usize {
        self.g_h.len()
    }
}

/// Block-average a fine state onto the coarse grid.
pub fn coarsen_state<S: Scalar>(fine_state: &SweState<S>, pair: &CoarsePair<S>) -> Result<SweState<S>> {
    if fine_state.num_cells() != pair.fine().num_cells() {
        return Err(Error::LengthMismatch {
            what: "fine state vs pair",
            expected: pair.fine().num_cells(),
            got: fine_state.num_cells(),
        });
    }
    let ms = pair.ratio();
    let mc = pair.coarse().num_cells();
    let inv = S::one() / S::from_f64_lossy(ms as f64);
    let avg = |v: &[S]| -> Vec<S> {
        (0..mc)
            .map(|m| {
                let mut acc = S::zero();
                for k in 0..ms {
                    acc += v[ms * m + k];
                }
                acc * inv
            })
            .collect()
    };
    Ok(SweState {
        h: avg(&fine_state.h),
        q: avg(&fine_state.q),
    })
}

/// Coarse face fluxes `F̂_m = llf(û_{m−1}, û_m)` on the coarse grid.
pub fn coarse_flux<S: Scalar>(
    coarse_state: &SweState<S>,
    params: &SweParams<S>,
) -> Result<(Vec<S>, Vec<S>)> {
    face_fluxes(coarse_state, params.froude)
}

/// Exact subgrid fluxes `G_m = F_{M_s·m} − F̂_m`, both flux sets evaluated
/// from the same instantaneous fine state.
pub fn exact_subgrid_flux<S: Scalar>(
    fine_state: &SweState<S>,
    pair: &CoarsePair<S>,
    params: &SweParams<S>,
) -> Result<SubgridFluxField<S>> {
    let (fine_fh, fine_fq) = face_fluxes(fine_state, params.froude)?;
    let coarse_state = coarsen_state(fine_state, pair)?;
    let (hat_fh, hat_fq) = coarse_flux(&coarse_state, params)?;
    let ms = pair.ratio();
    let mc = pair.coarse().num_cells();
    let mut g = SubgridFluxField::zeros(mc);
    for m in 0..mc {
        g.g_h[m] = fine_fh[ms * m] - hat_fh[m];
        g.g_q[m] = fine_fq[ms * m] - hat_fq[m];
    }
    Ok(g)
}

/// Coarse tendency `û̇_m = [(F̂_m+G_m) − (F̂_{m+1}+G_{m+1})]/Δx̂`.
pub fn coarse_rhs<S: Scalar>(
    coarse_state: &SweState<S>,
    subgrid: &SubgridFluxField<S>,
    pair: &CoarsePair<S>,
    params: &SweParams<S>,
) -> Result<SweState<S>> {
    let mc = pair.coarse().num_cells();
    if coarse_state.num_cells() != mc || subgrid.num_cells() != mc {
        return Err(Error::LengthMismatch {
            what: "coarse state/subgrid vs pair",
            expected: mc,
            got: coarse_state.num_cells().min(subgrid.num_cells()),
        });
    }
    let (hat_fh, hat_fq) = coarse_flux(coarse_state, params)?;
    let inv_dx = S::one() / pair.coarse().dx();
    let mut dh = vec![S::zero(); mc];
    let mut dq = vec![S::zero(); mc];
    for m in 0..mc {
        let r = (m + 1) % mc;
        dh[m] = ((hat_fh[m] + subgrid.g_h[m]) - (hat_fh[r] + subgrid.g_h[r])) * inv_dx;
        dq[m] = ((hat_fq[m] + subgrid.g_q[m]) - (hat_fq[r] + subgrid.g_q[r])) * inv_dx;
    }
    Ok(SweState { h: dh, q: dq })
}

/// One coarse modified-Euler step with the subgrid flux held fixed across
/// both stages (the surrogate produces `G` once per coarse step).
pub fn step_coarse<S: Scalar>(
    coarse_state: &SweState<S>,
    subgrid: &SubgridFluxField<S>,
    pair: &CoarsePair<S>,
    params: &SweParams<S>,
) -> Result<SweState<S>> {
    let dt = pair.dt_coarse(params.dt);
    step_modified_euler(coarse_state, dt, |u| coarse_rhs(u, subgrid, pair, params))
}

/// One-parameter family of initial conditions, evaluated at cell centers:
///
/// `h_0(x) = 1 + 0.3(1−δ/2)·sin((2π/L)·3.5(1−δ/2)·x + π/6)`
/// `v_0(x) = 1 + 0.2(1−δ)·sin((2π/L)·3(1−δ)·x)`, `q_0 = h_0·v_0`,
///
/// with `L` the domain length taken from the grid.
pub fn ic_family<S: Scalar>(delta: S, grid: &Grid1D<S>) -> Result<SweState<S>> {
    if !(delta >= S::zero() && delta <= S::one()) {
        return Err(Error::InvalidParameter(format!(
            "initial-condition parameter must lie in [0,1], got {delta}"
        )));
    }
    let length = grid.domain_length();
    let two_pi = S::from_f64_lossy(std::f64::consts::TAU);
    let half = S::from_f64_lossy(0.5);
    let amp_h = S::from_f64_lossy(0.3) * (S::one() - half * delta);
    let wav_h = two_pi / length * S::from_f64_lossy(3.5) * (S::one() - half * delta);
    let phase = S::from_f64_lossy(std::f64::consts::FRAC_PI_6);
    let amp_v = S::from_f64_lossy(0.2) * (S::one() - delta);
    let wav_v = two_pi / length * S::from_f64_lossy(3.0) * (S::one() - delta);

    let n = grid.num_cells();
    let mut h = vec![S::zero(); n];
    let mut q = vec![S::zero(); n];
    for m in 0..n {
        let x = grid.cell_center(m);
        let h0 = S::one() + amp_h * (wav_h * x + phase).sin();
        let v0 = S::one() + amp_v * (wav_v * x).sin();
        h[m] = h0;
        q[m] = h0 * v0;
    }
    Ok(SweState { h, q })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::swe_fv::fine_rhs;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn pair(fine_cells: usize, ratio: usize) -> CoarsePair<f64> {
        CoarsePair::new(Grid1D::new(fine_cells, -25.0, 25.0).unwrap(), ratio).unwrap()
    }

    fn params() -> SweParams<f64> {
        SweParams::new(0.3, 0.01).unwrap()
    }

    fn wavy_state(n: usize, seed: f64) -> SweState<f64> {
        let h: Vec<f64> = (0..n)
            .map(|m| 1.0 + 0.25 * (m as f64 * 0.37 + seed).sin() + 0.1 * (m as f64 * 1.1).cos())
            .collect();
        let q: Vec<f64> = (0..n)
            .map(|m| 0.8 + 0.3 * (m as f64 * 0.53 + 2.0 * seed).cos())
            .collect();
        SweState::new(h, q).unwrap()
    }

    #[test]
    fn pair_geometry() {
        let p = pair(240, 10);
        assert_eq!(p.coarse().num_cells(), 24);
        assert_relative_eq!(p.coarse().dx(), 10.0 * p.fine().dx(), max_relative = 1e-15);
        assert_relative_eq!(p.dt_coarse(0.01), 0.1, max_relative = 1e-15);
    }

    #[test]
    fn pair_rejects_nondivisible_ratio() {
        assert!(CoarsePair::new(Grid1D::new(10, 0.0, 1.0).unwrap(), 3).is_err());
    }

    #[test]
    fn coarsen_constant() {
        let p = pair(8, 2);
        let s = SweState::constant(8, 1.7, -0.2);
        let c = coarsen_state(&s, &p).unwrap();
        assert!(c.h.iter().all(|&x| x == 1.7));
        assert!(c.q.iter().all(|&x| x == -0.2));
    }

    #[test]
    fn coarsen_means() {
        let p = pair(4, 2);
        let s = SweState::new(vec![1.0, 3.0, 2.0, 4.0], vec![0.0, 2.0, -1.0, 1.0]).unwrap();
        let c = coarsen_state(&s, &p).unwrap();
        assert_eq!(c.h, vec![2.0, 3.0]);
        assert_eq!(c.q, vec![1.0, 0.0]);
    }

    #[test]
    fn coarsen_preserves_mean() {
        let p = pair(120, 6);
        let s = wavy_state(120, 0.3);
        let c = coarsen_state(&s, &p).unwrap();
        let mean_fine: f64 = s.h.iter().sum::<f64>() / 120.0;
        let mean_coarse: f64 = c.h.iter().sum::<f64>() / 20.0;
        assert_relative_eq!(mean_fine, mean_coarse, max_relative = 1e-14);
    }

    #[test]
    fn coarse_flux_matches_fine_at_ratio_one() {
        let p = pair(16, 1);
        let s = wavy_state(16, 1.0);
        let c = coarsen_state(&s, &p).unwrap();
        assert_eq!(c, s);
        let (fh, fq) = coarse_flux(&c, &params()).unwrap();
        let (gh, gq) = face_fluxes(&s, params().froude).unwrap();
        assert_eq!(fh, gh);
        assert_eq!(fq, gq);
    }

    #[test]
    fn subgrid_vanishes_on_constant_state() {
        let p = pair(40, 5);
        let s = SweState::constant(40, 1.1, 0.6);
        let g = exact_subgrid_flux(&s, &p, &params()).unwrap();
        assert!(g.g_h.iter().all(|&x| x.abs() < 1e-15));
        assert!(g.g_q.iter().all(|&x| x.abs() < 1e-15));
    }

    #[test]
    fn subgrid_vanishes_at_ratio_one() {
        let p = pair(16, 1);
        let s = wavy_state(16, 0.7);
        let g = exact_subgrid_flux(&s, &p, &params()).unwrap();
        assert!(g.g_h.iter().all(|&x| x == 0.0));
        assert!(g.g_q.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn subgrid_matches_face_by_face_oracle() {
        let p = pair(60, 6);
        let s = wavy_state(60, 0.1);
        let g = exact_subgrid_flux(&s, &p, &params()).unwrap();
        // Oracle: evaluate both flux sets independently.
        let (fine_fh, fine_fq) = face_fluxes(&s, params().froude).unwrap();
        let c = coarsen_state(&s, &p).unwrap();
        let (hat_fh, hat_fq) = face_fluxes(&c, params().froude).unwrap();
        for m in 0..10 {
            assert_relative_eq!(g.g_h[m], fine_fh[6 * m] - hat_fh[m], epsilon = 1e-13);
            assert_relative_eq!(g.g_q[m], fine_fq[6 * m] - hat_fq[m], epsilon = 1e-13);
        }
        assert!(g.g_h.iter().any(|&x| x.abs() > 1e-6));
    }

    #[test]
    fn coarse_rhs_zero_on_constant_without_subgrid() {
        let p = pair(40, 5);
        let c = SweState::constant(8, 1.0, 0.5);
        let rhs = coarse_rhs(&c, &SubgridFluxField::zeros(8), &p, &params()).unwrap();
        assert!(rhs.h.iter().all(|&x| x == 0.0));
        assert!(rhs.q.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn coarse_rhs_telescopes() {
        let p = pair(40, 5);
        let c = wavy_state(8, 0.9);
        let mut g = SubgridFluxField::zeros(8);
        for m in 0..8 {
            g.g_h[m] = (m as f64 * 0.77).sin();
            g.g_q[m] = (m as f64 * 0.31).cos();
        }
        let rhs = coarse_rhs(&c, &g, &p, &params()).unwrap();
        assert!(rhs.h.iter().sum::<f64>().abs() < 1e-13);
        assert!(rhs.q.iter().sum::<f64>().abs() < 1e-13);
    }

    #[test]
    fn closure_consistency_identity() {
        // coarsen(fine_rhs(u)) == coarse_rhs(coarsen(u), exact_subgrid(u))
        let p = pair(240, 10);
        let prm = params();
        for seed in 0..5 {
            let s = wavy_state(240, seed as f64 * 0.41);
            let lhs = coarsen_state(&fine_rhs(&s, p.fine(), &prm).unwrap(), &p).unwrap();
            let g = exact_subgrid_flux(&s, &p, &prm).unwrap();
            let rhs = coarse_rhs(&coarsen_state(&s, &p).unwrap(), &g, &p, &prm).unwrap();
            for m in 0..24 {
                assert_relative_eq!(lhs.h[m], rhs.h[m], max_relative = 1e-12, epsilon = 1e-13);
                assert_relative_eq!(lhs.q[m], rhs.q[m], max_relative = 1e-12, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn coarse_translation_equivariance() {
        let p = pair(48, 4);
        let prm = params();
        let s = wavy_state(48, 0.6);
        let shifted = s.shifted(4); // one coarse cell
        let c = coarsen_state(&s, &p).unwrap();
        let c_shifted = coarsen_state(&shifted, &p).unwrap();
        assert_eq!(c.shifted(1), c_shifted);
        let g = exact_subgrid_flux(&s, &p, &prm).unwrap();
        let g_shifted = exact_subgrid_flux(&shifted, &p, &prm).unwrap();
        for m in 0..12 {
            assert_eq!(g.g_h[m], g_shifted.g_h[(m + 1) % 12]);
            assert_eq!(g.g_q[m], g_shifted.g_q[(m + 1) % 12]);
        }
    }

    #[test]
    fn ic_family_delta_one_closed_form() {
        let g = Grid1D::new(64, -25.0, 25.0).unwrap();
        let s = ic_family(1.0, &g).unwrap();
        for m in 0..64 {
            let x = g.cell_center(m);
            let h_expect = 1.0
                + 0.15 * ((std::f64::consts::TAU / 50.0) * 1.75 * x + std::f64::consts::FRAC_PI_6).sin();
            assert_relative_eq!(s.h[m], h_expect, max_relative = 1e-14);
            // v0 ≡ 1 at δ=1, so q = h
            assert_relative_eq!(s.q[m], s.h[m], max_relative = 1e-14);
        }
    }

    #[test]
    fn ic_family_positive_heights() {
        let g = Grid1D::new(97, -25.0, 25.0).unwrap();
        for k in 0..=10 {
            let s = ic_family(k as f64 / 10.0, &g).unwrap();
            assert!(s.h.iter().all(|&h| h > 0.0));
        }
    }

    #[test]
    fn ic_family_rejects_out_of_range() {
        let g = Grid1D::new(16, -25.0, 25.0).unwrap();
        assert!(ic_family(-0.1, &g).is_err());
        assert!(ic_family(1.1, &g).is_err());
    }

    #[test]
    fn zero_closure_is_more_diffusive_than_exact() {
        // Spatial variance decays faster with G ≡ 0 than with exact G.
        let p = pair(240, 10);
        let fine_grid = p.fine().clone();
        let dt = 0.1 * fine_grid.dx();
        let prm = SweParams::new(SweParams::<f64>::froude_from_gravity(9.81), dt).unwrap();
        let mut fine = ic_family(0.25, &fine_grid).unwrap();
        // Short spin-up so the field has structure at the coarse scale.
        for _ in 0..200 {
            fine = step_modified_euler(&fine, dt, |u| fine_rhs(u, &fine_grid, &prm)).unwrap();
        }
        let variance = |s: &SweState<f64>| {
            let n = s.h.len() as f64;
            let mean = s.h.iter().sum::<f64>() / n;
            s.h.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n
        };
        let mut exact = coarsen_state(&fine, &p).unwrap();
        let mut zero = exact.clone();
        let steps = 40;
        for _ in 0..steps {
            let g = exact_subgrid_flux(&fine, &p, &prm).unwrap();
            exact = step_coarse(&exact, &g, &p, &prm).unwrap();
            zero = step_coarse(&zero, &SubgridFluxField::zeros(24), &p, &prm).unwrap();
            for _ in 0..p.ratio() {
                fine = step_modified_euler(&fine, dt, |u| fine_rhs(u, &fine_grid, &prm)).unwrap();
            }
        }
        let v_truth = variance(&coarsen_state(&fine, &p).unwrap());
        let v_exact = variance(&exact);
        let v_zero = variance(&zero);
        assert!(
            v_zero < v_exact,
            "zero-closure variance {v_zero} should decay below exact-closure variance {v_exact} (truth {v_truth})"
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn closure_identity_random_states(seed in 0u64..1000) {
            let p = pair(120, 10);
            let prm = params();
            let h: Vec<f64> = (0..120)
                .map(|m| 1.0 + 0.4 * ((m as f64 + seed as f64) * 0.61).sin())
                .collect();
            let q: Vec<f64> = (0..120)
                .map(|m| 0.5 * ((m as f64 * 1.7 + seed as f64) * 0.23).cos())
                .collect();
            let s = SweState::new(h, q).unwrap();
            let lhs = coarsen_state(&fine_rhs(&s, p.fine(), &prm).unwrap(), &p).unwrap();
            let g = exact_subgrid_flux(&s, &p, &prm).unwrap();
            let rhs = coarse_rhs(&coarsen_state(&s, &p).unwrap(), &g, &p, &prm).unwrap();
            for m in 0..12 {
                let scale = lhs.h[m].abs().max(rhs.h[m].abs()).max(1.0);
                prop_assert!((lhs.h[m] - rhs.h[m]).abs() <= 1e-12 * scale);
                let scale_q = lhs.q[m].abs().max(rhs.q[m].abs()).max(1.0);
                prop_assert!((lhs.q[m] - rhs.q[m]).abs() <= 1e-12 * scale_q);
            }
        }
    }
}
