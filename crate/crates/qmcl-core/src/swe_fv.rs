//! Fine-grid finite-volume solver for the 1-D periodic shallow water
//! equations: the ground-truth dynamics generator.
//!
//! State variables are cell-averaged height `h` and momentum `q = h·v`.
//! Faces carry local Lax-Friedrichs fluxes; time integration is the
//! modified Euler method (two-stage Runge-Kutta). The face flux `F_m`
//! lives on the LEFT face of cell `m`, with periodic wrap
//! `F_{num_cells} = F_0`.

use crate::error::{Error, Result};
use crate::Scalar;

/// Uniform periodic 1-D grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid1D<S> {
    num_cells: usize,
    domain_min: S,
    domain_max: S,
    dx: S,
}

impl<S: Scalar> Grid1D<S> {
    pub fn new(num_cells: usize, domain_min: S, domain_max: S) -> Result<Self> {
        if num_cells < 2 {
            return Err(Error::InvalidParameter(format!(
                "grid needs at least 2 cells, got {num_cells}"
            )));
        }
        if domain_max <= domain_min {
            return Err(Error::InvalidParameter(format!(
                "empty domain [{domain_min}, {domain_max}]"
            )));
        }
        let dx = (domain_max - domain_min) / S::from_f64_lossy(num_cells as f64);
        Ok(Grid1D {
            num_cells,
            domain_min,
            domain_max,
            dx,
        })
    }

    pub fn num_cells(&self) -> usize {
        self.num_cells
    }

    pub fn dx(&self) -> S {
        self.dx
    }

    pub fn domain_min(&self) -> S {
        self.domain_min
    }

    pub fn domain_max(&self) -> S {
        self.domain_max
    }

    pub fn domain_length(&self) -> S {
        self.domain_max - self.domain_min
    }

    /// Center of cell `m`: `domain_min + (m + 1/2)·dx`.
    pub fn cell_center(&self, m: usize) -> S {
        self.domain_min + (S::from_f64_lossy(m as f64) + S::from_f64_lossy(0.5)) * self.dx
    }

    pub fn cell_centers(&self) -> Vec<S> {
        (0..self.num_cells).map(|m| self.cell_center(m)).collect()
    }
}

/// Height and momentum fields on a grid at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct SweState<S> {
    pub h: Vec<S>,
    pub q: Vec<S>,
}

impl<S: Scalar> SweState<S> {
    pub fn new(h: Vec<S>, q: Vec<S>) -> Result<Self> {
        if h.len() != q.len() {
            return Err(Error::LengthMismatch {
                what: "SweState fields",
                expected: h.len(),
                got: q.len(),
            });
        }
        let state = SweState { h, q };
        state.validate()?;
        Ok(state)
    }

    pub fn constant(num_cells: usize, h: S, q: S) -> Self {
        SweState {
            h: vec![h; num_cells],
            q: vec![q; num_cells],
        }
    }

    pub fn num_cells(&self) -> usize {
        self.h.len()
    }

    /// All heights strictly positive and every entry finite.
    pub fn validate(&self) -> Result<()> {
        for (m, &h) in self.h.iter().enumerate() {
            if !(h > S::zero()) {
                return Err(Error::NonPositiveHeight {
                    cell: m,
                    value: h.to_f64_lossy(),
                });
            }
            if !h.is_finite() {
                return Err(Error::DegenerateData(format!("non-finite height at cell {m}")));
            }
        }
        if let Some(m) = self.q.iter().position(|q| !q.is_finite()) {
            return Err(Error::DegenerateData(format!("non-finite momentum at cell {m}")));
        }
        Ok(())
    }

    /// Circular shift by `k` cells: cell `m` of the result holds cell
    /// `m - k` (mod n) of the input.
    pub fn shifted(&self, k: usize) -> Self {
        let n = self.num_cells();
        let shift = |v: &[S]| -> Vec<S> { (0..n).map(|m| v[(m + n - k % n) % n]).collect() };
        SweState {
            h: shift(&self.h),
            q: shift(&self.q),
        }
    }

    /// Flat `[h..., q...]` vector of length `2·num_cells`.
    pub fn to_flat(&self) -> Vec<S> {
        let mut out = Vec::with_capacity(2 * self.num_cells());
        out.extend_from_slice(&self.h);
        out.extend_from_slice(&self.q);
        out
    }

    pub fn from_flat(flat: &[S]) -> Result<Self> {
        if flat.len() % 2 != 0 {
            return Err(Error::LengthMismatch {
                what: "flat state vector",
                expected: flat.len() + 1,
                got: flat.len(),
            });
        }
        let m = flat.len() / 2;
        Ok(SweState {
            h: flat[..m].to_vec(),
            q: flat[m..].to_vec(),
        })
    }
}

/// Physical parameters and timestep of the solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweParams<S> {
    pub froude: S,
    pub dt: S,
}

impl<S: Scalar> SweParams<S> {
    pub fn new(froude: S, dt: S) -> Result<Self> {
        if !(froude > S::zero()) || !(dt > S::zero()) {
            return Err(Error::InvalidParameter(format!(
                "froude and dt must be positive, got Fr={froude}, dt={dt}"
            )));
        }
        Ok(SweParams { froude, dt })
    }

    /// Froude number for gravity `g`: `Fr = 1/sqrt(2g)`.
    pub fn froude_from_gravity(g: S) -> S {
        S::one() / (S::from_f64_lossy(2.0) * g).sqrt()
    }
}

/// Physical flux `f(u) = (q, q²/h + ½·Fr⁻²·h²)`.
pub fn physical_flux<S: Scalar>(h: S, q: S, froude: S) -> Result<(S, S)> {
    if !(h > S::zero()) {
        return Err(Error::NonPositiveHeight {
            cell: 0,
            value: h.to_f64_lossy(),
        });
    }
    let half = S::from_f64_lossy(0.5);
    let flux_q = q * q / h + half * (h * h) / (froude * froude);
    Ok((q, flux_q))
}

/// Local wavespeed bound `λ = max(|q/h| + Fr⁻¹·√h)` over the two states.
pub fn llf_wavespeed<S: Scalar>(left: (S, S), right: (S, S), froude: S) -> Result<S> {
    let speed = |(h, q): (S, S)| -> Result<S> {
        if !(h > S::zero()) {
            return Err(Error::NonPositiveHeight {
                cell: 0,
                value: h.to_f64_lossy(),
            });
        }
        Ok((q / h).abs() + h.sqrt() / froude)
    };
    Ok(speed(left)?.max(speed(right)?))
}

/// Local Lax-Friedrichs flux at the face between `left` and `right`:
/// `F = ½[f(u_L)+f(u_R)] − (λ/2)(u_R − u_L)`.
pub fn llf_flux<S: Scalar>(left: (S, S), right: (S, S), froude: S) -> Result<(S, S)> {
    let half = S::from_f64_lossy(0.5);
    let lambda = llf_wavespeed(left, right, froude)?;
    let (fl_h, fl_q) = physical_flux(left.0, left.1, froude)?;
    let (fr_h, fr_q) = physical_flux(right.0, right.1, froude)?;
    let f_h = half * (fl_h + fr_h) - half * lambda * (right.0 - left.0);
    let f_q = half * (fl_q + fr_q) - half * lambda * (right.1 - left.1);
    Ok((f_h, f_q))
}

/// Face fluxes for a periodic state: entry `m` is the flux at the left
/// face of cell `m`, i.e. `llf_flux(u_{m−1}, u_m)` with index wrap.
pub fn face_fluxes<S: Scalar>(state: &SweState<S>, froude: S) -> Result<(Vec<S>, Vec<S>)> {
    let n = state.num_cells();
    let mut f_h = vec![S::zero(); n];
    let mut f_q = vec![S::zero(); n];
    for m in 0..n {
        let l = (m + n - 1) % n;
        let (fh, fq) = llf_flux(
            (state.h[l], state.q[l]),
            (state.h[m], state.q[m]),
            froude,
        )?;
        f_h[m] = fh;
        f_q[m] = fq;
    }
    Ok((f_h, f_q))
}

/// Semi-discrete tendency `u̇_m = (F_m − F_{m+1})/Δx` with periodic wrap.
pub fn fine_rhs<S: Scalar>(
    state: &SweState<S>,
    grid: &Grid1D<S>,
    params: &SweParams<S>,
) -> Result<SweState<S>> {
    let n = state.num_cells();
    if n != grid.num_cells() {
        return Err(Error::LengthMismatch {
            what: "state vs grid",
            expected: grid.num_cells(),
            got: n,
        });
    }
    let (f_h, f_q) = face_fluxes(state, params.froude)?;
    let inv_dx = S::one() / grid.dx();
    let mut dh = vec![S::zero(); n];
    let mut dq = vec![S::zero(); n];
    for m in 0..n {
        let r = (m + 1) % n;
        dh[m] = (f_h[m] - f_h[r]) * inv_dx;
        dq[m] = (f_q[m] - f_q[r]) * inv_dx;
    }
    Ok(SweState { h: dh, q: dq })
}

/// One modified-Euler step: `u* = u + dt·rhs(u)`,
/// `u_next = u + (dt/2)·(rhs(u) + rhs(u*))`.
///
/// The tendency is supplied as a closure so the coarse model can reuse
/// the integrator with held subgrid fluxes. Fails if any intermediate
/// height is nonpositive.
pub fn step_modified_euler<S, F>(state: &SweState<S>, dt: S, rhs: F) -> Result<SweState<S>>
where
    S: Scalar,
    F: Fn(&SweState<S>) -> Result<SweState<S>>,
{
    let n = state.num_cells();
    let half = S::from_f64_lossy(0.5);
    let k1 = rhs(state)?;
    let mut stage = SweState {
        h: vec![S::zero(); n],
        q: vec![S::zero(); n],
    };
    for m in 0..n {
        stage.h[m] = state.h[m] + dt * k1.h[m];
        stage.q[m] = state.q[m] + dt * k1.q[m];
    }
    stage.validate()?;
    let k2 = rhs(&stage)?;
    let mut next = stage;
    for m in 0..n {
        next.h[m] = state.h[m] + half * dt * (k1.h[m] + k2.h[m]);
        next.q[m] = state.q[m] + half * dt * (k1.q[m] + k2.q[m]);
    }
    next.validate()?;
    Ok(next)
}

/// Integrate `n_steps` fine steps from `initial`, returning the states at
/// steps `{0, sample_every, 2·sample_every, ...}` (the initial state is
/// always included). `sample_every = 0` keeps only step 0 and the final
/// state sample if it lands on a multiple; pass `1` to keep everything.
pub fn simulate<S: Scalar>(
    initial: &SweState<S>,
    grid: &Grid1D<S>,
    params: &SweParams<S>,
    n_steps: usize,
    sample_every: usize,
) -> Result<Vec<SweState<S>>> {
    initial.validate()?;
    let stride = sample_every.max(1);
    let mut samples = Vec::with_capacity(n_steps / stride + 1);
    samples.push(initial.clone());
    let mut state = initial.clone();
    for step in 0..n_steps {
        cfl_check(&state, grid, params, step);
        state = step_modified_euler(&state, params.dt, |u| fine_rhs(u, grid, params)).map_err(
            |e| Error::SolverBlowup {
                step: step + 1,
                reason: e.to_string(),
            },
        )?;
        if (step + 1) % stride == 0 {
            samples.push(state.clone());
        }
    }
    Ok(samples)
}

/// Non-fatal CFL watch: warns when `λ_max·dt/Δx > 1`.
fn cfl_check<S: Scalar>(state: &SweState<S>, grid: &Grid1D<S>, params: &SweParams<S>, step: usize) {
    let n = state.num_cells();
    let mut lambda_max = S::zero();
    for m in 0..n {
        let l = (m + n - 1) % n;
        if let Ok(lam) = llf_wavespeed(
            (state.h[l], state.q[l]),
            (state.h[m], state.q[m]),
            params.froude,
        ) {
            lambda_max = lambda_max.max(lam);
        }
    }
    let cfl = lambda_max * params.dt / grid.dx();
    if cfl > S::one() {
        log::warn!(
            "CFL number {:.3} > 1 at step {step} (dt may be too large)",
            cfl.to_f64_lossy()
        );
    }
}
