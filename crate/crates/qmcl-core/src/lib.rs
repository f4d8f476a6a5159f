//! Quantum mechanical closure (QMCl) of spatially coarsened PDE dynamics.
//!
//! The crate bundles three layers:
//!
//! * a fine-grid finite-volume solver for the 1-D periodic shallow water
//!   equations ([`swe_fv`]) and its spatial coarsening with exact subgrid
//!   fluxes ([`coarsening`]) — the ground truth and the closure target;
//! * the data-driven machinery — delay-embedding Gaussian kernels with
//!   bistochastic normalization ([`kernel`]), a low-rank kernel eigenbasis
//!   ([`spectral`]), and the density-operator surrogate that predicts
//!   subgrid fluxes by quantum measurement ([`quantum`]);
//! * orchestration: training-data generation, offline training, online
//!   prediction, and report export ([`pipeline`]).
//!
//! Numerical code is generic over the floating-point scalar through the
//! [`Scalar`] trait; `f64` aliases for the main types live at the crate
//! root. The pipeline layer is pinned to `f64` (its on-disk formats are
//! 64-bit).

// `!(x > 0)` is the NaN-rejecting form of these domain checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coarsening;
pub mod error;
pub mod kernel;
pub mod pipeline;
pub mod quantum;
pub mod spectral;
pub mod swe_fv;

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

pub use error::{Error, Result};

/// Floating-point scalar the numerical core is generic over.
///
/// Implemented by `f32` and `f64`. Tolerances quoted on operation
/// contracts assume `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
    + 'static
{
    /// Shorthand for lossy conversion from `f64` (panics only on NaN-free
    /// conversion failure, which cannot happen for f32/f64 targets).
    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).expect("f64 conversion")
    }

    /// Lossy conversion to `f64` for diagnostics and error payloads.
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("f64 conversion")
    }
}

impl<T> Scalar for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + NumAssign
        + Sum
        + Debug
        + Display
        + LowerExp
        + Send
        + Sync
        + 'static
{
}

pub type Grid1D64 = swe_fv::Grid1D<f64>;
pub type SweState64 = swe_fv::SweState<f64>;
pub type SweParams64 = swe_fv::SweParams<f64>;
pub type CoarsePair64 = coarsening::CoarsePair<f64>;
pub type SubgridFluxField64 = coarsening::SubgridFluxField<f64>;
pub type BandwidthSpec64 = kernel::BandwidthSpec<f64>;
pub type LowRankFactor64 = spectral::LowRankFactor<f64>;
pub type SpectralBasis64 = spectral::SpectralBasis<f64>;
pub type QuantumObservable64 = quantum::QuantumObservable<f64>;
pub type TransferMatrix64 = quantum::TransferMatrix<f64>;
pub type DensityField64 = quantum::DensityField<f64>;
