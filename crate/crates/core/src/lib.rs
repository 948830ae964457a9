//! Numerical laboratory for first-order path-dependent Hamilton–Jacobi–Bellman
//! equations on a spectrally truncated Hilbert space.
//!
//! The core is generic over the scalar type ([`Scalar`] is implemented for
//! `f32` and `f64`); the `*64` aliases below fix `f64`, which is what the
//! command-line tool and the acceptance suite use.

// `!(x <= y)` is used on purpose so that NaN fails the test.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control_value;
pub mod dynamics;
pub mod error;
pub mod gauge;
pub mod hilbert;
pub mod ito_visc;
pub mod library;
pub mod path;
pub mod sampling;
pub mod scalar;
pub mod variational;

pub use control_value::{cost_j, hamiltonian, hjb_hamiltonian, value_dpp, DppOptions, MemoPolicy, ValueTable};
pub use dynamics::{mild_solve, Coefficients, ControlSignal, Picard};
pub use error::{Error, Result};
pub use gauge::GaugeParams;
pub use hilbert::{HVec, SpectralSpace};
pub use path::{metric_d_infty, Path, PathFunctional, TimeGrid};
pub use scalar::Scalar;

pub type HVec64 = hilbert::HVec<f64>;
pub type SpectralSpace64 = hilbert::SpectralSpace<f64>;
pub type Path64 = path::Path<f64>;
pub type TimeGrid64 = path::TimeGrid<f64>;
pub type Coefficients64 = dynamics::Coefficients<f64>;
pub type ControlSignal64 = dynamics::ControlSignal<f64>;

pub type HVec32 = hilbert::HVec<f32>;
pub type SpectralSpace32 = hilbert::SpectralSpace<f32>;
pub type Path32 = path::Path<f32>;
pub type TimeGrid32 = path::TimeGrid<f32>;
pub type Coefficients32 = dynamics::Coefficients<f32>;
pub type ControlSignal32 = dynamics::ControlSignal<f32>;
