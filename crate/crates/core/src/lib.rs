//! Solvers for a five-compartment model of sodium exchange in a
//! counter-current tubule pair (descending and ascending limb, their
//! epithelial layers, and a shared interstitium).
//!
//! - [`model`]: parameters, fluxes and the pump nonlinearity
//! - [`steady`]: stationary profiles via the reduced scalar ODE
//! - [`eigen`]: principal eigenvalue with direct and dual eigenfunctions
//! - [`transient`]: time integration, Lyapunov monitor and the fused-epithelium limit
//! - [`experiments`]: permeability and pump-rate sweeps

// `!(a < b)` is used on purpose so NaN fails validation; stencil loops index
// several arrays at once.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod eigen;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod model;
pub mod output;
pub mod roots;
pub mod steady;
pub mod transient;

pub use error::{Error, Result};
pub use grid::Grid1D;
pub use model::{Compartments, ModelParams, PumpParams};
