//! Critical capacities of negative spherical perceptrons through the
//! stationarized fully lifted random duality framework.
//!
//! The crate is organized bottom-up:
//!
//! * [`specfun`] – error functions, Gauss–Hermite grids, stable power means;
//! * [`free_energy`] – the lifted ground-state free energy at levels 1, 2, 3;
//! * [`stationarity`] – analytic derivative systems, closed-form parameter
//!   relations and the damped Newton solver for stationary points;
//! * [`capacity`] – zero crossings in the constraint ratio, kappa sweeps,
//!   ordering and modulo-m audits;
//! * [`oracle`] – Monte Carlo and finite-n checks independent of the above;
//! * [`golden`] and [`cli`] – reference tables and the `nsp` front end.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod capacity;
pub mod cli;
pub mod error;
pub mod free_energy;
pub mod golden;
pub mod oracle;
pub mod specfun;
pub mod stationarity;

pub use capacity::{alpha_c, kappa_c, sweep, Branch, CapacityResult};
pub use error::{Error, Result};
pub use free_energy::{Level, LiftingParams, ModelPoint};
pub use specfun::{gauss_hermite, QuadratureGrid};
pub use stationarity::{solve_stationary, SolverConfig};
