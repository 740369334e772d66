//! Direct-method transient stability analysis of a grid-following converter
//! connected to a low-inertia grid.
//!
//! Pipeline: [`model`] builds the three-state ODE from circuit data,
//! [`zubov`] constructs a truncated Zubov energy function for the post-fault
//! system, [`domain`] finds the critical level `c₁` of its conservative
//! attraction-domain estimate, and [`sim`] turns that into a critical
//! clearing time and cross-checks it against brute-force simulation.

pub mod domain;
pub mod error;
pub mod model;
pub mod poly;
pub mod sim;
pub mod zubov;

pub use error::{Error, Result};
pub use model::{GflcSystem, NetworkConfig, OdeParams, State, SystemParams};
pub use poly::{Axis, Exponent3, Poly3};
pub use zubov::{build_energy, taylor_expand, EnergyFunction, PhiFunction, TaylorField};
