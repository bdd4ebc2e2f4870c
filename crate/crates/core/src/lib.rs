//! Averaging, separatrix crossing and resonance statistics for slow-fast
//! perturbations of one-degree-of-freedom Hamiltonian systems with a
//! figure-eight separatrix.

pub mod averaging;
pub mod ensemble;
pub mod error;
pub mod geometry;
pub mod model;
pub mod numerics;
pub mod ode;
pub mod resonance;
pub mod stats;
pub mod systems;

pub use error::{Error, Result};
pub mod cli;
pub mod config;
