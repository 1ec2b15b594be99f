//! Samplers for linear-SDE diffusion models over position-momentum phase
//! space: conjugate integrators, splitting integrators and their hybrids.

pub mod conjugate;
pub mod error;
pub mod harness;
pub mod linalg2;
pub mod ode;
pub mod score;
pub mod sde;
pub mod splitting;
pub mod state;

pub use error::{Error, Result};
pub use state::State;
