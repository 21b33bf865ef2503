//! Fuel-optimal impulsive stationkeeping for halo orbits in the circular
//! restricted three-body problem, with a safe-exit contingency constraint.

pub mod cli;
pub mod conic;
pub mod controller;
pub mod dynamics;
pub mod error;
pub mod halo;
pub mod integrator;
pub mod linearize;
pub mod riccati;
pub mod safety;
pub mod scenario;
pub mod stationkeeping;
pub mod system;

pub use error::{Error, Result};
