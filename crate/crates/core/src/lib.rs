//! Probability-first quantum mechanics toolkit on uniform 1D grids.
//!
//! The crate is organized around a small set of field containers ([`grid`])
//! and modules that compute densities, currents, and uncertainty bounds
//! ([`prob`], [`gauge`]), evolve wave equations ([`dynamics`], [`manybody`]),
//! probe the classical limit ([`classical`]), and package everything into
//! reproducible verification reports ([`report`]).

pub mod classical;
pub mod dynamics;
pub mod error;
pub mod fixtures;
pub mod gauge;
pub mod grid;
pub(crate) mod linalg;
pub mod manybody;
pub mod prob;
pub mod report;

pub use error::{QprobError, Result};
