//! Crystal structures and the modalities derived from them.
//!
//! Everything here is a pure function over immutable values: lattice
//! geometry, dataset formats and splitting, powder XRD simulation,
//! composition statistics, periodic radius graphs and evaluation metrics.

pub mod crystal;
pub mod dataset;
pub mod elements;
pub mod eval;
pub mod featurize;
pub mod graph;
pub mod rng;
pub mod xrd;

mod error;

pub use crystal::{Composition, CrystalStructure, CrystalSystem, Lattice};
pub use error::{Error, Result};
