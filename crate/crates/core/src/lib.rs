//! Estimation of Vorob'ev expectations of random closed sets on dyadic grids.

pub mod boolean;
pub mod boxdim;
pub mod config;
pub mod coverage;
pub mod error;
pub mod exact;
pub mod grid;
pub mod harness;
pub mod io;
pub mod rng;
pub mod vorobev;

pub use error::{Error, Result};
pub use exact::Exact;
pub use grid::{CellSet, GridSpec, Mask, WeightedMask};
