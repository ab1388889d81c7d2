//! Markov-modulated Hawkes processes: simulation, filtering, smoothing and
//! calibration.

pub mod cli;
pub mod config;
pub mod error;
pub mod estimate;
pub mod filter;
pub mod io;
pub mod linalg;
pub mod model;
pub mod nelder_mead;
pub mod robust;
pub mod simulate;
pub mod smoother;

pub use error::{Error, Result};
pub use model::{HawkesParams, ModelSpec, RateMatrix};
