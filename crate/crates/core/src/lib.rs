//! Learned summary statistics for likelihood-free inference on stochastic
//! iterative maps.

pub mod abc;
pub mod config;
pub mod diagnostics;
pub mod encoder;
pub mod enca;
pub mod error;
pub mod inca;
pub mod io;
pub mod manifest;
pub mod mcmc;
pub mod models;
pub mod pipeline;
pub mod rng;
pub mod samples;
pub mod suffstats;
pub mod train;

pub use error::{Error, Result};
