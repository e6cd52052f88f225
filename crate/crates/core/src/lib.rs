//! Regularized McKean-Vlasov particle simulation for local stochastic
//! volatility calibration: kernel ridge conditional expectations, synthetic
//! markets, the interacting particle scheme and its diagnostics.

pub mod checks;
pub mod config;
pub mod error;
pub mod experiment;
pub mod kernel;
pub mod market;
pub mod plot;
pub mod ridge;
pub mod simulator;
pub mod validation;

pub use error::{LsvError, Result};
