//! Bayesian latent binary features for mixed categorical/real relational data.

pub mod analysis;
pub mod clustering;
pub mod config;
pub mod corrprior;
pub mod data;
pub mod diagnostics;
pub mod distributions;
pub mod error;
pub mod evaluation;
pub mod geweke;
pub mod gibbs;
pub mod init;
pub mod latent;
pub mod linalg;
pub mod rng;
pub mod simulate;
pub mod trace;
pub mod workers;

pub use error::{Error, Result};
