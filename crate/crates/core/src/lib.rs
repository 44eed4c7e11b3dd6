//! Exact asymptotics for ensembles of generalized linear learners on random
//! features: fixed-point solver, observables and Gaussian-model Monte Carlo.

pub mod channels;
pub mod error;
pub mod observables;
pub mod priors;
pub mod quadrature;
pub mod random;
pub mod solver;
pub mod spectrum;

pub use error::{Error, Result};
