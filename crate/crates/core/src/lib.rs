//! Finite-state, discrete-time tools for multi-marginal entropy minimization
//! over Markov and reciprocal reference path measures.

pub mod additive;
pub mod error;
pub mod fixtures;
pub mod fold;
pub mod guard;
pub mod io;
pub mod markov;
pub mod measure;
pub mod serde_ext;
pub mod solvers;
mod tensor;

pub use error::{Error, Result};
