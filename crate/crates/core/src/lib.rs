//! Transformer encoder over sets of items, conditioned on a fixed-size
//! context vector.
//!
//! Five conditioning methods are supported (see [`model::MethodKind`]):
//! no context, concatenation at every position, a prepended context
//! position, a read-only global state read by every block, and a global
//! state updated between blocks. The crate also ships a synthetic
//! context-dependent corpus with an exact Bayes predictor, a training loop,
//! and an evaluation harness producing cross-entropy and recall@r tables.

pub mod autograd;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;
