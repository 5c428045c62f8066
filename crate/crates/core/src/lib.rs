//! Numerical information geometry on parametrized measure models.
//!
//! The crate evaluates the canonical tensor fields of a parametrized measure
//! model (the 1-form, the Fisher metric, the Amari–Chentsov tensor and higher
//! moment tensors), checks their behaviour under statistics and Markov
//! kernels, fits invariant tensor candidates to their canonical span, works
//! with Orlicz norms and the similarity preorder on measures, and runs
//! Fisher-preconditioned gradient descent.

pub mod chentsov;
pub mod error;
pub mod expr;
pub mod lattice;
pub mod markov;
pub mod models;
pub mod natgrad;
pub mod orlicz;
pub mod quadrature;
pub mod spaces;
pub mod tensors;

pub use error::{Error, Result};
