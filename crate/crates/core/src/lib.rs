//! mirolab: a desk-scale domain-generalization lab.
//!
//! The crate trains small block-structured MLPs on synthetic multi-domain
//! classification suites and regularizes fine-tuning against a frozen
//! reference extractor by maximizing a variational lower bound on the
//! mutual information between the two feature sets (the MIRO objective).
//! It also ships a MINE estimator for analyzing feature-level mutual
//! information, numerical checks for the Gaussian bound machinery behind
//! the objective, and an experiment harness (leave-one-domain-out
//! evaluation, two-stage hyperparameter search, MI analysis).
//!
//! The differentiation engine in [`tensor`] and [`tape`] is generic over
//! the scalar type; everything above it runs in double precision through
//! the aliases below, because the bound checks and estimator calibrations
//! are validated at tolerances single precision cannot hold.

pub mod config;
pub mod data;
pub mod error;
pub mod experiments;
pub mod gradcheck;
pub mod mine;
pub mod miro;
pub mod nn;
pub mod report;
pub mod rng;
pub mod scalar;
pub mod tape;
pub mod tensor;
pub mod theory;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Dense tensor in double precision, the working type of the whole crate.
pub type Tensor = tensor::Tensor<f64>;
/// Single-precision tensor, for callers that trade accuracy for memory.
pub type Tensor32 = tensor::Tensor<f32>;
/// Double-precision differentiation tape.
pub type Tape = tape::Tape<f64>;
/// Single-precision differentiation tape.
pub type Tape32 = tape::Tape<f32>;
/// Gradient store produced by backpropagation at double precision.
pub type GradStore = tape::GradStore<f64>;
