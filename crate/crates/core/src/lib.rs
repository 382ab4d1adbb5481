//! Linear graph neural networks and their gradient dynamics.
//!
//! The crate builds the full pipeline for semi-supervised node regression with
//! linear GNNs: random graph generators ([`graph`]), graph shift operators
//! ([`shift`]), the model and its mean-squared loss ([`gnn`]), analytic
//! gradients with a finite-difference oracle ([`grad`]), initialization
//! schemes with validity certificates ([`init`]), gradient-flow and
//! gradient-descent trainers ([`dynamics`]), closed-form rate and energy
//! quantities ([`theory`]), and reproducible experiment sweeps
//! ([`experiments`]).
//!
//! Everything is dense `f64` linear algebra on top of [`ndarray`], sized for
//! graphs of a few hundred nodes. All randomness flows from explicit 64-bit
//! seeds through the generator documented in [`rng`].

pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod gnn;
pub mod grad;
pub mod graph;
pub mod init;
pub mod linalg;
pub mod rng;
pub mod shift;
pub mod theory;

pub use error::{Error, Result};
pub use gnn::{Problem, WeightStack};
pub use graph::Graph;
pub use shift::{ShiftKind, ShiftMatrix};

/// Alias for the dense matrix type used throughout the crate.
pub type Mat = ndarray::Array2<f64>;
