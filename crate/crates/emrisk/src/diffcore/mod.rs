//! Reverse-mode automatic differentiation over small dense tensors.
//!
//! Submodules:
//! - [`tensor`]: dense f64 tensors, named parameters, and parameter sets.
//! - [`tape`]: the operation tape that records forward computation and
//!   replays it backwards to accumulate gradients.
//! - [`gradcheck`]: central-difference verification of tape gradients.

pub mod gradcheck;
pub mod tape;
pub mod tensor;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use tape::{sigmoid, softplus, Activation, NodeId, Tape};
pub use tensor::{ParamId, ParamSet, Parameter, Tensor};

/// Errors raised by tensor construction, tape building, and the backward
/// pass. The invariants here are internal consistency checks; any of these
/// surfacing from a public entry point indicates a bug in the caller's graph
/// construction or corrupt numeric state, never a data-file problem.
#[derive(Debug, thiserror::Error)]
pub enum DiffError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("expected a scalar node, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },

    #[error("{op} requires at least one input")]
    EmptySequence { op: &'static str },

    #[error("loss evaluation is not deterministic: two identical evaluations disagreed ({first} vs {second})")]
    NonDeterministicLoss { first: f64, second: f64 },

    #[error("API misuse: {0}")]
    Protocol(String),
}
