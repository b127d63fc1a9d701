//! Readmission-risk modeling over longitudinal medical records.
//!
//! A patient record is a sequence of hospital visits, each a bag of disease
//! codes and a bag of treatment codes. This crate embeds both code kinds in
//! one vector space, collapses each visit's bags with a rectified,
//! softly-normalized set function, takes the disease-minus-treatment
//! residual through a componentwise interaction, runs the resulting visit
//! vectors through an LSTM, and predicts per-discharge readmission risk
//! from a pooled prefix of hidden states — trained end to end by
//! reverse-mode differentiation on an operation tape.
//!
//! The pieces, bottom-up:
//!
//! - [`diffcore`]: tensors, the gradient tape, and finite-difference
//!   gradient checking.
//! - [`rng`]: one seed-derivation scheme for every random stream, so runs
//!   are reproducible end to end.
//! - [`embedding`]: code vocabularies, trainable embedding rows, the bag
//!   set function, and the visit-level interaction.
//! - [`recurrent`]: the LSTM cell and unroll, prefix pooling (mean / last /
//!   exponential smoothing), and state-norm regularizers.
//! - [`model`]: the assembled risk model (`mdmt`, plus the `mdmtp` variant
//!   with a norm stabilizer), its loss, and versioned serialization.
//! - [`optim`]: Adam, gradient clipping, minibatched training with early
//!   stopping.
//! - [`baselines`]: bag-of-words logistic regression and a miniature
//!   convolutional sequence classifier for comparison.
//! - [`eval`]: rank-based AUC, hidden-state tracing, and stratified k-fold
//!   cross-validation.
//! - [`data`]: the record schema, JSONL ingestion and validation, ICD-10
//!   truncation, and a deterministic synthetic cohort generator with a
//!   planted temporal signal.
//! - [`config`]: the flat run configuration shared by the command-line
//!   driver, with a digest stamped into every artifact.
//!
//! The `emrisk` binary wires these into `gen-synth`, `train`, `eval`, `cv`,
//! `trace`, `gradcheck`, and `embed-export` subcommands; the `examples/`
//! directory walks each capability in library form.

pub mod baselines;
pub mod config;
pub mod data;
pub mod diffcore;
pub mod embedding;
pub mod eval;
pub mod model;
pub mod optim;
pub mod recurrent;
pub mod rng;
