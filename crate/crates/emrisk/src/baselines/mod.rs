//! Comparison methods: bag-of-words logistic regression over the whole
//! history, and a miniature convolutional sequence classifier with random
//! intra-visit token ordering.

mod bow;
mod deepr;

pub use bow::{bow_features, train_bow_lr, BowLrModel, BowTrainConfig};
pub use deepr::{deepr_sequence, train_deepr, DeeprConfig, DeeprMiniModel};

use crate::diffcore::DiffError;
use crate::embedding::Namespace;
use crate::model::ModelError;
use crate::optim::TrainError;

#[derive(Debug, thiserror::Error)]
pub enum BaselineError {
    #[error("unknown {namespace} code {code:?}: not in the model vocabulary")]
    UnknownCode { namespace: Namespace, code: String },

    #[error("no records with a labeled final visit to train on")]
    NoLabeledRecords,

    #[error("invalid baseline configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Diff(#[from] DiffError),

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Train(#[from] TrainError),
}
