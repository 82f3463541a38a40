//! The tree-gated sparse MLP: tokenizer, feature gate, gated-MLP blocks with
//! hard-concrete pruning gates, prediction head, training and export.

pub mod block;
pub mod export;
pub mod gates;
pub mod network;
pub mod params;
pub mod train;

pub use block::Selection;
pub use export::{export_pruned, PrunedModel};
pub use gates::{GateMode, Multipliers};
pub use network::Inputs;
pub use params::{Arch, BlockParams, HeadParams, ParamGroup, TmlpParams, TokenizerParams};
pub use train::{train, EpochLog, Streams, TrainConfig, TrainData, TrainOutcome};

use crate::nn::NnError;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("categorical code {code} out of range for feature {feature} (cardinality {cardinality})")]
    IndexOutOfVocabulary {
        feature: usize,
        code: usize,
        cardinality: usize,
    },
    #[error("expected {expected} features, got {got}")]
    FeatureCountMismatch { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("no training rows")]
    EmptyTrainingSet,
    #[error("feature gate enabled but no frequencies were supplied")]
    MissingFrequencies,
}
