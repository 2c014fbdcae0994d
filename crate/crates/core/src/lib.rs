//! Training and evaluation engine for Top-K ranking losses on implicit feedback.

pub mod checkpoint;
pub mod dataset;
pub mod diagnostics;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod quantile;
pub mod rng;
pub mod trainer;

pub use dataset::{Corpus, DatasetSplit, EvalTarget, InteractionSet, RawInteractions, Vocab};
pub use error::{Error, Result};
pub use losses::{LossConfig, LossVariant};
pub use metrics::{evaluate, EvalReport, RankedList};
pub use model::{EmbeddingModel, ScoreKind};
pub use optim::{AdamConfig, AdamState};
pub use quantile::QuantileState;
pub use trainer::{train, TrainConfig, TrainHistory, Trainer};
