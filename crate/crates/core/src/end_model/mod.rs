//! End model: a linear classifier over hashed unigram and bigram features,
//! trained on soft labels by minimizing expected cross-entropy.
//!
//! This stands in for a fine-tuned transformer; what carries over is the
//! objective, expected risk under the label model's probabilistic labels.

mod evaluate;
mod features;
mod linear;
mod train;

pub use evaluate::{
    check_seeds, evaluate_models, evaluate_replicates, mean_se, train_replicates, MeanSe,
    ReplicateReport, ReplicateSummary, SeedMetrics, DEFAULT_SEEDS, SE_DEFINITION,
};
pub use features::{example_text, tokenize, FeatureSpec, SparseVec, DEFAULT_DIM};
pub use linear::{log_softmax, softmax, LinearModel, INIT_SCALE, MODEL_MAGIC, MODEL_VERSION};
pub use train::{
    logit_gradient, soft_cross_entropy, soft_cross_entropy_gradient, train, TrainConfig,
    TrainReport,
};
