//! Two-model uplift modeling with a bag-level ATE regularizer.
//!
//! A base model predicts treated and control response probabilities; each
//! mini-batch is sorted by predicted uplift, cut into bags of adjacent
//! instances, and every bag's inverse-propensity weighted ATE prediction is
//! pulled toward the bag's observed ATE label.
//!
//! * [`nncore`]: dense networks, backpropagation, Adam, masked cross-entropy.
//! * [`data`]: datasets, delimited-text I/O, splits, mini-batches, synthetic experiments.
//! * [`models`]: TM, TARNET, DDR and SDR base architectures.
//! * [`mil`]: bag formation, bag labels and predictions, the combined loss.
//! * [`metrics`]: separate-ranking uplift curves, AUUC, run aggregation.
//! * [`trainer`]: warm-up, early stopping, seeded repetition.
//! * [`experiment`]: sweep and ablation grids.

pub mod data;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod mil;
pub mod models;
pub mod nncore;
pub mod trainer;

pub use data::{
    empirical_ate, generate_synthetic, load_table, minibatches, split, write_table, Dataset,
    MiniBatch, Split, SynthConfig, TableSchema,
};
pub use error::{Error, Result};
pub use metrics::{aggregate_runs, auuc, export_curve, uplift_curve, RunAggregate, UpliftCurve};
pub use mil::{
    cluster_bags, combined_loss_and_grads, BagMode, BagPartition, BagStats, LossBreakdown,
};
pub use models::{ModelKind, Prediction, UpliftModel};
pub use nncore::Matrix;
pub use trainer::{evaluate, repeat_runs, train, TrainConfig, TrainOutcome, TrainReport};
