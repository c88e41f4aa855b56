//! Local data, label-skew partitioning, softmax models and SGD.

pub mod dataset;
pub mod idx;
pub mod model;
pub mod partition;
pub mod sgd;
pub mod synthetic;

pub use dataset::Dataset;
pub use idx::{load_idx_dataset, parse_idx};
pub use model::{evaluate, Architecture, ModelParams};
pub use partition::{partition_two_class, split_holdout, PartitionPlan};
pub use sgd::{local_train, LocalTrainConfig};
pub use synthetic::{make_synthetic, SyntheticParams};
