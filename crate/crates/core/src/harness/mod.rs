//! Optimisation, training, evaluation and persistence.

pub mod checkpoint;
pub mod eval;
pub mod gradcheck;
pub mod metrics;
pub mod optim;
pub mod schedule;
pub mod train;

pub use checkpoint::Checkpoint;
pub use eval::{evaluate, Evaluation, Tally, RANDOM_BASELINE};
pub use metrics::{EpochRecord, MetricsReport};
pub use optim::AdamW;
pub use schedule::{lr_at, split_dataset};
pub use train::{train, train_on, TrainConfig, TrainOutcome};
