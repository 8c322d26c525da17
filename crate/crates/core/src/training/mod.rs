//! P x K batch sampling, the separate batch-hard triplet loss, and the Adam
//! training loop.

pub mod batch;
pub mod loss;
pub mod trainer;

pub use batch::{sample_batch, BatchItem, BatchSpec, TrainingSet};
pub use loss::{hard_triplet_loss, LossOutput, TripletLossConfig};
pub use trainer::{loss_descent, train, write_loss_csv, TrainConfig, TrainOutcome};
