//! Negative sampling, the ranking loss, history noise, Adam and the epoch
//! loop.

pub mod adam;
pub mod checkpoint;
pub mod loss;
pub mod negatives;
pub mod noise;
pub mod trainer;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use loss::{nce_loss, nce_loss_node};
pub use negatives::sample_negatives;
pub use noise::{inject_masked_news, Slot};
pub use trainer::{train_epoch, EpochStats, TrainConfig, Trainer, TrainingSample};
