//! Loss, gradients, optimizer and the training loop.

mod adam;
mod checkpoint;
mod gradient;
mod trainer;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::Checkpoint;
pub use gradient::{backward, nll_loss, GradientSet, Sequence};
pub use trainer::{chunk_sequence, train_to_dir, LossRecord, TrainConfig, TrainOutputs, Trainer};
