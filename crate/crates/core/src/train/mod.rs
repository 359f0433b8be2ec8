//! Composite loss, optimizer, training loop and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod loss;
pub mod trainer;

pub use adam::{AdamConfig, AdamW};
pub use loss::{composite_loss, composite_loss_graph, cross_entropy, multilabel_softmargin, LossBreakdown, LossConfig};
pub use trainer::{evaluate_loss, EpochRecord, TrainConfig, Trainer};
