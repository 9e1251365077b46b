//! Focal loss, momentum SGD with cosine annealing, and the early-stopped
//! training loop.

mod focal;
mod optim;
mod trainer;

pub use focal::{default_alpha, focal_loss, FocalOutput, PROB_FLOOR};
pub use optim::{cosine_lr, sgd_step, OptimizerState};
pub use trainer::{
    batch_tensors, carve_out, evaluate_loss, patience_exhausted, resolve_alpha, train, EpochRecord, History, Sample,
    TrainConfig,
};
