//! Multitask objective, simple/pruned warmup blending and the optimizer
//! loop for the two training stages.

mod adam;
mod objective;
mod run;

pub use adam::{clip_grad_norm, grad_norm, Adam};
pub use objective::{
    blend_weight, combined_loss, multitask_nt_loss, task_nt_loss, warmup_blend, Augmentation,
    Components, Example, LossWeights, Objective, Schedule,
};
pub use run::{train_run, Stage, TrainConfig, TrainLog};
