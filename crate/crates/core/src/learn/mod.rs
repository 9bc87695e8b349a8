//! Stand-in networks, losses, reverse-mode gradients and the two-source
//! training loop.

mod forward;
mod inputs;
mod loss;
mod model;
mod optim;
pub mod tape;
mod train;

pub use forward::{forward, forward_scene, predict_logits, ForwardOutput, ParamVars, SceneVars};
pub use inputs::{pixel_inputs, point_inputs, SceneInputs};
pub use loss::{contrastive_loss, seg_loss, total_loss, LossReport};
pub use model::{Fusion, ModelDims, ModelParams, LAYER_NAMES, PIXEL_INPUTS, POINT_INPUTS};
pub use optim::{adam_step, scheduled_lr, AdamConfig, AdamState};
pub use tape::softmax_rows;
pub use train::{
    activation_pattern, batch_objective, train, Batch, Hyperparams, MetricRow, SourceStream, TrainData, TrainOptions,
    TrainOutcome,
};

#[cfg(test)]
mod tests;
