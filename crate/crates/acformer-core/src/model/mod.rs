//! The ACFormer forecasting model.

pub mod checkpoint;
mod config;
mod forward;
mod params;
#[cfg(test)]
mod tests;

pub use config::{Ablation, AcformerConfig, ConfigError};
pub use forward::{
    apply_tape_grads, bind, forward, gated_attention_block, independent_patch_expand, mae_loss,
    revin_denormalize, revin_normalize, shared_patch_compress, update_running_stats, BoundBlock,
    BoundParams, ForwardOutput, Phase, RevinVars,
};
pub use params::{BlockParams, ModelParams};
