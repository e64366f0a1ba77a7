//! The causal/anticausal TCN classifier and its cost accounting.

mod checkpoint;
mod config;
mod model;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use config::{
    block_params, count_macs, count_params, dilation, human_count, pad_for_causality,
    receptive_field, receptive_field_ms, Causality, CatcnConfig, MacCount,
};
pub use model::{batch_from, batch_windows, Branch, CatcnModel, ForwardPass, Mode};
