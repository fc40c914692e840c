//! A small decoder-style transformer with fully materialized attention and
//! per-head output gates.

mod config;
mod forward;
mod gates;
pub mod io;
mod sequence;
mod trace;
mod weights;

pub use config::ModelConfig;
pub use forward::{
    attention_weights, forward_logits, forward_records, forward_vanilla, head_output, layer_forward,
    model_forward, HeadRecord, LayerRecord, MlpRecord,
};
pub(crate) use forward::{run_stack, silu_grad, HeadGain};
pub use gates::GateTensor;
pub use sequence::{Modality, TokenSequence};
pub use trace::AttentionTrace;
pub use weights::{LayerWeights, MlpWeights, Model};
