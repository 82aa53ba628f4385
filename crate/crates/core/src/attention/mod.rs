//! Attention blocks of the encoder layer.
//!
//! The encoder runs once per buffered frame with shared weights. At step `i`
//! the learnable query first attends over the embeddings of earlier steps
//! (temporal self-attention), then samples the current feature map at a few
//! learned locations (spatial cross-attention), then passes a feed-forward
//! block. Every sublayer is followed by residual add and layer norm.

mod deformable;
mod encoder;
pub mod layers;
mod multihead;
mod temporal;

pub use deformable::{
    bilinear_sample, deformable_attention, deformable_attention_detailed, init_deformable, Deformed,
    DeformableVars, FeatureMap, SamplingPoint,
};
pub use encoder::{encoder_layer, EncoderConfig, EncoderVars};
pub use multihead::{
    init_multihead, multihead_attention, multihead_attention_weights, Attended, MultiheadVars,
};
pub use temporal::{temporal_self_attention, HistoryBank, HistoryMode};
