//! Architectural building blocks.

mod adapter;
mod attention;
mod decoder;
mod encoder;
mod layers;
mod mpsa;

pub use adapter::{apply_adapter, BottleneckAdapter};
pub use attention::{causal_mask, multi_head_attention, AttentionParams};
pub use decoder::{decoder_block_forward, DecoderBlock};
pub use encoder::{encoder_block_forward, ConformerLiteBlock, TextEncoderBlock, DEPTHWISE_KERNEL};
pub use layers::{sinusoidal_positions, FeedForward, LayerNorm, Linear};
pub use mpsa::{mpsa_layer_forward, MpsaLayer, MpsaLengthAdapter, PoolGeometry};

#[cfg(test)]
mod tests;
