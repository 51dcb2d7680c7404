//! Fixtures shared by the criterion benches.

use mmadapt::model::{Group, ModelConfig, MultimodalModel};
use mmadapt::nn::PoolGeometry;
use mmadapt::{rng, Tensor};
use rand_distr::{Distribution, StandardNormal};

pub fn randn(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut r = rng::rng(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| StandardNormal.sample(&mut r)).collect()).unwrap()
}

/// The shape used by the shipped trend scenario.
pub fn trend_model() -> MultimodalModel<f32> {
    let cfg = ModelConfig {
        model_dim: 64,
        adapter_dim: 32,
        num_encoder_layers: 4,
        num_decoder_layers: 4,
        num_text_encoder_layers: 2,
        num_heads: 4,
        ff_dim: 128,
        feature_dim: 16,
        vocab_size: 29,
        length_adapter: vec![PoolGeometry::new(3, 2, 1); 2],
        max_frames: 512,
        max_source_len: 128,
        max_target_len: 128,
        adapters: true,
    };
    let mut m = MultimodalModel::build(&cfg, 1).unwrap();
    m.set_trainable(&[Group::EncoderAdapters].into_iter().collect());
    m
}

/// `n` fake utterances of `frames` frames with `chars`-token targets.
pub fn utterances(n: usize, frames: usize, chars: usize) -> Vec<(Tensor<f32>, Vec<usize>)> {
    (0..n)
        .map(|i| (randn(&[frames, 16], i as u64), (0..chars).map(|j| 4 + (i + j) % 25).collect()))
        .collect()
}
