use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use super::multimodal::ParamCounts;
use crate::nn::{BottleneckAdapter, PoolGeometry, DEPTHWISE_KERNEL};
use crate::params::Group;
use crate::vocab::NUM_SPECIALS;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// D1.
    pub model_dim: usize,
    /// D2, the adapter bottleneck width.
    pub adapter_dim: usize,
    pub num_encoder_layers: usize,
    pub num_decoder_layers: usize,
    pub num_text_encoder_layers: usize,
    pub num_heads: usize,
    pub ff_dim: usize,
    /// Width of a speech frame.
    pub feature_dim: usize,
    pub vocab_size: usize,
    pub length_adapter: Vec<PoolGeometry>,
    pub max_frames: usize,
    pub max_source_len: usize,
    pub max_target_len: usize,
    /// Build encoder and decoder adapters.
    #[serde(default = "default_true")]
    pub adapters: bool,
}

fn default_true() -> bool {
    true
}

impl ModelConfig {
    /// Desk-scale default: D1 = 64, four encoder and four decoder layers.
    pub fn toy(vocab_size: usize, feature_dim: usize) -> Self {
        ModelConfig {
            model_dim: 64,
            adapter_dim: 16,
            num_encoder_layers: 4,
            num_decoder_layers: 4,
            num_text_encoder_layers: 2,
            num_heads: 4,
            ff_dim: 128,
            feature_dim,
            vocab_size,
            length_adapter: vec![PoolGeometry::new(3, 2, 1), PoolGeometry::new(3, 2, 1)],
            max_frames: 512,
            max_source_len: 128,
            max_target_len: 128,
            adapters: true,
        }
    }

    /// Dimensions of the 1.2B-parameter reference system's ASR path:
    /// D1 = 1024, 12 conformer and 12 decoder layers.
    pub fn reference_scale(adapter_dim: usize) -> Self {
        ModelConfig {
            model_dim: 1024,
            adapter_dim,
            num_encoder_layers: 12,
            num_decoder_layers: 12,
            num_text_encoder_layers: 0,
            num_heads: 16,
            ff_dim: 4096,
            feature_dim: 80,
            vocab_size: 256,
            length_adapter: vec![PoolGeometry::new(8, 8, 1)],
            max_frames: 4096,
            max_source_len: 512,
            max_target_len: 512,
            adapters: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.model_dim == 0 || self.num_heads == 0 || !self.model_dim.is_multiple_of(self.num_heads) {
            return fail(format!(
                "model_dim {} must be a positive multiple of num_heads {}",
                self.model_dim, self.num_heads
            ));
        }
        if self.adapter_dim == 0 {
            return fail("adapter_dim must be at least 1".into());
        }
        if self.vocab_size < NUM_SPECIALS {
            return fail(format!("vocab_size {} leaves no room for specials", self.vocab_size));
        }
        if self.feature_dim == 0 || self.ff_dim == 0 {
            return fail("feature_dim and ff_dim must be positive".into());
        }
        if self.max_target_len < 2 || self.max_source_len == 0 || self.max_frames == 0 {
            return fail("maximum lengths too small".into());
        }
        for g in &self.length_adapter {
            if g.kernel == 0 || g.stride == 0 {
                return fail(format!("invalid length adapter geometry {g:?}"));
            }
        }
        Ok(())
    }

    /// Short identity of the architecture, used to spot reports produced by
    /// different models.
    pub fn signature(&self) -> String {
        let geoms: Vec<String> = self
            .length_adapter
            .iter()
            .map(|g| format!("{}/{}/{}", g.kernel, g.stride, g.padding))
            .collect();
        format!(
            "d{}-a{}-e{}-d{}-t{}-h{}-f{}-x{}-v{}-la[{}]",
            self.model_dim,
            self.adapter_dim,
            self.num_encoder_layers,
            self.num_decoder_layers,
            self.num_text_encoder_layers,
            self.num_heads,
            self.ff_dim,
            self.feature_dim,
            self.vocab_size,
            geoms.join(",")
        )
    }

    /// Per-group parameter counts from the layer formulas, without
    /// allocating any weights. Adapter groups are counted when `adapters`
    /// is set.
    pub fn parameter_counts(&self) -> ParamCounts {
        let d = self.model_dim;
        let ln = 2 * d;
        let attn = 4 * d * d;
        let ffn = 2 * d * self.ff_dim + self.ff_dim + d;
        let speech_block = 3 * ln + attn + DEPTHWISE_KERNEL * d + d + ffn;
        let text_block = 2 * ln + attn + ffn;
        let decoder_block = 3 * ln + 2 * attn + ffn;
        let mpsa: usize = self
            .length_adapter
            .iter()
            .map(|g| g.kernel * d * d + d + 2 * ln + attn + ffn)
            .sum();
        let adapter = BottleneckAdapter::parameter_count(d, self.adapter_dim);
        let on = usize::from(self.adapters);
        let counts = [
            (Group::SpeechEncoder, self.feature_dim * d + d + self.num_encoder_layers * speech_block + ln),
            (Group::LengthAdapter, mpsa),
            (Group::TextEncoder, self.num_text_encoder_layers * text_block + ln),
            (Group::TextDecoder, self.num_decoder_layers * decoder_block + ln),
            (Group::EncoderAdapters, on * self.num_encoder_layers * adapter),
            (Group::DecoderAdapters, on * self.num_decoder_layers * adapter),
            (Group::Embeddings, self.vocab_size * d),
            (Group::OutputHead, self.vocab_size),
        ];
        ParamCounts(counts.into_iter().collect())
    }
}
