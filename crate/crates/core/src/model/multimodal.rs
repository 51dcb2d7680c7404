use std::collections::{BTreeMap, BTreeSet};

use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{
    decoder_block_forward, encoder_block_forward, BottleneckAdapter, ConformerLiteBlock,
    DecoderBlock, LayerNorm, Linear, MpsaLayer, MpsaLengthAdapter, TextEncoderBlock,
};
use crate::params::{Ctx, Group, ParamId, ParamStore};
use crate::rng::{self, Rng};
use crate::tensor::{Graph, Scalar, Tensor, Var};
use crate::vocab::{BOS, EOS};

/// Shared text decoder: used by both the speech and the text pipeline.
#[derive(Clone, Debug)]
pub struct TextDecoder {
    pub blocks: Vec<DecoderBlock>,
    pub norm: LayerNorm,
}

/// Source side of one training or evaluation example.
#[derive(Clone, Copy, Debug)]
pub enum Source<'a, T> {
    Speech(&'a Tensor<T>),
    Text(&'a [usize]),
    /// Precomputed speech encoder output, still to pass the length adapter.
    SpeechHidden(&'a Tensor<T>),
    /// Precomputed decoder memory.
    Memory(&'a Tensor<T>),
}

/// Speech encoder, length adapter, text encoder and one shared decoder.
///
/// ASR: frames → speech encoder → length adapter → decoder.
/// MT: tokens → text encoder → decoder.
#[derive(Clone, Debug)]
pub struct MultimodalModel<T> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub frontend: Linear,
    pub speech_blocks: Vec<ConformerLiteBlock>,
    pub speech_norm: LayerNorm,
    pub length_adapter: MpsaLengthAdapter,
    pub embedding: ParamId,
    pub text_blocks: Vec<TextEncoderBlock>,
    pub text_norm: LayerNorm,
    pub decoder: TextDecoder,
    pub output_bias: ParamId,
    positions: Tensor<T>,
}

/// Per-group parameter counts.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct ParamCounts(pub BTreeMap<Group, usize>);

impl ParamCounts {
    pub fn get(&self, group: Group) -> usize {
        self.0.get(&group).copied().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.0.values().sum()
    }

    pub fn sum_of(&self, groups: &[Group]) -> usize {
        groups.iter().map(|&g| self.get(g)).sum()
    }
}

impl<T: Scalar> MultimodalModel<T> {
    /// Deterministic construction from `(cfg, seed)`. Adapters, when the
    /// config asks for them, start as exact identities. Every group starts
    /// trainable.
    pub fn build(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.model_dim;
        let mut store = ParamStore::new();
        let mut r = rng::rng(rng::split(seed, 1));
        let frontend = Linear::new(&mut store, "speech_encoder.frontend", Group::SpeechEncoder, cfg.feature_dim, d, &mut r);
        let speech_blocks = (0..cfg.num_encoder_layers)
            .map(|i| {
                ConformerLiteBlock::new(
                    &mut store,
                    &format!("speech_encoder.layers.{i}"),
                    Group::SpeechEncoder,
                    d,
                    cfg.num_heads,
                    cfg.ff_dim,
                    &mut r,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let speech_norm = LayerNorm::new(&mut store, "speech_encoder.norm", Group::SpeechEncoder, d);
        let length_adapter = MpsaLengthAdapter {
            layers: cfg
                .length_adapter
                .iter()
                .enumerate()
                .map(|(i, &geom)| {
                    MpsaLayer::new(
                        &mut store,
                        &format!("length_adapter.layers.{i}"),
                        Group::LengthAdapter,
                        d,
                        cfg.num_heads,
                        cfg.ff_dim,
                        geom,
                        &mut r,
                    )
                })
                .collect::<Result<Vec<_>>>()?,
        };
        let embedding = store.add("embeddings.table", Group::Embeddings, embedding_init(&mut r, cfg.vocab_size, d));
        let text_blocks = (0..cfg.num_text_encoder_layers)
            .map(|i| {
                TextEncoderBlock::new(
                    &mut store,
                    &format!("text_encoder.layers.{i}"),
                    Group::TextEncoder,
                    d,
                    cfg.num_heads,
                    cfg.ff_dim,
                    &mut r,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let text_norm = LayerNorm::new(&mut store, "text_encoder.norm", Group::TextEncoder, d);
        let blocks = (0..cfg.num_decoder_layers)
            .map(|i| {
                DecoderBlock::new(
                    &mut store,
                    &format!("text_decoder.layers.{i}"),
                    Group::TextDecoder,
                    d,
                    cfg.num_heads,
                    cfg.ff_dim,
                    &mut r,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let dec_norm = LayerNorm::new(&mut store, "text_decoder.norm", Group::TextDecoder, d);
        let output_bias = store.add("output_head.bias", Group::OutputHead, Tensor::zeros([cfg.vocab_size]));
        let max_len = cfg.max_frames.max(cfg.max_source_len).max(cfg.max_target_len);
        let mut model = MultimodalModel {
            config: cfg.clone(),
            store,
            frontend,
            speech_blocks,
            speech_norm,
            length_adapter,
            embedding,
            text_blocks,
            text_norm,
            decoder: TextDecoder {
                blocks,
                norm: dec_norm,
            },
            output_bias,
            positions: crate::nn::sinusoidal_positions(max_len, d),
        };
        if cfg.adapters {
            model.insert_adapters(rng::split(seed, 2));
        }
        Ok(model)
    }

    pub fn has_adapters(&self) -> bool {
        self.speech_blocks.iter().any(|b| b.adapter.is_some())
            || self.decoder.blocks.iter().any(|b| b.adapter.is_some())
    }

    /// Inserts an identity-initialized adapter after every encoder and
    /// decoder layer that lacks one.
    pub fn insert_adapters(&mut self, seed: u64) {
        let (d1, d2) = (self.config.model_dim, self.config.adapter_dim);
        let mut r = rng::rng(seed);
        for (i, block) in self.speech_blocks.iter_mut().enumerate() {
            if block.adapter.is_none() {
                block.adapter = Some(BottleneckAdapter::new(
                    &mut self.store,
                    &format!("encoder_adapters.{i}"),
                    Group::EncoderAdapters,
                    d1,
                    d2,
                    &mut r,
                ));
            }
        }
        for (i, block) in self.decoder.blocks.iter_mut().enumerate() {
            if block.adapter.is_none() {
                block.adapter = Some(BottleneckAdapter::new(
                    &mut self.store,
                    &format!("decoder_adapters.{i}"),
                    Group::DecoderAdapters,
                    d1,
                    d2,
                    &mut r,
                ));
            }
        }
        self.config.adapters = true;
    }

    /// Makes exactly `groups` trainable and freezes the rest.
    pub fn set_trainable(&mut self, groups: &BTreeSet<Group>) {
        for (_, p) in self.store.iter_mut() {
            p.trainable = groups.contains(&p.group);
        }
    }

    /// [`Self::set_trainable`] from group names.
    pub fn set_trainable_names<S: AsRef<str>>(&mut self, names: &[S]) -> Result<()> {
        let groups = names
            .iter()
            .map(|n| n.as_ref().parse())
            .collect::<Result<BTreeSet<Group>>>()?;
        self.set_trainable(&groups);
        Ok(())
    }

    pub fn trainable_groups(&self) -> BTreeSet<Group> {
        self.store.iter().filter(|(_, p)| p.trainable).map(|(_, p)| p.group).collect()
    }

    pub fn count_parameters(&self) -> ParamCounts {
        let mut counts = ParamCounts(Group::ALL.iter().map(|&g| (g, 0)).collect());
        for (_, p) in self.store.iter() {
            *counts.0.entry(p.group).or_default() += p.value.len();
        }
        counts
    }

    pub fn trainable_parameters(&self) -> usize {
        self.store.iter().filter(|(_, p)| p.trainable).map(|(_, p)| p.value.len()).sum()
    }

    fn position_rows(&self, len: usize) -> Result<Tensor<T>> {
        let d = self.config.model_dim;
        if len * d > self.positions.len() {
            return Err(Error::InvalidArgument(format!("sequence of length {len} exceeds position table")));
        }
        Tensor::new([len, d], self.positions.data()[..len * d].to_vec())
    }

    fn embed(&self, cx: &mut Ctx<'_, T>, tokens: &[usize]) -> Result<Var> {
        let table = cx.p(self.embedding);
        let e = cx.g.gather(table, tokens)?;
        let e = cx.g.scale(e, T::of((self.config.model_dim as f64).sqrt()));
        let pos = cx.g.input(self.position_rows(tokens.len())?);
        cx.g.add(e, pos)
    }

    /// Speech encoder output before the length adapter (`L × D1`).
    pub fn speech_encoder_forward(&self, cx: &mut Ctx<'_, T>, frames: &Tensor<T>) -> Result<Var> {
        let shape = frames.shape();
        if shape.len() != 2 || shape[1] != self.config.feature_dim || shape[0] == 0 {
            return Err(Error::shape("speech frames", shape, &[0, self.config.feature_dim]));
        }
        if shape[0] > self.config.max_frames {
            return Err(Error::InvalidArgument(format!(
                "{} frames exceed max_frames {}",
                shape[0], self.config.max_frames
            )));
        }
        let x = cx.g.input(frames.clone());
        let h = self.frontend.forward(cx, x)?;
        let pos = cx.g.input(self.position_rows(shape[0])?);
        let mut h = cx.g.add(h, pos)?;
        for block in &self.speech_blocks {
            h = encoder_block_forward(cx, h, block)?;
        }
        self.speech_norm.forward(cx, h)
    }

    /// Full speech path up to the decoder's memory (`L' × D1`).
    pub fn encode_speech(&self, cx: &mut Ctx<'_, T>, frames: &Tensor<T>) -> Result<Var> {
        let h = self.speech_encoder_forward(cx, frames)?;
        self.length_adapter.forward(cx, h)
    }

    pub fn encode_text(&self, cx: &mut Ctx<'_, T>, tokens: &[usize]) -> Result<Var> {
        if tokens.is_empty() || tokens.len() > self.config.max_source_len {
            return Err(Error::InvalidArgument(format!(
                "source length {} outside 1..={}",
                tokens.len(),
                self.config.max_source_len
            )));
        }
        let mut h = self.embed(cx, tokens)?;
        for block in &self.text_blocks {
            h = block.forward(cx, h)?;
        }
        self.text_norm.forward(cx, h)
    }

    pub fn encode(&self, cx: &mut Ctx<'_, T>, source: Source<'_, T>) -> Result<Var> {
        match source {
            Source::Speech(frames) => self.encode_speech(cx, frames),
            Source::Text(tokens) => self.encode_text(cx, tokens),
            Source::SpeechHidden(h) => {
                let h = cx.g.input(h.clone());
                self.length_adapter.forward(cx, h)
            }
            Source::Memory(m) => Ok(cx.g.input(m.clone())),
        }
    }

    /// Next-token logits (`len(prefix) × V`) for a decoder prefix.
    pub fn decode_logits(&self, cx: &mut Ctx<'_, T>, memory: Var, prefix: &[usize]) -> Result<Var> {
        let mut d = self.embed(cx, prefix)?;
        for block in &self.decoder.blocks {
            d = decoder_block_forward(cx, d, memory, block)?;
        }
        let d = self.decoder.norm.forward(cx, d)?;
        let table = cx.p(self.embedding);
        let logits = cx.g.matmul_t(d, table)?;
        let bias = cx.p(self.output_bias);
        cx.g.add_bias(logits, bias)
    }

    /// Summed teacher-forced cross-entropy of one example, and its token
    /// count (target plus end-of-sequence).
    pub fn example_loss(
        &self,
        cx: &mut Ctx<'_, T>,
        source: Source<'_, T>,
        target: &[usize],
    ) -> Result<(Var, usize)> {
        if target.is_empty() {
            return Err(Error::InvalidArgument("empty target".into()));
        }
        if target.len() + 1 > self.config.max_target_len {
            return Err(Error::InvalidArgument(format!(
                "target length {} exceeds max_target_len {}",
                target.len(),
                self.config.max_target_len
            )));
        }
        let memory = self.encode(cx, source)?;
        let mut prefix = Vec::with_capacity(target.len() + 1);
        prefix.push(BOS);
        prefix.extend_from_slice(target);
        let labels: Vec<Option<usize>> = target.iter().copied().chain([EOS]).map(Some).collect();
        let logits = self.decode_logits(cx, memory, &prefix)?;
        Ok((cx.g.cross_entropy_sum(logits, &labels)?, labels.len()))
    }

    /// Token-level mean cross-entropy over a batch.
    pub fn batch_loss(&self, cx: &mut Ctx<'_, T>, batch: &[(Source<'_, T>, &[usize])]) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let mut total = None;
        let mut tokens = 0;
        for (source, target) in batch {
            let (loss, n) = self.example_loss(cx, *source, target)?;
            tokens += n;
            total = Some(match total {
                Some(acc) => cx.g.add(acc, loss)?,
                None => loss,
            });
        }
        let total = total.expect("non-empty batch");
        Ok(cx.g.scale(total, T::of(1.0 / tokens as f64)))
    }

    /// Mean ASR loss of a batch of `(frames, target)` pairs.
    pub fn asr_forward_loss(&self, g: &mut Graph<T>, batch: &[(&Tensor<T>, &[usize])]) -> Result<Var> {
        let items: Vec<_> = batch.iter().map(|(f, t)| (Source::Speech(*f), *t)).collect();
        let mut cx = Ctx::new(g, &self.store);
        self.batch_loss(&mut cx, &items)
    }

    /// Mean MT loss of a batch of `(source tokens, target)` pairs.
    pub fn mt_forward_loss(&self, g: &mut Graph<T>, batch: &[(&[usize], &[usize])]) -> Result<Var> {
        let items: Vec<_> = batch.iter().map(|(s, t)| (Source::Text(s), *t)).collect();
        let mut cx = Ctx::new(g, &self.store);
        self.batch_loss(&mut cx, &items)
    }

    /// Evaluates `f` on a fresh inference-only tape and returns the value.
    pub fn infer(&self, f: impl FnOnce(&Self, &mut Ctx<'_, T>) -> Result<Var>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let mut cx = Ctx::inference(&mut g, &self.store);
        let v = f(self, &mut cx)?;
        Ok(g.value(v).clone())
    }

    /// Teacher-forced logits without gradient tracking.
    pub fn logits(&self, source: Source<'_, T>, prefix: &[usize]) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let mut cx = Ctx::inference(&mut g, &self.store);
        let memory = self.encode(&mut cx, source)?;
        let l = self.decode_logits(&mut cx, memory, prefix)?;
        Ok(g.value(l).clone())
    }
}

/// Embedding rows ~ N(0, 1/(4·D)); after the sqrt(D) input scaling the
/// entries have standard deviation 1/2, and tied output logits start small.
fn embedding_init<T: Scalar>(rng: &mut Rng, vocab: usize, dim: usize) -> Tensor<T> {
    let normal = Normal::new(0.0, 0.5 / (dim as f64).sqrt()).expect("valid std");
    let data = (0..vocab * dim).map(|_| T::of(normal.sample(rng))).collect();
    Tensor::from_parts(vec![vocab, dim], data)
}
