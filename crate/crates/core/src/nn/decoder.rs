use crate::error::{Error, Result};
use crate::params::{Ctx, Group, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Scalar, Var};

use super::adapter::{apply_adapter, BottleneckAdapter};
use super::attention::{causal_mask, multi_head_attention, AttentionParams};
use super::layers::{FeedForward, LayerNorm};

/// Transformer decoder layer: causal self-attention, cross-attention over
/// the encoder output, feed-forward, then an optional adapter.
#[derive(Clone, Debug)]
pub struct DecoderBlock {
    pub self_norm: LayerNorm,
    pub self_attn: AttentionParams,
    pub cross_norm: LayerNorm,
    pub cross_attn: AttentionParams,
    pub ff_norm: LayerNorm,
    pub ff: FeedForward,
    pub adapter: Option<BottleneckAdapter>,
    pub causal: bool,
}

impl DecoderBlock {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        group: Group,
        dim: usize,
        heads: usize,
        ff_dim: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        Ok(DecoderBlock {
            self_norm: LayerNorm::new(store, &format!("{name}.self_norm"), group, dim),
            self_attn: AttentionParams::new(store, &format!("{name}.self_attn"), group, dim, heads, rng)?,
            cross_norm: LayerNorm::new(store, &format!("{name}.cross_norm"), group, dim),
            cross_attn: AttentionParams::new(store, &format!("{name}.cross_attn"), group, dim, heads, rng)?,
            ff_norm: LayerNorm::new(store, &format!("{name}.ff_norm"), group, dim),
            ff: FeedForward::new(store, &format!("{name}.ff"), group, dim, ff_dim, rng),
            adapter: None,
            causal: true,
        })
    }

    /// `D = d + MHA(LN(d), LN(d), LN(d))`, causally masked.
    pub fn self_attention_sublayer<T: Scalar>(&self, cx: &mut Ctx<'_, T>, d: Var) -> Result<Var> {
        let len = cx.g.value(d).rows();
        let n = self.self_norm.forward(cx, d)?;
        let mask = self.causal.then(|| causal_mask(len));
        let a = multi_head_attention(cx, n, n, n, &self.self_attn, mask.as_deref())?;
        cx.g.add(d, a)
    }

    /// `D̂ = D + MHA(LN(D), h, h)` with `h` the final encoder output.
    pub fn cross_attention_sublayer<T: Scalar>(
        &self,
        cx: &mut Ctx<'_, T>,
        d: Var,
        enc_out: Var,
    ) -> Result<Var> {
        let n = self.cross_norm.forward(cx, d)?;
        let a = multi_head_attention(cx, n, enc_out, enc_out, &self.cross_attn, None)?;
        cx.g.add(d, a)
    }

    /// `d̂ = D̂ + FFN(LN(D̂))`.
    pub fn ffn_sublayer<T: Scalar>(&self, cx: &mut Ctx<'_, T>, d: Var) -> Result<Var> {
        let n = self.ff_norm.forward(cx, d)?;
        let f = self.ff.forward(cx, n)?;
        cx.g.add(d, f)
    }
}

pub fn decoder_block_forward<T: Scalar>(
    cx: &mut Ctx<'_, T>,
    d_prev: Var,
    enc_out: Var,
    block: &DecoderBlock,
) -> Result<Var> {
    let dim = block.self_attn.dim;
    let (ds, es) = (cx.g.value(d_prev).shape(), cx.g.value(enc_out).shape());
    if ds.len() != 2 || ds[1] != dim || es.len() != 2 || es[1] != dim {
        return Err(Error::shape("decoder block", ds, es));
    }
    let d = block.self_attention_sublayer(cx, d_prev)?;
    let d = block.cross_attention_sublayer(cx, d, enc_out)?;
    let d_hat = block.ffn_sublayer(cx, d)?;
    match &block.adapter {
        Some(a) => apply_adapter(cx, d_hat, a),
        None => Ok(d_hat),
    }
}
