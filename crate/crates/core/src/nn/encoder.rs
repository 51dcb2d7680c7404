use crate::error::{Error, Result};
use crate::params::{xavier_uniform_shaped, Ctx, Group, ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor, Var};

use super::adapter::{apply_adapter, BottleneckAdapter};
use super::attention::{multi_head_attention, AttentionParams};
use super::layers::{FeedForward, LayerNorm};

/// Kernel width of the depthwise convolution sublayer.
pub const DEPTHWISE_KERNEL: usize = 3;

/// Conformer-style speech encoder layer reduced to its essentials:
/// self-attention, a depthwise convolution, a feed-forward network, and an
/// optional adapter, each pre-normalized with a residual connection.
#[derive(Clone, Debug)]
pub struct ConformerLiteBlock {
    pub attn_norm: LayerNorm,
    pub attn: AttentionParams,
    pub conv_norm: LayerNorm,
    pub conv_weight: ParamId,
    pub conv_bias: ParamId,
    pub ff_norm: LayerNorm,
    pub ff: FeedForward,
    pub adapter: Option<BottleneckAdapter>,
}

impl ConformerLiteBlock {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        group: Group,
        dim: usize,
        heads: usize,
        ff_dim: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        Ok(ConformerLiteBlock {
            attn_norm: LayerNorm::new(store, &format!("{name}.attn_norm"), group, dim),
            attn: AttentionParams::new(store, &format!("{name}.attn"), group, dim, heads, rng)?,
            conv_norm: LayerNorm::new(store, &format!("{name}.conv_norm"), group, dim),
            conv_weight: store.add(
                format!("{name}.conv.weight"),
                group,
                xavier_uniform_shaped(rng, DEPTHWISE_KERNEL, DEPTHWISE_KERNEL, vec![DEPTHWISE_KERNEL, dim]),
            ),
            conv_bias: store.add(format!("{name}.conv.bias"), group, Tensor::zeros([dim])),
            ff_norm: LayerNorm::new(store, &format!("{name}.ff_norm"), group, dim),
            ff: FeedForward::new(store, &format!("{name}.ff"), group, dim, ff_dim, rng),
            adapter: None,
        })
    }

    /// `H = h + MHA(LN(h))`.
    pub fn attention_sublayer<T: Scalar>(&self, cx: &mut Ctx<'_, T>, h: Var) -> Result<Var> {
        let n = self.attn_norm.forward(cx, h)?;
        let a = multi_head_attention(cx, n, n, n, &self.attn, None)?;
        cx.g.add(h, a)
    }

    /// `C = H + gelu(DepthwiseConv(LN(H)))`.
    pub fn conv_sublayer<T: Scalar>(&self, cx: &mut Ctx<'_, T>, h: Var) -> Result<Var> {
        let n = self.conv_norm.forward(cx, h)?;
        let (w, b) = (cx.p(self.conv_weight), cx.p(self.conv_bias));
        let c = cx.g.depthwise_conv(n, w)?;
        let c = cx.g.add_bias(c, b)?;
        let c = cx.g.gelu(c);
        cx.g.add(h, c)
    }

    /// `ĥ = C + FFN(LN(C))`.
    pub fn ffn_sublayer<T: Scalar>(&self, cx: &mut Ctx<'_, T>, c: Var) -> Result<Var> {
        let n = self.ff_norm.forward(cx, c)?;
        let f = self.ff.forward(cx, n)?;
        cx.g.add(c, f)
    }
}

pub fn encoder_block_forward<T: Scalar>(
    cx: &mut Ctx<'_, T>,
    h_prev: Var,
    block: &ConformerLiteBlock,
) -> Result<Var> {
    let shape = cx.g.value(h_prev).shape();
    if shape.len() != 2 || shape[1] != block.attn.dim {
        return Err(Error::shape("encoder block", shape, &[shape[0], block.attn.dim]));
    }
    let h = block.attention_sublayer(cx, h_prev)?;
    let c = block.conv_sublayer(cx, h)?;
    let h_hat = block.ffn_sublayer(cx, c)?;
    match &block.adapter {
        Some(a) => apply_adapter(cx, h_hat, a),
        None => Ok(h_hat),
    }
}

/// Plain pre-norm transformer encoder layer used by the text encoder.
#[derive(Clone, Debug)]
pub struct TextEncoderBlock {
    pub attn_norm: LayerNorm,
    pub attn: AttentionParams,
    pub ff_norm: LayerNorm,
    pub ff: FeedForward,
}

impl TextEncoderBlock {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        group: Group,
        dim: usize,
        heads: usize,
        ff_dim: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        Ok(TextEncoderBlock {
            attn_norm: LayerNorm::new(store, &format!("{name}.attn_norm"), group, dim),
            attn: AttentionParams::new(store, &format!("{name}.attn"), group, dim, heads, rng)?,
            ff_norm: LayerNorm::new(store, &format!("{name}.ff_norm"), group, dim),
            ff: FeedForward::new(store, &format!("{name}.ff"), group, dim, ff_dim, rng),
        })
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let n = self.attn_norm.forward(cx, x)?;
        let a = multi_head_attention(cx, n, n, n, &self.attn, None)?;
        let x = cx.g.add(x, a)?;
        let n = self.ff_norm.forward(cx, x)?;
        let f = self.ff.forward(cx, n)?;
        cx.g.add(x, f)
    }
}
