//! The length adapter: a stack of multi-head pooled self-attention (MPSA)
//! layers.
//!
//! Each layer pools its input once with a strided 1-D convolution to get
//! `X̂ (L' × D)`. That single `X̂` feeds the query, key and value
//! projections and is also the residual added to the attention output; a
//! feed-forward sublayer follows. Stacking layers composes the length map
//! `L' = floor((L + 2p - k) / s) + 1`.

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{xavier_uniform_shaped, Ctx, Group, ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::{conv_out_len, Scalar, Tensor, Var};

use super::attention::{multi_head_attention, AttentionParams};
use super::layers::{FeedForward, LayerNorm};

/// Pooling geometry: kernel, stride, padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl PoolGeometry {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        PoolGeometry {
            kernel,
            stride,
            padding,
        }
    }

    pub fn out_len(&self, len: usize) -> Result<usize> {
        conv_out_len(len, self.kernel, self.stride, self.padding)
    }
}

#[derive(Debug)]
pub struct MpsaLayer {
    pub geometry: PoolGeometry,
    pub pool_weight: ParamId,
    pub pool_bias: ParamId,
    pub attn_norm: LayerNorm,
    pub attn: AttentionParams,
    pub ff_norm: LayerNorm,
    pub ff: FeedForward,
    pool_calls: AtomicUsize,
}

impl Clone for MpsaLayer {
    fn clone(&self) -> Self {
        MpsaLayer {
            geometry: self.geometry,
            pool_weight: self.pool_weight,
            pool_bias: self.pool_bias,
            attn_norm: self.attn_norm.clone(),
            attn: self.attn.clone(),
            ff_norm: self.ff_norm.clone(),
            ff: self.ff.clone(),
            pool_calls: AtomicUsize::new(self.pool_calls()),
        }
    }
}

impl MpsaLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        group: Group,
        dim: usize,
        heads: usize,
        ff_dim: usize,
        geometry: PoolGeometry,
        rng: &mut Rng,
    ) -> Result<Self> {
        if geometry.kernel == 0 || geometry.stride == 0 {
            return Err(Error::Geometry(format!("{geometry:?}")));
        }
        let k = geometry.kernel;
        Ok(MpsaLayer {
            geometry,
            pool_weight: store.add(
                format!("{name}.pool.weight"),
                group,
                xavier_uniform_shaped(rng, k * dim, dim, vec![k * dim, dim]),
            ),
            pool_bias: store.add(format!("{name}.pool.bias"), group, Tensor::zeros([dim])),
            attn_norm: LayerNorm::new(store, &format!("{name}.attn_norm"), group, dim),
            attn: AttentionParams::new(store, &format!("{name}.attn"), group, dim, heads, rng)?,
            ff_norm: LayerNorm::new(store, &format!("{name}.ff_norm"), group, dim),
            ff: FeedForward::new(store, &format!("{name}.ff"), group, dim, ff_dim, rng),
            pool_calls: AtomicUsize::new(0),
        })
    }

    /// Number of times the shared pooling module has run.
    pub fn pool_calls(&self) -> usize {
        self.pool_calls.load(Ordering::Relaxed)
    }

    /// `X̂ = SharedPooling(X)`.
    pub fn pool<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        self.pool_calls.fetch_add(1, Ordering::Relaxed);
        let (w, b) = (cx.p(self.pool_weight), cx.p(self.pool_bias));
        let g = self.geometry;
        cx.g.conv1d(x, w, Some(b), g.kernel, g.stride, g.padding)
    }
}

pub fn mpsa_layer_forward<T: Scalar>(cx: &mut Ctx<'_, T>, x: Var, layer: &MpsaLayer) -> Result<Var> {
    let pooled = layer.pool(cx, x)?;
    let n = layer.attn_norm.forward(cx, pooled)?;
    let a = multi_head_attention(cx, n, n, n, &layer.attn, None)?;
    let y = cx.g.add(pooled, a)?;
    let n = layer.ff_norm.forward(cx, y)?;
    let f = layer.ff.forward(cx, n)?;
    cx.g.add(y, f)
}

#[derive(Clone, Debug)]
pub struct MpsaLengthAdapter {
    pub layers: Vec<MpsaLayer>,
}

impl MpsaLengthAdapter {
    /// Output length after every layer, or a geometry error.
    pub fn out_len(&self, len: usize) -> Result<usize> {
        self.layers
            .iter()
            .try_fold(len, |l, layer| layer.geometry.out_len(l))
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        self.layers
            .iter()
            .try_fold(x, |h, layer| mpsa_layer_forward(cx, h, layer))
    }
}
