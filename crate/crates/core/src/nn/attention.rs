use crate::error::{Error, Result};
use crate::params::{xavier_uniform, Ctx, Group, ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Scalar, Var};

/// Projections of a bias-free multi-head attention.
#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub num_heads: usize,
    pub dim: usize,
}

impl AttentionParams {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        group: Group,
        dim: usize,
        num_heads: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if num_heads == 0 || !dim.is_multiple_of(num_heads) {
            return Err(Error::Config(format!(
                "model dim {dim} is not divisible by {num_heads} heads"
            )));
        }
        let mut proj = |suffix: &str| {
            store.add(format!("{name}.{suffix}"), group, xavier_uniform(rng, dim, dim))
        };
        Ok(AttentionParams {
            wq: proj("wq"),
            wk: proj("wk"),
            wv: proj("wv"),
            wo: proj("wo"),
            num_heads,
            dim,
        })
    }
}

/// Lower-triangular keep-mask for causal self-attention over `len` steps.
pub fn causal_mask(len: usize) -> Vec<bool> {
    (0..len * len).map(|i| i % len <= i / len).collect()
}

/// Scaled dot-product attention per head with `1/sqrt(D/h)` scaling; heads
/// are concatenated and projected by `W^O`. `keep` is an `Lq × Lk` mask
/// where `false` entries receive zero weight.
pub fn multi_head_attention<T: Scalar>(
    cx: &mut Ctx<'_, T>,
    q_in: Var,
    k_in: Var,
    v_in: Var,
    params: &AttentionParams,
    keep: Option<&[bool]>,
) -> Result<Var> {
    let d = params.dim;
    let (qs, ks, vs) = (
        cx.g.value(q_in).shape().to_vec(),
        cx.g.value(k_in).shape().to_vec(),
        cx.g.value(v_in).shape().to_vec(),
    );
    if qs.len() != 2 || qs[1] != d {
        return Err(Error::shape("attention query", &qs, &[qs[0], d]));
    }
    if ks.len() != 2 || ks[1] != d || ks != vs {
        return Err(Error::shape("attention key/value", &ks, &vs));
    }
    let (lq, lk) = (qs[0], ks[0]);
    if let Some(mask) = keep {
        if mask.len() != lq * lk {
            return Err(Error::shape("attention mask", &[mask.len()], &[lq, lk]));
        }
    }
    let (wq, wk, wv, wo) = (cx.p(params.wq), cx.p(params.wk), cx.p(params.wv), cx.p(params.wo));
    let q = cx.g.matmul(q_in, wq)?;
    let k = cx.g.matmul(k_in, wk)?;
    let v = cx.g.matmul(v_in, wv)?;
    let cat = cx.g.attention(q, k, v, params.num_heads, keep)?;
    cx.g.matmul(cat, wo)
}
