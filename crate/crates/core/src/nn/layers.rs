use crate::error::Result;
use crate::params::{xavier_uniform, Ctx, Group, ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor, Var};

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, group: Group, dim: usize) -> Self {
        LayerNorm {
            gain: store.add(format!("{name}.gain"), group, Tensor::full([dim], T::one())),
            bias: store.add(format!("{name}.bias"), group, Tensor::zeros([dim])),
        }
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let (g, b) = (cx.p(self.gain), cx.p(self.bias));
        cx.g.layernorm(x, g, b)
    }
}

/// Affine map `x·W + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        group: Group,
        d_in: usize,
        d_out: usize,
        rng: &mut Rng,
    ) -> Self {
        Linear {
            weight: store.add(format!("{name}.weight"), group, xavier_uniform(rng, d_in, d_out)),
            bias: store.add(format!("{name}.bias"), group, Tensor::zeros([d_out])),
        }
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let (w, b) = (cx.p(self.weight), cx.p(self.bias));
        let y = cx.g.matmul(x, w)?;
        cx.g.add_bias(y, b)
    }
}

/// Position-wise feed-forward: `gelu(x·W1 + b1)·W2 + b2`.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        group: Group,
        dim: usize,
        hidden: usize,
        rng: &mut Rng,
    ) -> Self {
        FeedForward {
            inner: Linear::new(store, &format!("{name}.inner"), group, dim, hidden, rng),
            outer: Linear::new(store, &format!("{name}.outer"), group, hidden, dim, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let h = self.inner.forward(cx, x)?;
        let h = cx.g.gelu(h);
        self.outer.forward(cx, h)
    }
}

/// Fixed sinusoidal position table, `len × dim`.
pub fn sinusoidal_positions<T: Scalar>(len: usize, dim: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(len * dim);
    for pos in 0..len {
        for i in 0..dim {
            let rate = 1.0 / 10_000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let angle = pos as f64 * rate;
            data.push(T::of(if i % 2 == 0 { angle.sin() } else { angle.cos() }));
        }
    }
    Tensor::from_parts(vec![len, dim], data)
}
