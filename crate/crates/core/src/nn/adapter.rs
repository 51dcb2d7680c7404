use crate::error::{Error, Result};
use crate::params::{xavier_uniform, Ctx, Group, ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor, Var};

/// Residual bottleneck adapter: `x + gelu(x·W_down + b_down)·W_up + b_up`.
///
/// The up-projection starts at zero, so a freshly inserted adapter is an
/// exact identity.
#[derive(Clone, Debug)]
pub struct BottleneckAdapter {
    pub w_down: ParamId,
    pub b_down: ParamId,
    pub w_up: ParamId,
    pub b_up: ParamId,
    pub model_dim: usize,
    pub bottleneck_dim: usize,
}

impl BottleneckAdapter {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        group: Group,
        model_dim: usize,
        bottleneck_dim: usize,
        rng: &mut Rng,
    ) -> Self {
        BottleneckAdapter {
            w_down: store.add(
                format!("{name}.w_down"),
                group,
                xavier_uniform(rng, model_dim, bottleneck_dim),
            ),
            b_down: store.add(format!("{name}.b_down"), group, Tensor::zeros([bottleneck_dim])),
            w_up: store.add(
                format!("{name}.w_up"),
                group,
                Tensor::zeros([bottleneck_dim, model_dim]),
            ),
            b_up: store.add(format!("{name}.b_up"), group, Tensor::zeros([model_dim])),
            model_dim,
            bottleneck_dim,
        }
    }

    /// `2·D1·D2 + D1 + D2`.
    pub fn parameter_count(model_dim: usize, bottleneck_dim: usize) -> usize {
        2 * model_dim * bottleneck_dim + model_dim + bottleneck_dim
    }
}

pub fn apply_adapter<T: Scalar>(
    cx: &mut Ctx<'_, T>,
    x: Var,
    adapter: &BottleneckAdapter,
) -> Result<Var> {
    let d = cx.g.value(x).cols();
    if d != adapter.model_dim {
        return Err(Error::shape(
            "adapter",
            cx.g.value(x).shape(),
            &[adapter.model_dim, adapter.bottleneck_dim],
        ));
    }
    let (wd, bd, wu, bu) = (
        cx.p(adapter.w_down),
        cx.p(adapter.b_down),
        cx.p(adapter.w_up),
        cx.p(adapter.b_up),
    );
    let h = cx.g.matmul(x, wd)?;
    let h = cx.g.add_bias(h, bd)?;
    let h = cx.g.gelu(h);
    let h = cx.g.matmul(h, wu)?;
    let h = cx.g.add_bias(h, bu)?;
    cx.g.add(x, h)
}
