//! Central finite-difference gradient checking over a [`ParamStore`].

use crate::error::Result;
use crate::params::{ParamStore, Parameter};
use crate::tensor::{Graph, Tensor, Var};

/// Worst normwise relative error found, and which parameter produced it.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub worst: f64,
    pub worst_param: String,
    pub checked: usize,
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or 0 when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = norm(analytic).max(norm(numeric));
    if scale < 1e-12 {
        0.0
    } else {
        diff / scale
    }
}

/// Compares tape gradients of `loss` against central differences with step
/// `eps` for every trainable parameter in `store`.
pub fn check_store<F>(store: &mut ParamStore<f64>, eps: f64, loss: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut g = Graph::new();
    let l = loss(&mut g, store)?;
    g.backward(l)?;
    store.zero_grads();
    store.accumulate_grads(&g);

    let eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let l = loss(&mut g, store)?;
        Ok(g.value(l).item())
    };

    let ids: Vec<_> = store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    let mut report = GradCheck {
        worst: 0.0,
        worst_param: String::new(),
        checked: 0,
    };
    for id in ids {
        let original = store.get(id).value.clone();
        let analytic = store
            .get(id)
            .grad
            .clone()
            .unwrap_or_else(|| vec![0.0; original.len()]);
        let mut numeric = vec![0.0; original.len()];
        for i in 0..original.len() {
            let mut data = original.data().to_vec();
            data[i] += eps;
            set(store.get_mut(id), &original, data.clone());
            let plus = eval(store)?;
            data[i] -= 2.0 * eps;
            set(store.get_mut(id), &original, data);
            let minus = eval(store)?;
            numeric[i] = (plus - minus) / (2.0 * eps);
        }
        store.get_mut(id).value = original;
        let err = relative_error(&analytic, &numeric);
        report.checked += 1;
        if err > report.worst || report.worst_param.is_empty() {
            report.worst = err;
            report.worst_param = store.get(id).name.clone();
        }
    }
    Ok(report)
}

fn set(p: &mut Parameter<f64>, like: &Tensor<f64>, data: Vec<f64>) {
    p.value = Tensor::from_parts(like.shape().to_vec(), data);
}
