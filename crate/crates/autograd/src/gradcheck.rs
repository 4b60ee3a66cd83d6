//! Central finite-difference verification of tape gradients (run in `f64`).

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::param::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// `(tensor label, ‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂, 1e-6))`
    pub errors: Vec<(String, f64)>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.errors.iter().map(|e| e.1).fold(0.0, f64::max)
    }
}

fn rel_error(a: &[f64], n: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn: f64 = n.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nn).max(1e-6)
}

/// Compares reverse-mode gradients of the scalar built by `f` against central
/// differences with step `h`, for every input tensor and every trainable parameter.
///
/// `f` must be deterministic (reseed any dropout stream inside it).
pub fn check_gradients<F>(
    store: &mut ParamStore<f64>,
    inputs: &[Tensor<f64>],
    h: f64,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>, &[Var]) -> Result<Var>,
{
    let eval = |store: &ParamStore<f64>, inputs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let out = f(&mut g, store, &vars)?;
        Ok(g.value(out).data()[0])
    };

    store.zero_grad();
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input_with_grad(t.clone())).collect();
    let out = f(&mut g, store, &vars)?;
    let grads = g.backward(out, store)?;

    let mut errors = Vec::new();
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[k])
            .map(|t| t.data().to_vec())
            .unwrap_or_else(|| vec![0.0; input.numel()]);
        let mut numeric = vec![0.0; input.numel()];
        let mut probe = inputs.to_vec();
        for i in 0..input.numel() {
            let orig = input.data()[i];
            probe[k].data_mut()[i] = orig + h;
            let up = eval(store, &probe)?;
            probe[k].data_mut()[i] = orig - h;
            let down = eval(store, &probe)?;
            probe[k].data_mut()[i] = orig;
            numeric[i] = (up - down) / (2.0 * h);
        }
        errors.push((format!("input{k}"), rel_error(&analytic, &numeric)));
    }

    let ids: Vec<_> = store.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect();
    for id in ids {
        let analytic = store.grad(id).data().to_vec();
        let mut numeric = vec![0.0; analytic.len()];
        let mut probe = store.clone();
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = store.value(id).data()[i];
            probe.get_mut(id).value.data_mut()[i] = orig + h;
            let up = eval(&probe, inputs)?;
            probe.get_mut(id).value.data_mut()[i] = orig - h;
            let down = eval(&probe, inputs)?;
            probe.get_mut(id).value.data_mut()[i] = orig;
            *slot = (up - down) / (2.0 * h);
        }
        errors.push((store.get(id).name.clone(), rel_error(&analytic, &numeric)));
    }
    Ok(GradCheckReport { errors })
}
