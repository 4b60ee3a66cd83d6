use fbpick_autograd::{Graph, Mode, Optimizer, Tensor, BN_MOMENTUM};
use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::Rng;

use super::labels::TrainingMask;
use super::model::BayesUNet;
use crate::error::{invalid, FbError, Result};
use crate::precondition::FeatureStack;

/// One network input with its rendered target.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    /// `C × T' × N`.
    pub input: Array3<f32>,
    pub target: TrainingMask,
}

/// `[1, C, T', N]` tensor of a feature stack.
pub fn stack_tensor(stack: &FeatureStack) -> Tensor<f32> {
    let (c, t, n) = stack.channels.dim();
    let data = stack.channels.as_standard_layout().iter().copied().collect();
    Tensor::new(&[1, c, t, n], data).expect("stack dims")
}

fn batch_tensors(samples: &[&TrainSample]) -> Result<(Tensor<f32>, Tensor<f32>, Tensor<f32>)> {
    let (c, t, n) = samples[0].input.dim();
    let mut x = Vec::with_capacity(samples.len() * c * t * n);
    let mut y = Vec::with_capacity(samples.len() * t * n);
    let mut w = Vec::with_capacity(samples.len() * t * n);
    for s in samples {
        if s.input.dim() != (c, t, n) || s.target.mask.dim() != (t, n) || s.target.column_weights.len() != n {
            return invalid("dataset", "samples in a batch must share one shape");
        }
        x.extend(s.input.as_standard_layout().iter());
        y.extend(s.target.mask.as_standard_layout().iter());
        for _ in 0..t {
            w.extend_from_slice(&s.target.column_weights);
        }
    }
    let b = samples.len();
    Ok((
        Tensor::new(&[b, c, t, n], x)?,
        Tensor::new(&[b, 1, t, n], y)?,
        Tensor::new(&[b, 1, t, n], w)?,
    ))
}

/// One shuffled pass over `data` in Train mode. Returns the sample-weighted mean
/// of the per-batch masked BCE losses.
pub fn train_epoch<R: Rng>(
    model: &mut BayesUNet,
    data: &[TrainSample],
    opt: &mut Optimizer<f32>,
    batch_size: usize,
    rng: &mut R,
) -> Result<f64> {
    if data.is_empty() {
        return invalid("dataset", "training set is empty");
    }
    if batch_size == 0 {
        return invalid("batch_size", "must be at least 1");
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let mut total = 0.0;
    for chunk in order.chunks(batch_size) {
        let batch: Vec<&TrainSample> = chunk.iter().map(|&i| &data[i]).collect();
        let (x, y, w) = batch_tensors(&batch)?;
        let mut g = Graph::new();
        let input = g.input(x);
        let logits = model.forward_logits(&mut g, input, Mode::Train, rng)?;
        let loss = g.bce_with_logits(logits, &y, &w)?;
        let value = f64::from(g.value(loss).data()[0]);
        if !value.is_finite() {
            return Err(FbError::Numeric(format!("training loss became {value}")));
        }
        let store = model.store_mut();
        store.zero_grad();
        g.backward(loss, store)?;
        g.commit_running_stats(store, BN_MOMENTUM);
        opt.step(store)?;
        total += value * chunk.len() as f64;
    }
    Ok(total / data.len() as f64)
}
