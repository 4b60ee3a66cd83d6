//! The closed set of layer kinds a segmentation U-Net is assembled from.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AutogradError, Result};
use crate::graph::{Graph, Var};
use crate::param::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// How stochastic and statistics-dependent layers behave during a pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Dropout masks sampled, batch-norm uses batch statistics.
    Train,
    /// Dropout is the identity, batch-norm uses running statistics.
    EvalDeterministic,
    /// Dropout masks sampled (Monte Carlo dropout), batch-norm running statistics frozen.
    EvalMcSample,
}

impl Mode {
    pub fn samples_dropout(self) -> bool {
        matches!(self, Mode::Train | Mode::EvalMcSample)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// 3×3, stride 1, padding 1.
    Conv3x3 { in_ch: usize, out_ch: usize },
    Conv1x1 { in_ch: usize, out_ch: usize },
    BatchNorm { channels: usize },
    Relu,
    /// 2×2 window, stride 2.
    MaxPool2,
    /// `p` is the drop probability.
    Dropout { p: f64 },
    /// 2×2 kernel, stride 2.
    ConvTranspose2x2s2 { in_ch: usize, out_ch: usize },
    BilinearUp2,
    Sigmoid,
    /// Channel concatenation of two inputs.
    Concat,
}

impl LayerSpec {
    pub fn is_conv(&self) -> bool {
        matches!(self, LayerSpec::Conv3x3 { .. } | LayerSpec::Conv1x1 { .. })
    }

    pub fn arity(&self) -> usize {
        if matches!(self, LayerSpec::Concat) {
            2
        } else {
            1
        }
    }
}

/// A [`LayerSpec`] bound to its parameters in a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Layer {
    pub name: String,
    pub spec: LayerSpec,
    params: Vec<ParamId>,
}

fn uniform<T: Scalar, R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64_lossy(rng.random_range(-bound..=bound)))
        .collect();
    Tensor::new(shape, data).expect("shape product matches")
}

impl Layer {
    /// Registers the layer's parameters. Convolution kernels get Kaiming-uniform
    /// fan-in initialization (`U(±sqrt(6 / fan_in))`), biases zero, batch-norm `γ = 1, β = 0`.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        name: impl Into<String>,
        spec: LayerSpec,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<Self> {
        let name = name.into();
        let mut params = Vec::new();
        match spec {
            LayerSpec::Conv3x3 { in_ch, out_ch } | LayerSpec::Conv1x1 { in_ch, out_ch } => {
                let k = if matches!(spec, LayerSpec::Conv3x3 { .. }) { 3 } else { 1 };
                check_channels(in_ch, out_ch)?;
                let bound = (6.0 / (in_ch * k * k) as f64).sqrt();
                params.push(store.add(format!("{name}.weight"), uniform(&[out_ch, in_ch, k, k], bound, rng), true));
                params.push(store.add(format!("{name}.bias"), Tensor::zeros(&[out_ch]), true));
            }
            LayerSpec::ConvTranspose2x2s2 { in_ch, out_ch } => {
                check_channels(in_ch, out_ch)?;
                let bound = (6.0 / in_ch as f64).sqrt();
                params.push(store.add(format!("{name}.weight"), uniform(&[in_ch, out_ch, 2, 2], bound, rng), true));
                params.push(store.add(format!("{name}.bias"), Tensor::zeros(&[out_ch]), true));
            }
            LayerSpec::BatchNorm { channels } => {
                check_channels(channels, channels)?;
                params.push(store.add(format!("{name}.gamma"), Tensor::full(&[channels], T::one()), true));
                params.push(store.add(format!("{name}.beta"), Tensor::zeros(&[channels]), true));
                params.push(store.add(format!("{name}.running_mean"), Tensor::zeros(&[channels]), false));
                params.push(store.add(format!("{name}.running_var"), Tensor::full(&[channels], T::one()), false));
            }
            LayerSpec::Dropout { p } if !(0.0..1.0).contains(&p) => {
                return Err(AutogradError::Invalid {
                    op: "dropout",
                    msg: format!("drop probability {p} outside [0, 1)"),
                })
            }
            _ => {}
        }
        Ok(Self { name, spec, params })
    }

    pub fn params(&self) -> &[ParamId] {
        &self.params
    }

    pub fn forward<T: Scalar, R: Rng + ?Sized>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        inputs: &[Var],
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        if inputs.len() != self.spec.arity() {
            return Err(AutogradError::Invalid {
                op: "layer",
                msg: format!("{} expects {} input(s), got {}", self.name, self.spec.arity(), inputs.len()),
            });
        }
        let x = inputs[0];
        match self.spec {
            LayerSpec::Conv3x3 { .. } | LayerSpec::Conv1x1 { .. } => {
                g.conv2d(store, x, self.params[0], Some(self.params[1]))
            }
            LayerSpec::ConvTranspose2x2s2 { .. } => g.conv_transpose2(store, x, self.params[0], self.params[1]),
            LayerSpec::BatchNorm { .. } => g.batch_norm(
                store,
                x,
                self.params[0],
                self.params[1],
                self.params[2],
                self.params[3],
                mode == Mode::Train,
                BN_EPS,
            ),
            LayerSpec::Relu => Ok(g.relu(x)),
            LayerSpec::Sigmoid => Ok(g.sigmoid(x)),
            LayerSpec::MaxPool2 => g.max_pool2(x),
            LayerSpec::BilinearUp2 => g.upsample_bilinear2(x),
            LayerSpec::Dropout { p } => {
                if mode.samples_dropout() {
                    g.dropout(x, p, Some(rng))
                } else {
                    g.dropout::<R>(x, p, None)
                }
            }
            LayerSpec::Concat => g.concat(x, inputs[1]),
        }
    }
}

fn check_channels(a: usize, b: usize) -> Result<()> {
    if a == 0 || b == 0 {
        return Err(AutogradError::Invalid {
            op: "layer",
            msg: "channel counts must be positive".into(),
        });
    }
    Ok(())
}
