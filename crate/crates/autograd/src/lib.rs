//! Minimal reverse-mode automatic differentiation over dense NCHW tensors.
//!
//! Provides exactly what a batch-normalized, dropout-regularized U-Net needs:
//! 3×3 / 1×1 convolutions, 2×2 stride-2 transposed convolution, batch norm,
//! ReLU, 2×2 max pooling, ×2 bilinear upsampling, dropout, channel concat,
//! sigmoid, binary cross-entropy, and Adam/SGD.
//!
//! ```
//! use fbpick_autograd::{Graph, ParamStore, Tensor};
//!
//! let mut store = ParamStore::<f32>::new();
//! let mut g = Graph::new();
//! let x = g.input_with_grad(Tensor::new(&[1, 1, 1, 2], vec![-1.0, 2.0]).unwrap());
//! let y = g.relu(x);
//! let loss = g.sum(y);
//! let grads = g.backward(loss, &mut store).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[0.0, 1.0]);
//! ```

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod graph;
mod kernels;
pub mod layer;
pub mod optim;
pub mod param;
pub mod scalar;
pub mod tensor;

pub use error::{AutogradError, Result};
pub use graph::{bce_value, Gradients, Graph, RunningStatUpdate, Var, BCE_EPS};
pub use layer::{Layer, LayerSpec, Mode, BN_EPS, BN_MOMENTUM};
pub use optim::{Optimizer, OptimizerKind};
pub use param::{Param, ParamId, ParamStore};
pub use scalar::Scalar;
pub use tensor::Tensor;
