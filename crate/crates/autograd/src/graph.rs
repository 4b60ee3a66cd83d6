//! Operation tape and reverse-mode differentiation.

use rand::Rng;

use crate::error::{shape_err, AutogradError, Result};
use crate::kernels::{conv, norm, pool};
use crate::param::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T: Scalar> {
    Leaf,
    Conv {
        x: Var,
        w: ParamId,
        b: Option<ParamId>,
        k: usize,
        pad: usize,
    },
    ConvT2 {
        x: Var,
        w: ParamId,
        b: ParamId,
    },
    BatchNorm {
        x: Var,
        gamma: ParamId,
        beta: ParamId,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Relu {
        x: Var,
    },
    MaxPool2 {
        x: Var,
        arg: Vec<u32>,
    },
    Bilinear2 {
        x: Var,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Sigmoid {
        x: Var,
    },
    WeightedSum {
        x: Var,
        weights: Option<Vec<T>>,
    },
    Bce {
        pred: Var,
        target: Vec<T>,
    },
    BceLogits {
        logits: Var,
        target: Vec<T>,
        weights: Vec<T>,
        total_weight: T,
    },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Batch statistics observed by a training-mode batch-norm node.
#[derive(Debug, Clone)]
pub struct RunningStatUpdate<T: Scalar> {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub mean: Vec<T>,
    /// Unbiased estimate, as used for the running variance.
    pub var: Vec<T>,
}

/// Clamp applied to probabilities inside [`Graph::bce`].
pub const BCE_EPS: f64 = 1e-7;

/// A single forward pass recorded for differentiation.
///
/// Parameters live in a [`ParamStore`] passed to each op; nodes only remember
/// ids, so many graphs can read the same store concurrently.
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
    bn_updates: Vec<RunningStatUpdate<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: true,
            bn_updates: Vec::new(),
        }
    }

    /// A graph that records values only; `backward` on it yields no gradients.
    pub fn inference() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn take_value(mut self, v: Var) -> Tensor<T> {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::scalar(T::zero()))
    }

    pub fn running_stat_updates(&self) -> &[RunningStatUpdate<T>] {
        &self.bn_updates
    }

    /// Folds the recorded batch statistics into the running buffers:
    /// `running = (1 - momentum) * running + momentum * batch`.
    pub fn commit_running_stats(&self, store: &mut ParamStore<T>, momentum: f64) {
        let m = T::from_f64_lossy(momentum);
        for u in &self.bn_updates {
            for (id, batch) in [(u.running_mean, &u.mean), (u.running_var, &u.var)] {
                let buf = store.get_mut(id).value.data_mut();
                for (r, &b) in buf.iter_mut().zip(batch) {
                    *r = (T::one() - m) * *r + m * b;
                }
            }
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let (op, requires_grad) = if self.grad_enabled {
            (op, requires_grad)
        } else {
            (Op::Leaf, false)
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; no gradient is computed for it.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Input whose gradient is reported by [`Gradients::get`].
    pub fn input_with_grad(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Stride-1 convolution with a square `k×k` kernel and zero padding `pad = k/2`.
    /// Weight layout `[cout, cin, k, k]`.
    pub fn conv2d(&mut self, store: &ParamStore<T>, x: Var, w: ParamId, b: Option<ParamId>) -> Result<Var> {
        let (n, cin, h, wd) = self.value(x).dims4("conv2d")?;
        let ws = store.value(w).shape().to_vec();
        let (cout, k) = match ws[..] {
            [co, ci, k1, k2] if ci == cin && k1 == k2 && k1 % 2 == 1 => (co, k1),
            _ => return shape_err("conv2d", format!("weight [cout, {cin}, k, k] with odd k"), &ws),
        };
        if let Some(b) = b {
            if store.value(b).shape() != [cout] {
                return shape_err("conv2d", format!("bias [{cout}]"), store.value(b).shape());
            }
        }
        let geom = conv::ConvGeom { n, cin, cout, h, w: wd, k, pad: k / 2 };
        let out = conv::conv2d_forward(
            &geom,
            self.value(x).data(),
            store.value(w).data(),
            b.map(|b| store.value(b).data()),
        );
        let t = Tensor::new(&[n, cout, h, wd], out)?;
        Ok(self.push(t, Op::Conv { x, w, b, k, pad: k / 2 }, true))
    }

    /// 2×2 stride-2 transposed convolution, weight layout `[cin, cout, 2, 2]`.
    pub fn conv_transpose2(&mut self, store: &ParamStore<T>, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
        let (n, cin, h, wd) = self.value(x).dims4("conv_transpose2")?;
        let ws = store.value(w).shape().to_vec();
        let cout = match ws[..] {
            [ci, co, 2, 2] if ci == cin => co,
            _ => return shape_err("conv_transpose2", format!("weight [{cin}, cout, 2, 2]"), &ws),
        };
        if store.value(b).shape() != [cout] {
            return shape_err("conv_transpose2", format!("bias [{cout}]"), store.value(b).shape());
        }
        let out = conv::conv_t2_forward(
            n,
            cin,
            cout,
            h,
            wd,
            self.value(x).data(),
            store.value(w).data(),
            store.value(b).data(),
        );
        let t = Tensor::new(&[n, cout, 2 * h, 2 * wd], out)?;
        Ok(self.push(t, Op::ConvT2 { x, w, b }, true))
    }

    /// Per-channel batch normalization. With `batch_stats` the batch mean and
    /// biased variance normalize the input and are queued for
    /// [`commit_running_stats`](Self::commit_running_stats); otherwise the
    /// running buffers are used and left untouched.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        store: &ParamStore<T>,
        x: Var,
        gamma: ParamId,
        beta: ParamId,
        running_mean: ParamId,
        running_var: ParamId,
        batch_stats: bool,
        eps: f64,
    ) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4("batch_norm")?;
        for id in [gamma, beta, running_mean, running_var] {
            if store.value(id).shape() != [c] {
                return shape_err("batch_norm", format!("[{c}] parameter"), store.value(id).shape());
            }
        }
        let hw = h * w;
        let eps_t = T::from_f64_lossy(eps);
        let (mean, var) = if batch_stats {
            let st = norm::channel_stats(self.value(x).data(), n, c, hw);
            let m = n * hw;
            let unbiased: Vec<T> = if m > 1 {
                let f = T::from_usize(m).unwrap() / T::from_usize(m - 1).unwrap();
                st.var.iter().map(|&v| v * f).collect()
            } else {
                st.var.clone()
            };
            self.bn_updates.push(RunningStatUpdate {
                running_mean,
                running_var,
                mean: st.mean.clone(),
                var: unbiased,
            });
            (st.mean, st.var)
        } else {
            (
                store.value(running_mean).data().to_vec(),
                store.value(running_var).data().to_vec(),
            )
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps_t).sqrt()).collect();
        let (y, xhat) = norm::normalize(
            self.value(x).data(),
            n,
            c,
            hw,
            &mean,
            &inv_std,
            store.value(gamma).data(),
            store.value(beta).data(),
        );
        let t = Tensor::new(&[n, c, h, w], y)?;
        let xhat = if self.grad_enabled { xhat } else { Vec::new() };
        Ok(self.push(
            t,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
            true,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.rg(x);
        self.push(t, Op::Relu { x }, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x).map(sigmoid);
        let rg = self.rg(x);
        self.push(t, Op::Sigmoid { x }, rg)
    }

    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4("max_pool2")?;
        if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
            return shape_err("max_pool2", "even, nonzero H and W", self.value(x).shape());
        }
        let (out, arg) = pool::maxpool2_forward(self.value(x).data(), n * c, h, w);
        let t = Tensor::new(&[n, c, h / 2, w / 2], out)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::MaxPool2 { x, arg }, rg))
    }

    pub fn upsample_bilinear2(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4("upsample_bilinear2")?;
        let out = pool::bilinear2_forward(self.value(x).data(), n * c, h, w);
        let t = Tensor::new(&[n, c, 2 * h, 2 * w], out)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Bilinear2 { x }, rg))
    }

    /// Inverted dropout: each element is zeroed with probability `p` and kept
    /// elements are scaled by `1 / (1 - p)`. `rng = None` is the identity.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: Option<&mut R>) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(AutogradError::Invalid {
                op: "dropout",
                msg: format!("drop probability {p} outside [0, 1)"),
            });
        }
        let rng = match rng {
            Some(r) if p > 0.0 => r,
            _ => return Ok(x),
        };
        let keep = T::from_f64_lossy(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.value(x).numel())
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        let mut t = self.value(x).clone();
        for (v, &m) in t.data_mut().iter_mut().zip(&mask) {
            *v = *v * m;
        }
        let rg = self.rg(x);
        Ok(self.push(t, Op::Dropout { x, mask }, rg))
    }

    /// Channel concatenation `[a, b]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, ca, h, w) = self.value(a).dims4("concat")?;
        let (nb, cb, hb, wb) = self.value(b).dims4("concat")?;
        if (n, h, w) != (nb, hb, wb) {
            return shape_err("concat", format!("[{n}, _, {h}, {w}]"), self.value(b).shape());
        }
        let hw = h * w;
        let mut out = Vec::with_capacity(n * (ca + cb) * hw);
        for i in 0..n {
            out.extend_from_slice(self.value(a).item(i));
            out.extend_from_slice(self.value(b).item(i));
        }
        let t = Tensor::new(&[n, ca + cb, h, w], out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Concat { a, b }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.value(x).data().iter().copied().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::WeightedSum { x, weights: None }, rg)
    }

    /// `Σ weights ⊙ x`; the usual probe loss for gradient checks.
    pub fn weighted_sum(&mut self, x: Var, weights: &Tensor<T>) -> Result<Var> {
        if weights.shape() != self.value(x).shape() {
            return shape_err("weighted_sum", format!("{:?}", self.value(x).shape()), weights.shape());
        }
        let s: T = self
            .value(x)
            .data()
            .iter()
            .zip(weights.data())
            .map(|(&a, &b)| a * b)
            .sum();
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::scalar(s),
            Op::WeightedSum {
                x,
                weights: Some(weights.data().to_vec()),
            },
            rg,
        ))
    }

    /// Mean binary cross-entropy of probabilities, natural log, with `pred`
    /// clamped to `[BCE_EPS, 1 - BCE_EPS]` (zero gradient where clamped).
    pub fn bce(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        if target.shape() != self.value(pred).shape() {
            return shape_err("bce", format!("{:?}", self.value(pred).shape()), target.shape());
        }
        let loss = bce_value(self.value(pred).data(), target.data());
        let rg = self.rg(pred);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                pred,
                target: target.data().to_vec(),
            },
            rg,
        ))
    }

    /// Weighted BCE evaluated from logits: `Σ w·ℓ(σ(z), y) / Σ w`, zero when all
    /// weights vanish. Equals [`bce`](Self::bce) of `sigmoid(z)` for unit weights
    /// away from the clamp.
    pub fn bce_with_logits(&mut self, logits: Var, target: &Tensor<T>, weights: &Tensor<T>) -> Result<Var> {
        let shape = self.value(logits).shape().to_vec();
        if target.shape() != shape || weights.shape() != shape {
            return shape_err("bce_with_logits", format!("{shape:?} target and weights"), target.shape());
        }
        let total_weight: T = weights.data().iter().copied().sum();
        let mut acc = T::zero();
        if total_weight > T::zero() {
            for ((&z, &y), &w) in self.value(logits).data().iter().zip(target.data()).zip(weights.data()) {
                if w != T::zero() {
                    let l = z.max(T::zero()) - z * y + (T::one() + (-z.abs()).exp()).ln();
                    acc = acc + w * l;
                }
            }
            acc = acc / total_weight;
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(acc),
            Op::BceLogits {
                logits,
                target: target.data().to_vec(),
                weights: weights.data().to_vec(),
                total_weight,
            },
            rg,
        ))
    }

    /// Reverse pass from a scalar `loss`. Parameter gradients are added into
    /// `store` (they accumulate until [`ParamStore::zero_grad`]); gradients of
    /// inputs created with [`input_with_grad`](Self::input_with_grad) are returned.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(AutogradError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                grads[idx] = Some(g);
                continue;
            }
            self.backward_node(node, &g, &mut grads, store)?;
        }
        let leaf_grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.filter(|_| matches!(self.nodes[i].op, Op::Leaf))
                    .map(|g| Tensor::new(self.nodes[i].value.shape(), g).expect("grad matches node shape"))
            })
            .collect();
        Ok(Gradients { grads: leaf_grads })
    }

    fn backward_node(
        &self,
        node: &Node<T>,
        g: &[T],
        grads: &mut [Option<Vec<T>>],
        store: &mut ParamStore<T>,
    ) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            &Op::Conv { x, w, b, k, pad } => {
                let (n, cin, h, wd) = self.value(x).dims4("conv2d")?;
                let cout = store.value(w).shape()[0];
                let geom = conv::ConvGeom { n, cin, cout, h, w: wd, k, pad };
                let (dx, dw, db) = conv::conv2d_backward(
                    &geom,
                    self.value(x).data(),
                    store.value(w).data(),
                    g,
                    self.rg(x),
                );
                store.accumulate_grad(w, &dw);
                if let Some(b) = b {
                    store.accumulate_grad(b, &db);
                }
                if let Some(dx) = dx {
                    accumulate(grads, x, dx);
                }
            }
            &Op::ConvT2 { x, w, b } => {
                let (n, cin, h, wd) = self.value(x).dims4("conv_transpose2")?;
                let cout = store.value(w).shape()[1];
                let (dx, dw, db) = conv::conv_t2_backward(
                    n,
                    cin,
                    cout,
                    h,
                    wd,
                    self.value(x).data(),
                    store.value(w).data(),
                    g,
                    self.rg(x),
                );
                store.accumulate_grad(w, &dw);
                store.accumulate_grad(b, &db);
                if let Some(dx) = dx {
                    accumulate(grads, x, dx);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let (n, c, h, w) = self.value(*x).dims4("batch_norm")?;
                let (dx, dgamma, dbeta) = norm::batch_backward(
                    g,
                    xhat,
                    n,
                    c,
                    h * w,
                    inv_std,
                    store.value(*gamma).data(),
                    *batch_stats,
                );
                store.accumulate_grad(*gamma, &dgamma);
                store.accumulate_grad(*beta, &dbeta);
                if self.rg(*x) {
                    accumulate(grads, *x, dx);
                }
            }
            &Op::Relu { x } => {
                let dx = self
                    .value(x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &d)| if v > T::zero() { d } else { T::zero() })
                    .collect();
                accumulate(grads, x, dx);
            }
            &Op::Sigmoid { x } => {
                let dx = node
                    .value
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&y, &d)| d * y * (T::one() - y))
                    .collect();
                accumulate(grads, x, dx);
            }
            Op::MaxPool2 { x, arg } => {
                let dx = pool::maxpool2_backward(g, arg, self.value(*x).numel());
                accumulate(grads, *x, dx);
            }
            &Op::Bilinear2 { x } => {
                let (n, c, h, w) = self.value(x).dims4("upsample_bilinear2")?;
                accumulate(grads, x, pool::bilinear2_backward(g, n * c, h, w));
            }
            Op::Dropout { x, mask } => {
                let dx = g.iter().zip(mask).map(|(&d, &m)| d * m).collect();
                accumulate(grads, *x, dx);
            }
            &Op::Concat { a, b } => {
                let (n, ca, h, w) = self.value(a).dims4("concat")?;
                let cb = self.value(b).shape()[1];
                let hw = h * w;
                let (mut ga, mut gb) = (Vec::with_capacity(n * ca * hw), Vec::with_capacity(n * cb * hw));
                for i in 0..n {
                    let off = i * (ca + cb) * hw;
                    ga.extend_from_slice(&g[off..off + ca * hw]);
                    gb.extend_from_slice(&g[off + ca * hw..off + (ca + cb) * hw]);
                }
                if self.rg(a) {
                    accumulate(grads, a, ga);
                }
                if self.rg(b) {
                    accumulate(grads, b, gb);
                }
            }
            Op::WeightedSum { x, weights } => {
                let s = g[0];
                let dx = match weights {
                    Some(w) => w.iter().map(|&w| w * s).collect(),
                    None => vec![s; self.value(*x).numel()],
                };
                accumulate(grads, *x, dx);
            }
            Op::Bce { pred, target } => {
                let m = T::from_usize(target.len()).unwrap();
                let eps = T::from_f64_lossy(BCE_EPS);
                let dx = self
                    .value(*pred)
                    .data()
                    .iter()
                    .zip(target)
                    .map(|(&p, &y)| {
                        if p < eps || p > T::one() - eps {
                            T::zero()
                        } else {
                            g[0] * (p - y) / (p * (T::one() - p)) / m
                        }
                    })
                    .collect();
                accumulate(grads, *pred, dx);
            }
            Op::BceLogits {
                logits,
                target,
                weights,
                total_weight,
            } => {
                let dx = if *total_weight > T::zero() {
                    self.value(*logits)
                        .data()
                        .iter()
                        .zip(target)
                        .zip(weights)
                        .map(|((&z, &y), &w)| g[0] * w * (sigmoid(z) - y) / *total_weight)
                        .collect()
                } else {
                    vec![T::zero(); target.len()]
                };
                accumulate(grads, *logits, dx);
            }
        }
        Ok(())
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (a, b) in existing.iter_mut().zip(g) {
                *a = *a + b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Mean clamped BCE of probabilities against targets.
pub fn bce_value<T: Scalar>(pred: &[T], target: &[T]) -> T {
    let eps = T::from_f64_lossy(BCE_EPS);
    let m = T::from_usize(pred.len()).unwrap();
    pred.iter()
        .zip(target)
        .map(|(&p, &y)| {
            let p = p.max(eps).min(T::one() - eps);
            -(y * p.ln() + (T::one() - y) * (T::one() - p).ln())
        })
        .sum::<T>()
        / m
}

/// Gradients of graph inputs created with [`Graph::input_with_grad`].
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}
