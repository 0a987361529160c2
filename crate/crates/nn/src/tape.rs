//! The gradient tape. A forward pass records one node per operation; calling
//! [`Tape::backward`] consumes the tape, walks the nodes in reverse and
//! accumulates parameter gradients into the [`ParamStore`]. Consuming the
//! tape releases every intermediate buffer, so repeated train steps reach a
//! steady-state memory footprint.

use rand::Rng;

use crate::error::{NnError, Result};
use crate::ops::conv3d::Backend;
use crate::ops::{activations, batchnorm, conv3d, conv_transpose, linear, loss, pool};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Train mode uses batch statistics and active dropout; eval mode uses
/// running statistics and identity dropout. Gradients flow in both modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op<S> {
    Input,
    Param(ParamId),
    Conv3d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: [usize; 3],
        pad: [usize; 3],
    },
    ConvTranspose3d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        kernel: usize,
        stride: usize,
    },
    MaxPool3d {
        x: NodeId,
        argmax: Vec<usize>,
    },
    AdaptiveAvgPool3d {
        x: NodeId,
    },
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: Vec<S>,
        inv_std: Vec<S>,
        train_stats: bool,
    },
    Relu {
        x: NodeId,
    },
    Dropout {
        x: NodeId,
        mask: Vec<S>,
    },
    Reshape {
        x: NodeId,
    },
    Linear {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    MseJointLoss {
        pred: NodeId,
        target: Tensor<S>,
        joints: usize,
    },
}

struct Node<S> {
    value: Tensor<S>,
    requires_grad: bool,
    op: Op<S>,
}

pub struct Tape<S> {
    nodes: Vec<Node<S>>,
    backend: Backend,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            backend: Backend::Auto,
        }
    }

    pub fn with_backend(backend: Backend) -> Self {
        Self {
            nodes: Vec::new(),
            backend,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Value produced at a node.
    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor<S>, requires_grad: bool, op: Op<S>) -> NodeId {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Records a constant input (no gradient tracked).
    pub fn input(&mut self, value: Tensor<S>) -> NodeId {
        self.push(value, false, Op::Input)
    }

    /// Records a parameter leaf; its gradient is accumulated into the store
    /// on backward.
    pub fn param(&mut self, store: &ParamStore<S>, id: ParamId) -> NodeId {
        let value = store.value(id).clone();
        self.push(value, true, Op::Param(id))
    }

    pub fn conv3d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        stride: [usize; 3],
        pad: [usize; 3],
    ) -> Result<NodeId> {
        let out = conv3d::forward(
            self.value(x),
            self.value(w),
            self.value(b),
            stride,
            pad,
            self.backend,
        )?;
        let rg = self.needs_grad(x) || self.needs_grad(w) || self.needs_grad(b);
        Ok(self.push(out, rg, Op::Conv3d { x, w, b, stride, pad }))
    }

    pub fn conv_transpose3d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        kernel: usize,
        stride: usize,
    ) -> Result<NodeId> {
        let out = conv_transpose::forward(self.value(x), self.value(w), self.value(b), kernel, stride)?;
        let rg = self.needs_grad(x) || self.needs_grad(w) || self.needs_grad(b);
        Ok(self.push(
            out,
            rg,
            Op::ConvTranspose3d {
                x,
                w,
                b,
                kernel,
                stride,
            },
        ))
    }

    pub fn maxpool3d(&mut self, x: NodeId, kernel: [usize; 3], stride: [usize; 3]) -> Result<NodeId> {
        let pooled = pool::maxpool3d_forward(self.value(x), kernel, stride)?;
        let rg = self.needs_grad(x);
        Ok(self.push(
            pooled.out,
            rg,
            Op::MaxPool3d {
                x,
                argmax: pooled.argmax,
            },
        ))
    }

    pub fn adaptive_avg_pool3d(&mut self, x: NodeId, out_size: usize) -> Result<NodeId> {
        let out = pool::adaptive_avg_pool3d_forward(self.value(x), out_size)?;
        let rg = self.needs_grad(x);
        Ok(self.push(out, rg, Op::AdaptiveAvgPool3d { x }))
    }

    /// Batch normalization. In train mode returns the decayed running
    /// statistics for the caller to persist.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running_mean: &[S],
        running_var: &[S],
        mode: Mode,
        momentum: f64,
        eps: f64,
    ) -> Result<(NodeId, Option<(Vec<S>, Vec<S>)>)> {
        let fwd = batchnorm::forward(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            running_mean,
            running_var,
            mode,
            momentum,
            eps,
        )?;
        let rg = self.needs_grad(x) || self.needs_grad(gamma) || self.needs_grad(beta);
        let node = self.push(
            fwd.out,
            rg,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean: fwd.mean,
                inv_std: fwd.inv_std,
                train_stats: mode == Mode::Train,
            },
        );
        Ok((node, fwd.updated_running))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = activations::relu_forward(self.value(x));
        let rg = self.needs_grad(x);
        self.push(out, rg, Op::Relu { x })
    }

    /// Train-mode dropout. Eval mode is the identity; callers skip the node.
    pub fn dropout<R: Rng>(&mut self, x: NodeId, rate: f64, rng: &mut R) -> Result<NodeId> {
        let (out, mask) = activations::dropout_forward(self.value(x), rate, rng)?;
        let rg = self.needs_grad(x);
        Ok(self.push(out, rg, Op::Dropout { x, mask }))
    }

    /// Flattens (N, ...) to (N, features).
    pub fn flatten(&mut self, x: NodeId) -> Result<NodeId> {
        let from = self.value(x).shape().to_vec();
        if from.is_empty() {
            return Err(NnError::ShapeMismatch("cannot flatten a scalar".into()));
        }
        let n = from[0];
        let features: usize = from[1..].iter().product();
        let out = self.value(x).clone().reshaped(vec![n, features])?;
        let rg = self.needs_grad(x);
        Ok(self.push(out, rg, Op::Reshape { x }))
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let out = linear::forward(self.value(x), self.value(w), self.value(b))?;
        let rg = self.needs_grad(x) || self.needs_grad(w) || self.needs_grad(b);
        Ok(self.push(out, rg, Op::Linear { x, w, b }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(NnError::ShapeMismatch(format!(
                "residual add: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut out = self.value(a).clone();
        for (o, v) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o += *v;
        }
        let rg = self.needs_grad(a) || self.needs_grad(b);
        Ok(self.push(out, rg, Op::Add { a, b }))
    }

    pub fn mse_joint_loss(&mut self, pred: NodeId, target: Tensor<S>, joints: usize) -> Result<NodeId> {
        let l = loss::mse_joint_forward(self.value(pred), &target, joints)?;
        let rg = self.needs_grad(pred);
        Ok(self.push(
            Tensor::scalar(l),
            rg,
            Op::MseJointLoss {
                pred,
                target,
                joints,
            },
        ))
    }

    /// Reverse pass from a scalar loss node. Consumes the tape and
    /// accumulates parameter gradients into `store`.
    pub fn backward(self, loss_node: NodeId, store: &mut ParamStore<S>) -> Result<()> {
        let n = self.nodes.len();
        if loss_node.0 >= n {
            return Err(NnError::TapeMissing);
        }
        if self.nodes[loss_node.0].value.len() != 1 {
            return Err(NnError::ShapeMismatch(
                "backward start node must be scalar".into(),
            ));
        }
        let mut grads: Vec<Option<Vec<S>>> = Vec::with_capacity(n);
        grads.resize_with(n, || None);
        grads[loss_node.0] = Some(vec![S::ONE]);

        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            let g_tensor = Tensor::new(self.nodes[i].value.shape().to_vec(), g)?;
            match &self.nodes[i].op {
                Op::Input => {}
                Op::Param(pid) => {
                    store.accumulate_grad(*pid, g_tensor.data());
                }
                Op::Conv3d { x, w, b, stride, pad } => {
                    let need_dx = self.needs_grad(*x);
                    let grads_out = conv3d::backward(
                        self.value(*x),
                        self.value(*w),
                        &g_tensor,
                        *stride,
                        *pad,
                        self.backend,
                        need_dx,
                    )?;
                    if let Some(dx) = grads_out.dx {
                        accumulate(&mut grads, *x, dx.into_data());
                    }
                    if self.needs_grad(*w) {
                        accumulate(&mut grads, *w, grads_out.dw.into_data());
                    }
                    if self.needs_grad(*b) {
                        accumulate(&mut grads, *b, grads_out.db);
                    }
                }
                Op::ConvTranspose3d {
                    x,
                    w,
                    b,
                    kernel,
                    stride,
                } => {
                    let need_dx = self.needs_grad(*x);
                    let grads_out = conv_transpose::backward(
                        self.value(*x),
                        self.value(*w),
                        &g_tensor,
                        *kernel,
                        *stride,
                        need_dx,
                    )?;
                    if let Some(dx) = grads_out.dx {
                        accumulate(&mut grads, *x, dx.into_data());
                    }
                    if self.needs_grad(*w) {
                        accumulate(&mut grads, *w, grads_out.dw.into_data());
                    }
                    if self.needs_grad(*b) {
                        accumulate(&mut grads, *b, grads_out.db);
                    }
                }
                Op::MaxPool3d { x, argmax } => {
                    let dx = pool::maxpool3d_backward(
                        self.value(*x).shape(),
                        argmax,
                        &g_tensor,
                    )?;
                    accumulate(&mut grads, *x, dx.into_data());
                }
                Op::AdaptiveAvgPool3d { x } => {
                    let dx = pool::adaptive_avg_pool3d_backward(self.value(*x).shape(), &g_tensor)?;
                    accumulate(&mut grads, *x, dx.into_data());
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    mean,
                    inv_std,
                    train_stats,
                } => {
                    let out = if *train_stats {
                        batchnorm::backward_train(
                            self.value(*x),
                            self.value(*gamma),
                            mean,
                            inv_std,
                            &g_tensor,
                        )?
                    } else {
                        batchnorm::backward_eval(
                            self.value(*x),
                            self.value(*gamma),
                            mean,
                            inv_std,
                            &g_tensor,
                        )?
                    };
                    if self.needs_grad(*x) {
                        accumulate(&mut grads, *x, out.dx.into_data());
                    }
                    if self.needs_grad(*gamma) {
                        accumulate(&mut grads, *gamma, out.dgamma);
                    }
                    if self.needs_grad(*beta) {
                        accumulate(&mut grads, *beta, out.dbeta);
                    }
                }
                Op::Relu { x } => {
                    let dx = activations::relu_backward(self.value(*x), &g_tensor);
                    accumulate(&mut grads, *x, dx.into_data());
                }
                Op::Dropout { x, mask } => {
                    let dx = activations::dropout_backward(mask, &g_tensor);
                    accumulate(&mut grads, *x, dx.into_data());
                }
                Op::Reshape { x } => {
                    accumulate(&mut grads, *x, g_tensor.into_data());
                }
                Op::Linear { x, w, b } => {
                    let need_dx = self.needs_grad(*x);
                    let out = linear::backward(self.value(*x), self.value(*w), &g_tensor, need_dx)?;
                    if let Some(dx) = out.dx {
                        accumulate(&mut grads, *x, dx.into_data());
                    }
                    if self.needs_grad(*w) {
                        accumulate(&mut grads, *w, out.dw.into_data());
                    }
                    if self.needs_grad(*b) {
                        accumulate(&mut grads, *b, out.db);
                    }
                }
                Op::Add { a, b } => {
                    if self.needs_grad(*a) {
                        accumulate(&mut grads, *a, g_tensor.data().to_vec());
                    }
                    if self.needs_grad(*b) {
                        accumulate(&mut grads, *b, g_tensor.into_data());
                    }
                }
                Op::MseJointLoss {
                    pred,
                    target,
                    joints,
                } => {
                    let upstream = g_tensor.data()[0];
                    let dp = loss::mse_joint_backward(self.value(*pred), target, *joints, upstream);
                    accumulate(&mut grads, *pred, dp.into_data());
                }
            }
        }
        Ok(())
    }
}

fn accumulate<S: Scalar>(grads: &mut [Option<Vec<S>>], node: NodeId, contribution: Vec<S>) {
    match &mut grads[node.0] {
        Some(existing) => {
            for (a, b) in existing.iter_mut().zip(&contribution) {
                *a += *b;
            }
        }
        slot @ None => *slot = Some(contribution),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn backward_on_unknown_node_is_tape_missing() {
        let tape = Tape::<f32>::new();
        let mut store = ParamStore::new();
        assert!(matches!(
            tape.backward(NodeId(3), &mut store),
            Err(NnError::TapeMissing)
        ));
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::<f32>::new();
        let x = tape.input(Tensor::zeros(vec![2, 2]));
        let mut store = ParamStore::new();
        assert!(matches!(
            tape.backward(x, &mut store),
            Err(NnError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn linear_loss_gradient_flows_to_params() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", Tensor::new(vec![2, 3], vec![0.1; 6]).unwrap(), true);
        let b = store.add("b", Tensor::zeros(vec![3]), true);
        let mut tape = Tape::new();
        let x = tape.input(Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap());
        let wn = tape.param(&store, w);
        let bn = tape.param(&store, b);
        let y = tape.linear(x, wn, bn).unwrap();
        let target = Tensor::new(vec![1, 3], vec![1.0, 0.0, -1.0]).unwrap();
        let l = tape.mse_joint_loss(y, target, 1).unwrap();
        tape.backward(l, &mut store).unwrap();
        assert!(store.get(w).grad.is_some());
        assert!(store.get(b).grad.is_some());
        let gb = store.get(b).grad.as_ref().unwrap();
        // dL/db = 2 (y - t) / (joints * batch); y = [0.3, 0.3, 0.3]
        let want = [2.0 * (0.3 - 1.0), 2.0 * 0.3, 2.0 * (0.3 + 1.0)];
        for (g, w_) in gb.iter().zip(want) {
            assert!((g - w_).abs() < 1e-12);
        }
    }

    #[test]
    fn residual_add_sums_gradients() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", Tensor::new(vec![1, 3], vec![1.0, 1.0, 1.0]).unwrap(), true);
        let b = store.add("b", Tensor::zeros(vec![3]), true);
        let mut tape = Tape::new();
        let x = tape.input(Tensor::new(vec![1, 1], vec![2.0]).unwrap());
        let wn = tape.param(&store, w);
        let bn = tape.param(&store, b);
        let y = tape.linear(x, wn, bn).unwrap();
        let z = tape.add(y, y).unwrap(); // z = 2y = [4, 4, 4]
        let target = Tensor::zeros(vec![1, 3]);
        let l = tape.mse_joint_loss(z, target, 1).unwrap();
        tape.backward(l, &mut store).unwrap();
        // dL/dz = 2z = 8; both add branches route it to y (16); dw = x * 16.
        let gw = store.get(w).grad.as_ref().unwrap();
        for g in gw {
            assert!((g - 32.0).abs() < 1e-9, "{g}");
        }
    }

    #[test]
    fn dropout_seeded_masks_are_deterministic() {
        let mut tape1 = Tape::<f32>::new();
        let mut tape2 = Tape::<f32>::new();
        let x1 = tape1.input(Tensor::full(vec![1, 64], 1.0));
        let x2 = tape2.input(Tensor::full(vec![1, 64], 1.0));
        let mut r1 = ChaCha20Rng::seed_from_u64(9);
        let mut r2 = ChaCha20Rng::seed_from_u64(9);
        let d1 = tape1.dropout(x1, 0.5, &mut r1).unwrap();
        let d2 = tape2.dropout(x2, 0.5, &mut r2).unwrap();
        assert_eq!(tape1.value(d1).data(), tape2.value(d2).data());
    }
}
