use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::sync::OnceLock;

use crate::autograd::params::{BufferId, Gradients, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::ops::{
    self, Activation, BinaryOp, Conv2dParams, NormMode, PoolKind, SoftmaxAxis,
};
use crate::tensor::{Scalar, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Input,
    Param(ParamId),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        p: Conv2dParams,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor<T>,
        inv_std: Vec<T>,
        mode: NormMode,
    },
    Activation {
        x: Var,
        kind: Activation,
    },
    Softmax {
        x: Var,
        axis: SoftmaxAxis,
    },
    Matmul {
        a: Var,
        b: Var,
    },
    Transpose {
        x: Var,
    },
    Reshape {
        x: Var,
    },
    Detach,
    Pool {
        x: Var,
        argmax: Vec<u32>,
    },
    Resize {
        x: Var,
    },
    Binary {
        a: Var,
        b: Var,
        op: BinaryOp,
    },
    Scale {
        x: Var,
        c: T,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Sum {
        x: Var,
    },
    Bce {
        s: Var,
        target: Tensor<T>,
    },
    Iou {
        s: Var,
        target: Tensor<T>,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::Conv2d { .. } => "conv2d",
            Op::BatchNorm { .. } => "batch_norm",
            Op::Activation { .. } => "activation",
            Op::Softmax { .. } => "softmax",
            Op::Matmul { .. } => "matmul",
            Op::Transpose { .. } => "transpose",
            Op::Reshape { .. } => "reshape",
            Op::Detach => "detach",
            Op::Pool { .. } => "pool",
            Op::Resize { .. } => "resize",
            Op::Binary { .. } => "elementwise",
            Op::Scale { .. } => "scale",
            Op::Concat { .. } => "concat",
            Op::Linear { .. } => "fully_connected",
            Op::Sum { .. } => "sum",
            Op::Bce { .. } => "bce",
            Op::Iou { .. } => "iou",
        }
    }

    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Input | Op::Param(_) | Op::Detach => vec![],
            Op::Conv2d { x, w, b, .. } | Op::Linear { x, w, b } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Matmul { a, b } | Op::Binary { a, b, .. } | Op::Concat { a, b } => vec![*a, *b],
            Op::Activation { x, .. }
            | Op::Softmax { x, .. }
            | Op::Transpose { x }
            | Op::Reshape { x }
            | Op::Pool { x, .. }
            | Op::Resize { x }
            | Op::Scale { x, .. }
            | Op::Sum { x } => vec![*x],
            Op::Bce { s, .. } | Op::Iou { s, .. } => vec![*s],
        }
    }
}

struct Node<T> {
    value: Option<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

fn check_finite_env() -> bool {
    static FLAG: OnceLock<bool> = OnceLock::new();
    *FLAG.get_or_init(|| {
        std::env::var("CORRNET_CHECK_FINITE")
            .map(|v| v == "1")
            .unwrap_or(false)
    })
}

/// Tape of executed primitives for one forward pass.
///
/// Values are immutable once recorded. Parameters are read from the borrowed
/// store; batch-norm running-statistic updates are queued and handed back via
/// [`Graph::take_buffer_updates`]. A graph belongs to one thread; separate
/// forward passes can run concurrently on their own graphs.
pub struct Graph<'s, T: Scalar> {
    store: &'s ParamStore<T>,
    nodes: Vec<Node<T>>,
    mode: NormMode,
    param_vars: HashMap<ParamId, Var>,
    buffer_updates: Vec<(BufferId, Tensor<T>)>,
    check_finite: bool,
}

impl<'s, T: Scalar> Graph<'s, T> {
    pub fn new(store: &'s ParamStore<T>, mode: NormMode) -> Self {
        Graph {
            store,
            nodes: Vec::new(),
            mode,
            param_vars: HashMap::new(),
            buffer_updates: Vec::new(),
            check_finite: check_finite_env(),
        }
    }

    pub fn mode(&self) -> NormMode {
        self.mode
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    /// Assert finiteness after every op (also enabled by `CORRNET_CHECK_FINITE=1`).
    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        match &self.nodes[v.0].op {
            Op::Param(id) => &self.store.param(*id).value,
            _ => self.nodes[v.0].value.as_ref().expect("recorded value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// Hash of every nonsmooth decision taken so far: ReLU input signs, pooling
    /// argmax positions and BCE clamping. Two evaluations with equal
    /// signatures lie on the same smooth piece of the loss.
    pub fn kink_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (i, node) in self.nodes.iter().enumerate() {
            match &node.op {
                Op::Activation {
                    x,
                    kind: Activation::Relu,
                } => {
                    i.hash(&mut h);
                    for &v in self.value(*x).data() {
                        (v > T::zero()).hash(&mut h);
                    }
                }
                Op::Pool { argmax, .. } => {
                    i.hash(&mut h);
                    argmax.hash(&mut h);
                }
                Op::Bce { s, .. } => {
                    i.hash(&mut h);
                    let (lo, hi) = (T::of(ops::BCE_CLAMP), T::of(1.0 - ops::BCE_CLAMP));
                    for &v in self.value(*s).data() {
                        (v < lo || v > hi).hash(&mut h);
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }

    pub fn take_buffer_updates(&mut self) -> Vec<(BufferId, Tensor<T>)> {
        std::mem::take(&mut self.buffer_updates)
    }

    fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        if self.check_finite && !value.is_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let requires_grad = op.parents().iter().any(|&p| self.requires_grad(p));
        self.nodes.push(Node {
            value: Some(value),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A constant leaf; no gradient flows into it.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: Some(t),
            op: Op::Input,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, p: Conv2dParams) -> Result<Var> {
        let y = ops::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), p)?;
        self.push(y, Op::Conv2d { x, w, b, p })
    }

    /// Batch normalization in the graph's mode. In train mode the running
    /// statistics update (momentum 0.1) is queued rather than applied.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: BufferId,
        running_var: BufferId,
    ) -> Result<Var> {
        let rm = &self.store.buffer(running_mean).value;
        let rv = &self.store.buffer(running_var).value;
        let out = ops::batch_norm(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            rm,
            rv,
            ops::BN_EPS,
            self.mode,
        )?;
        if self.mode == NormMode::Train {
            let new_mean = ops::update_running(rm, &out.batch_mean, ops::BN_MOMENTUM);
            let new_var = ops::update_running(rv, &out.batch_var, ops::BN_MOMENTUM);
            self.buffer_updates.push((running_mean, new_mean));
            self.buffer_updates.push((running_var, new_var));
        }
        let mode = self.mode;
        self.push(
            out.y,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat: out.xhat,
                inv_std: out.inv_std,
                mode,
            },
        )
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        let y = ops::activation(self.value(x), kind);
        self.push(y, Op::Activation { x, kind })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn softmax(&mut self, x: Var, axis: SoftmaxAxis) -> Result<Var> {
        let y = ops::softmax(self.value(x), axis)?;
        self.push(y, Op::Softmax { x, axis })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::matmul(self.value(a), self.value(b))?;
        self.push(y, Op::Matmul { a, b })
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let y = ops::transpose(self.value(x))?;
        self.push(y, Op::Transpose { x })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(x).reshape(shape)?;
        self.push(y, Op::Reshape { x })
    }

    /// Identity in the forward pass; blocks gradient flow.
    pub fn detach(&mut self, x: Var) -> Result<Var> {
        let y = self.value(x).clone();
        self.push(y, Op::Detach)
    }

    pub fn pool(&mut self, x: Var, kind: PoolKind) -> Result<Var> {
        let (y, argmax) = ops::pool(self.value(x), kind)?;
        self.push(y, Op::Pool { x, argmax })
    }

    pub fn resize(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let xs = self.value(x);
        if xs.shape()[2..] == [out_h, out_w] {
            return Ok(x);
        }
        let y = ops::resize_bilinear(xs, out_h, out_w)?;
        self.push(y, Op::Resize { x })
    }

    pub fn upsample(&mut self, x: Var, factor: usize) -> Result<Var> {
        let [_, _, h, w] = self.value(x).dims4()?;
        if factor == 0 {
            return Err(Error::InvalidArgument(
                "upsample factor must be >= 1".into(),
            ));
        }
        self.resize(x, h * factor, w * factor)
    }

    pub fn elementwise(&mut self, a: Var, b: Var, op: BinaryOp) -> Result<Var> {
        let y = ops::elementwise(self.value(a), self.value(b), op)?;
        self.push(y, Op::Binary { a, b, op })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, BinaryOp::Add)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, BinaryOp::Mul)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        let y = ops::scale(self.value(x), c);
        self.push(y, Op::Scale { x, c })
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::concat_channels(self.value(a), self.value(b))?;
        self.push(y, Op::Concat { a, b })
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = ops::fully_connected(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        self.push(y, Op::Linear { x, w, b })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum { x })
    }

    pub fn bce(&mut self, s: Var, target: &Tensor<T>) -> Result<Var> {
        let l = ops::bce(self.value(s), target)?;
        self.push(
            Tensor::scalar(l),
            Op::Bce {
                s,
                target: target.clone(),
            },
        )
    }

    pub fn iou(&mut self, s: Var, target: &Tensor<T>) -> Result<Var> {
        let l = ops::soft_iou(self.value(s), target)?;
        self.push(
            Tensor::scalar(l),
            Op::Iou {
                s,
                target: target.clone(),
            },
        )
    }

    /// Reverse-mode sweep from a scalar `loss`, visiting nodes in exact
    /// reverse recording order and summing gradients at fan-out points.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(Error::Backward("no forward pass recorded".into()));
        }
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::Backward(format!(
                "loss must be a scalar, got shape {:?}",
                lv.shape()
            )));
        }
        let mut out = Gradients::new(self.store.params().len());
        let mut grads: Vec<Option<Tensor<T>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::ones(lv.shape()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let y = node.value.as_ref();
            match &node.op {
                Op::Input | Op::Detach => {}
                Op::Param(id) => out.add(*id, g),
                Op::Conv2d { x, w, b, p } => {
                    let r = ops::conv2d_backward(
                        self.value(*x),
                        self.value(*w),
                        &g,
                        *p,
                        (
                            self.requires_grad(*x),
                            self.requires_grad(*w),
                            b.is_some_and(|b| self.requires_grad(b)),
                        ),
                    )?;
                    self.acc(&mut grads, *x, r.dx);
                    self.acc(&mut grads, *w, r.dw);
                    if let Some(b) = b {
                        self.acc(&mut grads, *b, r.db);
                    }
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    mode,
                } => {
                    let (dx, dg, db) =
                        ops::batch_norm_backward(&g, xhat, inv_std, self.value(*gamma), *mode)?;
                    self.acc(&mut grads, *x, Some(dx));
                    self.acc(&mut grads, *gamma, Some(dg));
                    self.acc(&mut grads, *beta, Some(db));
                }
                Op::Activation { x, kind } => {
                    let dx = ops::activation_backward(y.unwrap(), &g, *kind);
                    self.acc(&mut grads, *x, Some(dx));
                }
                Op::Softmax { x, axis } => {
                    let dx = ops::softmax_backward(y.unwrap(), &g, *axis)?;
                    self.acc(&mut grads, *x, Some(dx));
                }
                Op::Matmul { a, b } => {
                    let (da, db) = ops::matmul_backward(self.value(*a), self.value(*b), &g)?;
                    self.acc(&mut grads, *a, Some(da));
                    self.acc(&mut grads, *b, Some(db));
                }
                Op::Transpose { x } => {
                    let dx = ops::transpose(&g)?;
                    self.acc(&mut grads, *x, Some(dx));
                }
                Op::Reshape { x } => {
                    let dx = g.into_reshaped(self.value(*x).shape())?;
                    self.acc(&mut grads, *x, Some(dx));
                }
                Op::Pool { x, argmax } => {
                    let dx = ops::pool_backward(self.value(*x).shape(), argmax, &g);
                    self.acc(&mut grads, *x, Some(dx));
                }
                Op::Resize { x } => {
                    let dx = ops::resize_bilinear_backward(self.value(*x).shape(), &g)?;
                    self.acc(&mut grads, *x, Some(dx));
                }
                Op::Binary { a, b, op } => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let (ga, gb) = match op {
                        BinaryOp::Add => (g.clone(), g),
                        BinaryOp::Mul => (
                            ops::elementwise(&g, vb, BinaryOp::Mul)?,
                            ops::elementwise(&g, va, BinaryOp::Mul)?,
                        ),
                    };
                    if self.requires_grad(*a) {
                        self.acc(&mut grads, *a, Some(ops::reduce_to_shape(&ga, va.shape())));
                    }
                    if self.requires_grad(*b) {
                        self.acc(&mut grads, *b, Some(ops::reduce_to_shape(&gb, vb.shape())));
                    }
                }
                Op::Scale { x, c } => {
                    self.acc(&mut grads, *x, Some(ops::scale(&g, *c)));
                }
                Op::Concat { a, b } => {
                    let ca = self.value(*a).shape()[1];
                    let cb = self.value(*b).shape()[1];
                    self.acc(&mut grads, *a, Some(g.narrow_channels(0, ca)?));
                    self.acc(&mut grads, *b, Some(g.narrow_channels(ca, cb)?));
                }
                Op::Linear { x, w, b } => {
                    let (dx, dw, db) =
                        ops::fully_connected_backward(self.value(*x), self.value(*w), &g);
                    self.acc(&mut grads, *x, Some(dx));
                    self.acc(&mut grads, *w, Some(dw));
                    if let Some(b) = b {
                        self.acc(&mut grads, *b, Some(db));
                    }
                }
                Op::Sum { x } => {
                    let gv = g.item()?;
                    self.acc(
                        &mut grads,
                        *x,
                        Some(Tensor::full(self.value(*x).shape(), gv)),
                    );
                }
                Op::Bce { s, target } => {
                    let dx = ops::bce_backward(self.value(*s), target, g.item()?);
                    self.acc(&mut grads, *s, Some(dx));
                }
                Op::Iou { s, target } => {
                    let dx = ops::soft_iou_backward(self.value(*s), target, g.item()?);
                    self.acc(&mut grads, *s, Some(dx));
                }
            }
        }
        Ok(out)
    }

    fn acc(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Option<Tensor<T>>) {
        let Some(g) = g else { return };
        if !self.requires_grad(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, &x) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a = *a + x;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }
}
