//! Tape-based reverse-mode differentiation over whole-tensor ops.
//!
//! Every op appends a node holding its forward value plus whatever it needs
//! for the backward pass. [`Graph::backward`] walks the tape in reverse and
//! accumulates gradients only into nodes that (transitively) depend on a
//! parameter created with [`Graph::param`].

use crate::error::{Result, TensorError};
use crate::layout::BlockLayout;
use crate::ops::{conv, loss, pool};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: conv::ConvGeom,
        cols: Vec<T>,
    },
    MaxPool2d {
        input: Var,
        argmax: Vec<usize>,
    },
    Relu {
        input: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        input: Var,
        factor: T,
    },
    MaskTime {
        input: Var,
        lens: Vec<usize>,
    },
    GapMasked {
        input: Var,
        lens: Vec<usize>,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    Mse {
        a: Var,
        b: Var,
    },
}

pub struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
}

impl<T> Node<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
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
            grads: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient (network inputs, targets).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient of the last [`backward`](Self::backward) target with respect
    /// to `v`, if any gradient reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Cross-correlation of `[B,C,F,T]` input with `[O,C,kF,kT]` weights.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<Var> {
        let x = self.value(input);
        let w = self.value(weight);
        let b = bias.map(|b| self.value(b));
        let geom = conv::ConvGeom::new(x.shape(), w.shape(), b.map(|b| b.shape()), stride, pad)?;
        let (out, cols) = conv::forward(&geom, x.data(), w.data(), b.map(|b| b.data()));
        let rg = self.needs(input) || self.needs(weight) || bias.is_some_and(|b| self.needs(b));
        let cols = if rg { cols } else { Vec::new() };
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
                cols,
            },
            rg,
        ))
    }

    /// Max pooling over the last two axes. Partial windows at the trailing
    /// edge are kept, so an extent `n` maps to `ceil((n - k) / s) + 1`.
    pub fn max_pool2d(&mut self, input: Var, kernel: (usize, usize), stride: (usize, usize)) -> Result<Var> {
        let (out, argmax) = pool::max_pool2d(self.value(input), kernel, stride)?;
        let rg = self.needs(input);
        Ok(self.push(out, Op::MaxPool2d { input, argmax }, rg))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let mut out = self.value(input).clone();
        for v in out.data_mut() {
            if *v < T::zero() {
                *v = T::zero();
            }
        }
        let rg = self.needs(input);
        self.push(out, Op::Relu { input }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                left: va.shape().to_vec(),
                right: vb.shape().to_vec(),
            });
        }
        let mut out = va.clone();
        out.add_assign(vb);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add { a, b }, rg))
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Var {
        let mut out = self.value(input).clone();
        for v in out.data_mut() {
            *v *= factor;
        }
        let rg = self.needs(input);
        self.push(out, Op::Scale { input, factor }, rg)
    }

    /// Zeroes every time step `t >= lens[b]` of a `[B,C,F,T]` tensor.
    pub fn mask_time(&mut self, input: Var, lens: &[usize]) -> Result<Var> {
        let out = pool::mask_time(self.value(input), lens)?;
        let rg = self.needs(input);
        Ok(self.push(
            out,
            Op::MaskTime {
                input,
                lens: lens.to_vec(),
            },
            rg,
        ))
    }

    /// Mean over frequency and the first `lens[b]` time steps: `[B,C,F,T] -> [B,C]`.
    pub fn gap_masked(&mut self, input: Var, lens: &[usize]) -> Result<Var> {
        let out = pool::gap_masked(self.value(input), lens)?;
        let rg = self.needs(input);
        Ok(self.push(
            out,
            Op::GapMasked {
                input,
                lens: lens.to_vec(),
            },
            rg,
        ))
    }

    /// `[B,In] · [Out,In]ᵀ + [Out]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let out = loss::linear_forward(self.value(input), self.value(weight), bias.map(|b| self.value(b)))?;
        let rg = self.needs(input) || self.needs(weight) || bias.is_some_and(|b| self.needs(b));
        Ok(self.push(out, Op::Linear { input, weight, bias }, rg))
    }

    /// Mean softmax cross-entropy over the batch. With a layout, item `b` is
    /// normalized only over the block of language `langs[b]`; otherwise over
    /// every output.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        layout: Option<(&BlockLayout, &[usize])>,
    ) -> Result<Var> {
        let (value, probs) = loss::cross_entropy_forward(self.value(logits), targets, layout)?;
        let rg = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(value),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Mean over rows of `(1/d)·‖a_b − b_b‖²` for `[B,d]` inputs.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = loss::mse_forward(self.value(a), self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::scalar(value), Op::Mse { a, b }, rg))
    }

    /// Reverse sweep from a scalar node. Gradients from a previous call are
    /// discarded.
    pub fn backward(&mut self, target: Var) -> Result<()> {
        let root = &self.nodes[target.0].value;
        if root.len() != 1 {
            return Err(TensorError::Invalid {
                op: "backward",
                msg: format!("target must be scalar, got shape {:?}", root.shape()),
            });
        }
        if !root.all_finite() {
            return Err(TensorError::NonFinite { op: "backward" });
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[target.0] = Some(Tensor::full(root.shape(), T::one()));

        let Graph { nodes, grads } = self;
        for i in (0..=target.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if node.requires_grad {
                backprop_node(nodes, grads, node, &g);
            }
            grads[i] = Some(g);
        }
        Ok(())
    }
}

fn slot<'a, T: Scalar>(nodes: &[Node<T>], grads: &'a mut [Option<Tensor<T>>], v: Var) -> Option<&'a mut Tensor<T>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(nodes[v.0].value.shape())))
}

fn backprop_node<T: Scalar>(nodes: &[Node<T>], grads: &mut [Option<Tensor<T>>], node: &Node<T>, g: &Tensor<T>) {
    match &node.op {
        Op::Leaf => {}
        Op::Conv2d {
            input,
            weight,
            bias,
            geom,
            cols,
        } => {
            if let Some(dw) = slot(nodes, grads, *weight) {
                conv::backward_weight(geom, g.data(), cols, dw.data_mut());
            }
            if let Some(b) = bias {
                if let Some(db) = slot(nodes, grads, *b) {
                    conv::backward_bias(geom, g.data(), db.data_mut());
                }
            }
            let w = nodes[weight.0].value.data();
            if let Some(dx) = slot(nodes, grads, *input) {
                conv::backward_input(geom, g.data(), w, dx.data_mut());
            }
        }
        Op::MaxPool2d { input, argmax } => {
            if let Some(dx) = slot(nodes, grads, *input) {
                let dx = dx.data_mut();
                for (&src, &gv) in argmax.iter().zip(g.data()) {
                    dx[src] += gv;
                }
            }
        }
        Op::Relu { input } => {
            if let Some(dx) = slot(nodes, grads, *input) {
                for ((d, &y), &gv) in dx.data_mut().iter_mut().zip(node.value.data()).zip(g.data()) {
                    if y > T::zero() {
                        *d += gv;
                    }
                }
            }
        }
        Op::Add { a, b } => {
            for v in [*a, *b] {
                if let Some(d) = slot(nodes, grads, v) {
                    d.add_assign(g);
                }
            }
        }
        Op::Scale { input, factor } => {
            if let Some(dx) = slot(nodes, grads, *input) {
                for (d, &gv) in dx.data_mut().iter_mut().zip(g.data()) {
                    *d += *factor * gv;
                }
            }
        }
        Op::MaskTime { input, lens } => {
            if let Some(dx) = slot(nodes, grads, *input) {
                let masked = pool::mask_time(g, lens).expect("shape validated in forward");
                dx.add_assign(&masked);
            }
        }
        Op::GapMasked { input, lens } => {
            if let Some(dx) = slot(nodes, grads, *input) {
                pool::gap_masked_backward(g, lens, dx);
            }
        }
        Op::Linear { input, weight, bias } => {
            let x = &nodes[input.0].value;
            let w = &nodes[weight.0].value;
            if let Some(dw) = slot(nodes, grads, *weight) {
                loss::linear_backward_weight(g, x, dw);
            }
            if let Some(b) = bias {
                if let Some(db) = slot(nodes, grads, *b) {
                    loss::linear_backward_bias(g, db);
                }
            }
            if let Some(dx) = slot(nodes, grads, *input) {
                loss::linear_backward_input(g, w, dx);
            }
        }
        Op::CrossEntropy { logits, targets, probs } => {
            if let Some(dl) = slot(nodes, grads, *logits) {
                loss::cross_entropy_backward(g.item(), targets, probs, dl);
            }
        }
        Op::Mse { a, b } => {
            let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
            let rows = va.shape()[0];
            let d = va.len() / rows.max(1);
            let k = g.item() * T::from_f64_lossy(2.0 / (d * rows) as f64);
            if let Some(da) = slot(nodes, grads, *a) {
                for ((o, &x), &y) in da.data_mut().iter_mut().zip(va.data()).zip(vb.data()) {
                    *o += k * (x - y);
                }
            }
            if let Some(db) = slot(nodes, grads, *b) {
                for ((o, &x), &y) in db.data_mut().iter_mut().zip(va.data()).zip(vb.data()) {
                    *o -= k * (x - y);
                }
            }
        }
    }
}
