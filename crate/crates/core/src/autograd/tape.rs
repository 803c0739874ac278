//! Reverse-mode differentiation over tensor operations.
//!
//! Every operation appends a node holding its forward value and whatever it
//! needs for the backward pass. [`Tape::backward`] walks the nodes once in
//! reverse order. Reductions also keep an `f64` copy of their result so that
//! finite-difference checks are not limited by `f32` rounding of large sums.

use std::collections::HashMap;

use crate::autograd::param::{ParamId, ParamStore};
use crate::error::{invalid, Result};
use crate::losses;
use crate::ops::batchnorm::{self, BatchStats};
use crate::ops::{conv, elementwise, pool, resize};
use crate::tensor::{ConvSpec, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<f64>,
        var: Vec<f64>,
        eps: f32,
        through_stats: bool,
    },
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Scale(Var, f32),
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    AvgPool {
        x: Var,
        kernel: usize,
        stride: usize,
    },
    Resize(Var),
    Sum(Var),
    Bce {
        p: Var,
        g: Var,
    },
    Iou {
        p: Var,
        g: Var,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    scalar64: Option<f64>,
    param: Option<ParamId>,
    requires_grad: bool,
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b.iter().copied());
                v
            }
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Relu(x) | Op::Sigmoid(x) | Op::Scale(x, _) | Op::Resize(x) | Op::Sum(x) => vec![*x],
            Op::Add(a, b) => vec![*a, *b],
            Op::Concat(parts) => parts.clone(),
            Op::Slice { x, .. } | Op::MaxPool { x, .. } | Op::AvgPool { x, .. } => vec![*x],
            Op::Bce { p, .. } | Op::Iou { p, .. } => vec![*p],
        }
    }
}

/// Ordered record of executed operations.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Adds every parameter gradient into the store's `grad` buffers.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for &(id, var) in &self.params {
            if let Some(g) = self.wrt(var) {
                let p = store.get_mut(id);
                for (dst, src) in p.grad.data_mut().iter_mut().zip(g.data()) {
                    *dst += src;
                }
            }
        }
    }
}

fn add_into(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.push_full(value, op, None)
    }

    fn push_full(&mut self, value: Tensor, op: Op, scalar64: Option<f64>) -> Var {
        let requires_grad = match op {
            Op::Leaf => true,
            _ => op.inputs().iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            scalar64,
            param: None,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Leaf that never receives a gradient (images, targets).
    pub fn constant(&mut self, value: Tensor) -> Var {
        let v = self.push(value, Op::Leaf);
        self.nodes[v.0].requires_grad = false;
        v
    }

    /// Leaf bound to a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.leaf(store.value(id).clone());
        self.nodes[v.0].param = Some(id);
        self.params.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Scalar value of a single-element node, using the f64 copy when present.
    pub fn scalar(&self, v: Var) -> Result<f64> {
        let node = &self.nodes[v.0];
        match node.scalar64 {
            Some(s) => Ok(s),
            None => node.value.item().map(f64::from),
        }
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: &ConvSpec) -> Result<Var> {
        let out = conv::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), spec)?;
        Ok(self.push(out, Op::Conv { x, w, b, spec: *spec }))
    }

    /// Training-mode batchnorm; returns the batch statistics for the caller
    /// to fold into running estimates.
    pub fn batchnorm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f32) -> Result<(Var, BatchStats)> {
        self.check_bn(x, gamma, beta)?;
        let stats = batchnorm::batch_stats(self.value(x));
        let out = batchnorm::normalize(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            &stats.mean,
            &stats.var,
            eps,
        );
        let v = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean: stats.mean.clone(),
                var: stats.var.clone(),
                eps,
                through_stats: true,
            },
        );
        Ok((v, stats))
    }

    pub fn batchnorm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &Tensor,
        running_var: &Tensor,
        eps: f32,
    ) -> Result<Var> {
        self.check_bn(x, gamma, beta)?;
        let c = self.value(x).dims().1;
        if running_mean.len() != c || running_var.len() != c {
            return invalid("running statistics do not match channel count");
        }
        let mean: Vec<f64> = running_mean.data().iter().map(|&v| v as f64).collect();
        let var: Vec<f64> = running_var.data().iter().map(|&v| v as f64).collect();
        let out = batchnorm::normalize(self.value(x), self.value(gamma), self.value(beta), &mean, &var, eps);
        Ok(self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                var,
                eps,
                through_stats: false,
            },
        ))
    }

    fn check_bn(&self, x: Var, gamma: Var, beta: Var) -> Result<()> {
        let c = self.value(x).dims().1;
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return invalid(format!("batchnorm parameters do not match {c} channels"));
        }
        Ok(())
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = elementwise::relu(self.value(x));
        self.push(out, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = elementwise::sigmoid(self.value(x));
        self.push(out, Op::Sigmoid(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = elementwise::add(self.value(a), self.value(b))?;
        let s64 = match (self.nodes[a.0].scalar64, self.nodes[b.0].scalar64) {
            (Some(x), Some(y)) => Some(x + y),
            _ if out.len() == 1 => Some(self.scalar(a)? + self.scalar(b)?),
            _ => None,
        };
        Ok(self.push_full(out, Op::Add(a, b), s64))
    }

    pub fn scale(&mut self, x: Var, s: f32) -> Var {
        let out = elementwise::scale(self.value(x), s);
        let s64 = if out.len() == 1 {
            self.scalar(x).ok().map(|v| v * s as f64)
        } else {
            None
        };
        self.push_full(out, Op::Scale(x, s), s64)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|&v| self.value(v)).collect();
        let out = elementwise::concat_channels(&values)?;
        Ok(self.push(out, Op::Concat(parts.to_vec())))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let out = elementwise::slice_channels(self.value(x), start, len)?;
        Ok(self.push(out, Op::Slice { x, start }))
    }

    pub fn maxpool2d(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let (out, argmax) = pool::maxpool2d_with_indices(self.value(x), kernel, stride)?;
        Ok(self.push(out, Op::MaxPool { x, argmax }))
    }

    pub fn avgpool2d(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let out = pool::avgpool2d(self.value(x), kernel, stride)?;
        Ok(self.push(out, Op::AvgPool { x, kernel, stride }))
    }

    pub fn resize(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let out = resize::bilinear_resize(self.value(x), h, w)?;
        Ok(self.push(out, Op::Resize(x)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push_full(Tensor::scalar(s as f32), Op::Sum(x), Some(s))
    }

    /// Pixel-summed binary cross entropy; `g` is treated as a constant.
    pub fn bce(&mut self, p: Var, g: Var) -> Result<Var> {
        let s = losses::bce(self.value(p), self.value(g))?;
        Ok(self.push_full(Tensor::scalar(s as f32), Op::Bce { p, g }, Some(s)))
    }

    /// Soft IoU loss; `g` is treated as a constant.
    pub fn iou(&mut self, p: Var, g: Var) -> Result<Var> {
        let s = losses::iou_loss(self.value(p), self.value(g))?;
        Ok(self.push_full(Tensor::scalar(s as f32), Op::Iou { p, g }, Some(s)))
    }

    /// Backpropagates from a scalar `loss`. Forward values are not modified.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return invalid(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            ));
        }
        self.backward_seeded(loss, Tensor::full(self.value(loss).shape(), 1.0))
    }

    /// Backpropagates `seed` as the gradient of `output`, giving the
    /// vector-Jacobian product for a non-scalar output.
    pub fn backward_seeded(&self, output: Var, seed: Tensor) -> Result<Gradients> {
        if seed.shape() != self.value(output).shape() {
            return invalid(format!(
                "seed {:?} does not match output {:?}",
                seed.shape(),
                self.value(output).shape()
            ));
        }
        let loss = output;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(seed);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(&node.op, &node.value, g, &mut grads)?;
        }

        let params = self.params.iter().map(|(&id, &v)| (id, v)).collect();
        Ok(Gradients { grads, params })
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::Conv { x, w, b, spec } => {
                let need_input = self.nodes[x.0].requires_grad;
                let cg = conv::conv2d_backward(self.value(*x), self.value(*w), &g, spec, need_input)?;
                if let Some(dx) = cg.input {
                    add_into(&mut grads[x.0], dx);
                }
                add_into(&mut grads[w.0], cg.weight);
                if let Some(b) = b {
                    add_into(&mut grads[b.0], cg.bias);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                var,
                eps,
                through_stats,
            } => {
                let (dx, dg, db) = batchnorm::batchnorm_backward(
                    self.value(*x),
                    self.value(*gamma),
                    &g,
                    mean,
                    var,
                    *eps,
                    *through_stats,
                );
                add_into(&mut grads[x.0], dx);
                add_into(&mut grads[gamma.0], dg);
                add_into(&mut grads[beta.0], db);
            }
            Op::Relu(x) => {
                let dx = self.value(*x).zip_map(&g, |v, gv| if v > 0.0 { gv } else { 0.0 })?;
                add_into(&mut grads[x.0], dx);
            }
            Op::Sigmoid(x) => {
                let dx = out.zip_map(&g, |s, gv| gv * s * (1.0 - s))?;
                add_into(&mut grads[x.0], dx);
            }
            Op::Add(a, b) => {
                add_into(&mut grads[a.0], g.clone());
                add_into(&mut grads[b.0], g);
            }
            Op::Scale(x, s) => {
                add_into(&mut grads[x.0], elementwise::scale(&g, *s));
            }
            Op::Concat(parts) => {
                let mut start = 0;
                for p in parts {
                    let c = self.value(*p).dims().1;
                    add_into(&mut grads[p.0], elementwise::slice_channels(&g, start, c)?);
                    start += c;
                }
            }
            Op::Slice { x, start } => {
                let (n, c, h, w) = self.value(*x).dims();
                let len = g.dims().1;
                let mut dx = Tensor::zeros([n, c, h, w]);
                let plane = h * w;
                for ni in 0..n {
                    let dst = (ni * c + start) * plane;
                    let src = ni * len * plane;
                    dx.data_mut()[dst..dst + len * plane].copy_from_slice(&g.data()[src..src + len * plane]);
                }
                add_into(&mut grads[x.0], dx);
            }
            Op::MaxPool { x, argmax } => {
                let dx = pool::maxpool2d_backward(self.value(*x).shape(), argmax, &g);
                add_into(&mut grads[x.0], dx);
            }
            Op::AvgPool { x, kernel, stride } => {
                let dx = pool::avgpool2d_backward(self.value(*x).shape(), *kernel, *stride, &g);
                add_into(&mut grads[x.0], dx);
            }
            Op::Resize(x) => {
                let dx = resize::bilinear_resize_backward(self.value(*x).shape(), &g);
                add_into(&mut grads[x.0], dx);
            }
            Op::Sum(x) => {
                let gv = g.data()[0];
                add_into(&mut grads[x.0], Tensor::full(self.value(*x).shape(), gv));
            }
            Op::Bce { p, g: target } => {
                let gv = g.data()[0] as f64;
                let dp = losses::bce_grad(self.value(*p), self.value(*target), gv)?;
                add_into(&mut grads[p.0], dp);
            }
            Op::Iou { p, g: target } => {
                let gv = g.data()[0] as f64;
                let dp = losses::iou_grad(self.value(*p), self.value(*target), gv)?;
                add_into(&mut grads[p.0], dp);
            }
        }
        Ok(())
    }
}
