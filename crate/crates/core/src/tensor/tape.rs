//! Reverse-mode automatic differentiation over a recorded operation tape.
//!
//! Every operation appends one node holding its forward value and whatever it
//! needs for the pullback. Nodes are appended after their operands, so the tape
//! is already in topological order; `backward` walks it in exact reverse.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::kernels::{self, ConvGeom};
use super::params::{Gradients, ParamId, ParamStore};
use super::Tensor;
use crate::error::{config_err, contract_err, Error, Result};
use crate::metrics::ctc;
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Pointwise nonlinearities available on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Gelu,
    Sigmoid,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::Gelu => {
                let (c, a) = gelu_consts::<T>();
                let half = T::of(0.5);
                half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
            }
            Activation::Sigmoid => T::one() / (T::one() + (-x).exp()),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative given the input `x` and output `y`.
    fn derivative<T: Scalar>(self, x: T, y: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Gelu => {
                let (c, a) = gelu_consts::<T>();
                let half = T::of(0.5);
                let u = c * (x + a * x * x * x);
                let th = u.tanh();
                let du = c * (T::one() + T::of(3.0) * a * x * x);
                half * (T::one() + th) + half * x * (T::one() - th * th) * du
            }
            Activation::Sigmoid => y * (T::one() - y),
            Activation::Tanh => T::one() - y * y,
            Activation::Identity => T::one(),
        }
    }
}

fn gelu_consts<T: Scalar>() -> (T, T) {
    (T::of((2.0 / std::f64::consts::PI).sqrt()), T::of(0.044715))
}

enum Op<T> {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    MatMul(Var, Var),
    BatchMatMul { a: Var, b: Var, transpose_b: bool },
    Unary(Var, Activation),
    Softmax { x: Var, axis: usize },
    LogSoftmax(Var),
    Normalize { x: Var, inv_std: Vec<T> },
    Conv1d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    Permute { x: Var, perm: Vec<usize> },
    Reshape(Var),
    Concat { parts: Vec<Var>, axis: usize },
    BroadcastTo(Var),
    MeanAxis { x: Var, axis: usize },
    Sum(Var),
    Nll { logp: Var, labels: Vec<usize> },
    Ctc { logp: Var, grad: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recorded forward computation.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    param_leaves: HashMap<ParamId, Var>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_leaves: HashMap::new(),
        }
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a constant input; it never receives gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push("constant", value, Op::Leaf, false)
    }

    /// Records a parameter read. Repeated reads of the same parameter share a node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.param_leaves.get(&id) {
            return v;
        }
        let p = store.get(id);
        self.nodes.push(Node {
            value: p.value.clone(),
            op: Op::Param(id),
            requires_grad: p.trainable,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_leaves.insert(id, v);
        v
    }

    // ── elementwise ────────────────────────────────────────────────────

    /// Broadcasting addition.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let out_shape = kernels::broadcast_shape("add", ta.shape(), tb.shape())?;
        let data = if ta.shape() == tb.shape() {
            ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect()
        } else {
            let sa = kernels::broadcast_strides(ta.shape(), &out_shape);
            let sb = kernels::broadcast_strides(tb.shape(), &out_shape);
            let mut out = vec![T::zero(); out_shape.iter().product()];
            let (da, db) = (ta.data(), tb.data());
            kernels::for_each_broadcast(&out_shape, &sa, &sb, |o, i, j| out[o] = da[i] + db[j]);
            out
        };
        let rg = self.rg(&[a, b]);
        self.push("add", Tensor::from_parts(out_shape, data), Op::Add(a, b), rg)
    }

    /// Broadcasting elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let out_shape = kernels::broadcast_shape("mul", ta.shape(), tb.shape())?;
        let sa = kernels::broadcast_strides(ta.shape(), &out_shape);
        let sb = kernels::broadcast_strides(tb.shape(), &out_shape);
        let mut out = vec![T::zero(); out_shape.iter().product()];
        let (da, db) = (ta.data(), tb.data());
        kernels::for_each_broadcast(&out_shape, &sa, &sb, |o, i, j| out[o] = da[i] * db[j]);
        let rg = self.rg(&[a, b]);
        self.push("mul", Tensor::from_parts(out_shape, out), Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        let value = self.value(a).map(|x| x * s);
        let rg = self.rg(&[a]);
        self.push("scale", value, Op::Scale(a, s), rg)
    }

    pub fn activation(&mut self, a: Var, act: Activation) -> Result<Var> {
        if act == Activation::Identity {
            return Ok(a);
        }
        let value = self.value(a).map(|x| act.apply(x));
        let rg = self.rg(&[a]);
        self.push("activation", value, Op::Unary(a, act), rg)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Relu)
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Gelu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Sigmoid)
    }

    // ── linear algebra ─────────────────────────────────────────────────

    /// `x[..., k] · w[k, m]`.
    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        let k = *tx.shape().last().unwrap_or(&1);
        if tw.rank() != 2 || tw.shape()[0] != k || tx.rank() == 0 {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: tx.shape().to_vec(),
                rhs: tw.shape().to_vec(),
            });
        }
        let m = tw.shape()[1];
        let n = tx.len() / k;
        let data = kernels::matmul(tx.data(), tw.data(), n, k, m);
        let mut shape = tx.shape().to_vec();
        *shape.last_mut().unwrap() = m;
        let rg = self.rg(&[x, w]);
        self.push("matmul", Tensor::from_parts(shape, data), Op::MatMul(x, w), rg)
    }

    /// `x · W + b` over the last axis.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => {
                let out = *self.shape(y).last().unwrap();
                if self.shape(b) != [out] {
                    return Err(Error::Dimension {
                        op: "linear bias",
                        lhs: self.shape(y).to_vec(),
                        rhs: self.shape(b).to_vec(),
                    });
                }
                self.add(y, b)
            }
            None => Ok(y),
        }
    }

    /// Batched product over matching leading axes: `a[.., n, k] · b[.., k, m]`,
    /// or `a · bᵀ` with `b[.., m, k]` when `transpose_b`.
    pub fn batch_matmul(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (ra, rb) = (ta.rank(), tb.rank());
        let bad = || Error::Dimension {
            op: "batch_matmul",
            lhs: ta.shape().to_vec(),
            rhs: tb.shape().to_vec(),
        };
        if ra < 2 || ra != rb || ta.shape()[..ra - 2] != tb.shape()[..rb - 2] {
            return Err(bad());
        }
        let (n, k) = (ta.shape()[ra - 2], ta.shape()[ra - 1]);
        let (bk, m) = if transpose_b {
            (tb.shape()[rb - 1], tb.shape()[rb - 2])
        } else {
            (tb.shape()[rb - 2], tb.shape()[rb - 1])
        };
        if bk != k {
            return Err(bad());
        }
        let batch: usize = ta.shape()[..ra - 2].iter().product();
        let mut data = Vec::with_capacity(batch * n * m);
        for i in 0..batch {
            let sa = &ta.data()[i * n * k..(i + 1) * n * k];
            let sb = &tb.data()[i * k * m..(i + 1) * k * m];
            if transpose_b {
                data.extend(kernels::matmul_nt(sa, sb, n, k, m));
            } else {
                data.extend(kernels::matmul(sa, sb, n, k, m));
            }
        }
        let mut shape = ta.shape()[..ra - 2].to_vec();
        shape.extend([n, m]);
        let rg = self.rg(&[a, b]);
        self.push(
            "batch_matmul",
            Tensor::from_parts(shape, data),
            Op::BatchMatMul { a, b, transpose_b },
            rg,
        )
    }

    // ── normalization ─────────────────────────────────────────────────

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let tx = self.value(x);
        if axis >= tx.rank() {
            return contract_err(format!("softmax axis {axis} out of range for shape {:?}", tx.shape()));
        }
        let (o, l, i) = kernels::split_axis(tx.shape(), axis);
        let data = kernels::softmax(tx.data(), o, l, i);
        let shape = tx.shape().to_vec();
        let rg = self.rg(&[x]);
        self.push("softmax", Tensor::from_parts(shape, data), Op::Softmax { x, axis }, rg)
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let len = *tx.shape().last().unwrap_or(&1);
        let data = kernels::log_softmax_rows(tx.data(), len);
        let shape = tx.shape().to_vec();
        let rg = self.rg(&[x]);
        self.push("log_softmax", Tensor::from_parts(shape, data), Op::LogSoftmax(x), rg)
    }

    /// Zero-mean, unit-variance normalization over the last axis (no affine).
    pub fn normalize(&mut self, x: Var, eps: T) -> Result<Var> {
        if eps <= T::zero() {
            return contract_err("layer norm eps must be positive");
        }
        let tx = self.value(x);
        let len = *tx.shape().last().unwrap_or(&1);
        let (data, inv_std) = kernels::normalize_rows(tx.data(), len, eps);
        let shape = tx.shape().to_vec();
        let rg = self.rg(&[x]);
        self.push("layer_norm", Tensor::from_parts(shape, data), Op::Normalize { x, inv_std }, rg)
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let d = *self.shape(x).last().unwrap_or(&1);
        for p in [gamma, beta] {
            if self.shape(p) != [d] {
                return Err(Error::Dimension {
                    op: "layer_norm",
                    lhs: self.shape(x).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let n = self.normalize(x, eps)?;
        let s = self.mul(n, gamma)?;
        self.add(s, beta)
    }

    // ── convolution ───────────────────────────────────────────────────

    /// Same-padded grouped 1-D convolution: `x[B, C_in, T]`, `w[C_out, C_in/groups, k]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, groups: usize) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        if tx.rank() != 3 || tw.rank() != 3 {
            return Err(Error::Dimension {
                op: "conv1d",
                lhs: tx.shape().to_vec(),
                rhs: tw.shape().to_vec(),
            });
        }
        let (batch, c_in, len) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
        let (c_out, cin_g, kernel) = (tw.shape()[0], tw.shape()[1], tw.shape()[2]);
        if kernel % 2 == 0 {
            return config_err(format!("conv1d kernel {kernel} must be odd for same padding"));
        }
        if groups == 0 || c_in % groups != 0 || c_out % groups != 0 {
            return config_err(format!(
                "conv1d channels ({c_in} in, {c_out} out) not divisible by groups {groups}"
            ));
        }
        if cin_g != c_in / groups {
            return Err(Error::Dimension {
                op: "conv1d",
                lhs: tx.shape().to_vec(),
                rhs: tw.shape().to_vec(),
            });
        }
        if let Some(b) = b {
            if self.shape(b) != [c_out] {
                return Err(Error::Dimension {
                    op: "conv1d bias",
                    lhs: tw.shape().to_vec(),
                    rhs: self.shape(b).to_vec(),
                });
            }
        }
        let geom = ConvGeom {
            batch,
            c_in,
            c_out,
            len,
            kernel,
            groups,
        };
        let bias = b.map(|b| self.value(b).data());
        let data = kernels::conv1d(tx.data(), tw.data(), bias, geom);
        let mut operands = vec![x, w];
        operands.extend(b);
        let rg = self.rg(&operands);
        self.push(
            "conv1d",
            Tensor::from_parts(vec![batch, c_out, len], data),
            Op::Conv1d { x, w, b, geom },
            rg,
        )
    }

    // ── shape ─────────────────────────────────────────────────────────

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        let mut seen = vec![false; tx.rank()];
        if perm.len() != tx.rank() || perm.iter().any(|&p| p >= seen.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Dimension {
                op: "permute",
                lhs: tx.shape().to_vec(),
                rhs: perm.to_vec(),
            });
        }
        let (data, shape) = kernels::permute(tx.data(), tx.shape(), perm);
        let rg = self.rg(&[x]);
        self.push(
            "permute",
            Tensor::from_parts(shape, data),
            Op::Permute { x, perm: perm.to_vec() },
            rg,
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        self.push("reshape", value, Op::Reshape(x), rg)
    }

    /// Concatenates along `axis`; all other axes must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.value(parts[0]).shape().to_vec();
        if axis >= first.len() {
            return contract_err(format!("concat axis {axis} out of range for {first:?}"));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len() || s.iter().zip(&first).enumerate().any(|(i, (a, b))| i != axis && a != b) {
                return Err(Error::Dimension {
                    op: "concat",
                    lhs: first,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let (outer, _, inner) = kernels::split_axis(&first, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let tp = self.value(p);
                let chunk = tp.shape()[axis] * inner;
                data.extend_from_slice(&tp.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let rg = self.rg(parts);
        self.push(
            "concat",
            Tensor::from_parts(shape, data),
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        )
    }

    /// Expands size-1 (or missing leading) axes to `shape`.
    pub fn broadcast_to(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        let out = kernels::broadcast_shape("broadcast_to", shape, tx.shape())?;
        if out != shape {
            return Err(Error::Dimension {
                op: "broadcast_to",
                lhs: tx.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let sx = kernels::broadcast_strides(tx.shape(), shape);
        let zeros = vec![0; shape.len()];
        let mut data = vec![T::zero(); shape.iter().product()];
        let src = tx.data();
        kernels::for_each_broadcast(shape, &sx, &zeros, |o, i, _| data[o] = src[i]);
        let rg = self.rg(&[x]);
        self.push("broadcast_to", Tensor::from_parts(shape.to_vec(), data), Op::BroadcastTo(x), rg)
    }

    // ── reductions ────────────────────────────────────────────────────

    /// Mean over `axis`, removing it.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let tx = self.value(x);
        if axis >= tx.rank() {
            return contract_err(format!("mean axis {axis} out of range for {:?}", tx.shape()));
        }
        let (outer, len, inner) = kernels::split_axis(tx.shape(), axis);
        let n = T::of(len as f64);
        let mut data = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..len {
                let row = &tx.data()[(o * len + j) * inner..(o * len + j + 1) * inner];
                for (d, &v) in data[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *d += v;
                }
            }
        }
        data.iter_mut().for_each(|d| *d /= n);
        let mut shape = tx.shape().to_vec();
        shape.remove(axis);
        let rg = self.rg(&[x]);
        self.push("mean", Tensor::from_parts(shape, data), Op::MeanAxis { x, axis }, rg)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        let rg = self.rg(&[x]);
        self.push("sum", Tensor::scalar(s), Op::Sum(x), rg)
    }

    // ── losses ────────────────────────────────────────────────────────

    /// Mean negative log-likelihood of `labels` under row log-probabilities `logp[N, C]`.
    pub fn nll(&mut self, logp: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logp);
        let c = *t.shape().last().unwrap_or(&1);
        let n = t.len() / c;
        if labels.len() != n {
            return Err(Error::Dimension {
                op: "nll",
                lhs: t.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return contract_err(format!("label {bad} out of range for {c} classes"));
        }
        let total: T = labels.iter().enumerate().map(|(i, &l)| t.data()[i * c + l]).sum();
        let loss = -total / T::of(n as f64);
        let rg = self.rg(&[logp]);
        self.push(
            "nll",
            Tensor::scalar(loss),
            Op::Nll {
                logp,
                labels: labels.to_vec(),
            },
            rg,
        )
    }

    /// Mean softmax cross-entropy of `logits[.., C]` against flattened `labels`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lp = self.log_softmax(logits)?;
        self.nll(lp, labels)
    }

    /// Mean CTC loss over a batch of log-probabilities `logp[B, T, V+1]` (blank = 0).
    pub fn ctc_loss(&mut self, logp: Var, labels: &[Vec<usize>]) -> Result<Var> {
        let t = self.value(logp);
        if t.rank() != 3 || t.shape()[0] != labels.len() {
            return Err(Error::Dimension {
                op: "ctc_loss",
                lhs: t.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        let (b, steps, v) = (t.shape()[0], t.shape()[1], t.shape()[2]);
        let inv_b = T::one() / T::of(b as f64);
        let mut total = T::zero();
        let mut grad = Vec::with_capacity(t.len());
        for (i, label) in labels.iter().enumerate() {
            let slice = &t.data()[i * steps * v..(i + 1) * steps * v];
            let out = ctc::ctc_forward_backward(slice, steps, v, label)?;
            if !out.feasible {
                return contract_err(format!(
                    "label of length {} cannot be aligned to {steps} frames",
                    label.len()
                ));
            }
            total += out.loss;
            grad.extend(out.grad.into_iter().map(|g| g * inv_b));
        }
        let rg = self.rg(&[logp]);
        self.push("ctc_loss", Tensor::scalar(total * inv_b), Op::Ctc { logp, grad }, rg)
    }

    // ── reverse pass ──────────────────────────────────────────────────

    /// Back-propagates from a scalar `loss`, returning gradients of every
    /// trainable parameter that the loss depends on.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if !self.value(loss).is_scalar() {
            return contract_err(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            ));
        }
        let mut out = Gradients::new();
        if !self.requires_grad(loss) {
            return Ok(out);
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if let Op::Param(id) = node.op {
                out.insert(id, Tensor::from_parts(node.value.shape().to_vec(), g));
                continue;
            }
            for (var, contrib) in self.pullback(node, &g) {
                match &mut grads[var.0] {
                    Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, &c)| *a += c),
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        Ok(out)
    }

    /// Gradient contributions of one node to those operands that require grad.
    fn pullback(&self, node: &Node<T>, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let val = |v: Var| &self.nodes[v.0].value;
        let out_shape = node.value.shape();
        let mut res = Vec::new();
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Add(a, b) => {
                for &v in [a, b] {
                    if needs(v) {
                        res.push((v, kernels::reduce_to(g, out_shape, val(v).shape())));
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let sa = kernels::broadcast_strides(ta.shape(), out_shape);
                let sb = kernels::broadcast_strides(tb.shape(), out_shape);
                let (need_a, need_b) = (needs(*a), needs(*b));
                let mut ga = vec![T::zero(); if need_a { ta.len() } else { 0 }];
                let mut gb = vec![T::zero(); if need_b { tb.len() } else { 0 }];
                let (da, db) = (ta.data(), tb.data());
                kernels::for_each_broadcast(out_shape, &sa, &sb, |o, i, j| {
                    if need_a {
                        ga[i] += g[o] * db[j];
                    }
                    if need_b {
                        gb[j] += g[o] * da[i];
                    }
                });
                if need_a {
                    res.push((*a, ga));
                }
                if need_b {
                    res.push((*b, gb));
                }
            }
            Op::Scale(a, s) => res.push((*a, g.iter().map(|&x| x * *s).collect())),
            Op::MatMul(x, w) => {
                let (tx, tw) = (val(*x), val(*w));
                let (k, m) = (tw.shape()[0], tw.shape()[1]);
                let n = tx.len() / k;
                if needs(*x) {
                    res.push((*x, kernels::matmul_nt(g, tw.data(), n, m, k)));
                }
                if needs(*w) {
                    res.push((*w, kernels::matmul_tn(tx.data(), g, n, k, m)));
                }
            }
            Op::BatchMatMul { a, b, transpose_b } => {
                let (ta, tb) = (val(*a), val(*b));
                let r = ta.rank();
                let (n, k) = (ta.shape()[r - 2], ta.shape()[r - 1]);
                let m = out_shape[r - 1];
                let batch = ta.len() / (n * k);
                let (need_a, need_b) = (needs(*a), needs(*b));
                let mut ga = Vec::with_capacity(if need_a { ta.len() } else { 0 });
                let mut gb = Vec::with_capacity(if need_b { tb.len() } else { 0 });
                for i in 0..batch {
                    let sa = &ta.data()[i * n * k..(i + 1) * n * k];
                    let sb = &tb.data()[i * k * m..(i + 1) * k * m];
                    let sg = &g[i * n * m..(i + 1) * n * m];
                    if *transpose_b {
                        if need_a {
                            ga.extend(kernels::matmul(sg, sb, n, m, k));
                        }
                        if need_b {
                            gb.extend(kernels::matmul_tn(sg, sa, n, m, k));
                        }
                    } else {
                        if need_a {
                            ga.extend(kernels::matmul_nt(sg, sb, n, m, k));
                        }
                        if need_b {
                            gb.extend(kernels::matmul_tn(sa, sg, n, k, m));
                        }
                    }
                }
                if need_a {
                    res.push((*a, ga));
                }
                if need_b {
                    res.push((*b, gb));
                }
            }
            Op::Unary(x, act) => {
                let tx = val(*x);
                let d = tx
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .zip(g)
                    .map(|((&xi, &yi), &gi)| gi * act.derivative(xi, yi))
                    .collect();
                res.push((*x, d));
            }
            Op::Softmax { x, axis } => {
                let (o, l, i) = kernels::split_axis(out_shape, *axis);
                res.push((*x, kernels::softmax_backward(node.value.data(), g, o, l, i)));
            }
            Op::LogSoftmax(x) => {
                let len = *out_shape.last().unwrap_or(&1);
                let mut d = vec![T::zero(); g.len()];
                for ((dr, gr), yr) in d.chunks_mut(len).zip(g.chunks(len)).zip(node.value.data().chunks(len)) {
                    let gs: T = gr.iter().copied().sum();
                    for ((di, &gi), &yi) in dr.iter_mut().zip(gr).zip(yr) {
                        *di = gi - yi.exp() * gs;
                    }
                }
                res.push((*x, d));
            }
            Op::Normalize { x, inv_std } => {
                let len = *out_shape.last().unwrap_or(&1);
                res.push((*x, kernels::normalize_rows_backward(node.value.data(), inv_std, g, len)));
            }
            Op::Conv1d { x, w, b, geom } => {
                let (dx, dw, db) = kernels::conv1d_backward(val(*x).data(), val(*w).data(), g, *geom);
                if needs(*x) {
                    res.push((*x, dx));
                }
                if needs(*w) {
                    res.push((*w, dw));
                }
                if let Some(b) = b {
                    if needs(*b) {
                        res.push((*b, db));
                    }
                }
            }
            Op::Permute { x, perm } => {
                let (d, _) = kernels::permute(g, out_shape, &kernels::inverse_perm(perm));
                res.push((*x, d));
            }
            Op::Reshape(x) => res.push((*x, g.to_vec())),
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = kernels::split_axis(out_shape, *axis);
                let mut offset = 0;
                for &p in parts {
                    let len = val(p).shape()[*axis];
                    if needs(p) {
                        let mut d = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let start = (o * total + offset) * inner;
                            d.extend_from_slice(&g[start..start + len * inner]);
                        }
                        res.push((p, d));
                    }
                    offset += len;
                }
            }
            Op::BroadcastTo(x) => res.push((*x, kernels::reduce_to(g, out_shape, val(*x).shape()))),
            Op::MeanAxis { x, axis } => {
                let (outer, len, inner) = kernels::split_axis(val(*x).shape(), *axis);
                let n = T::of(len as f64);
                let mut d = vec![T::zero(); outer * len * inner];
                for o in 0..outer {
                    for j in 0..len {
                        for i in 0..inner {
                            d[(o * len + j) * inner + i] = g[o * inner + i] / n;
                        }
                    }
                }
                res.push((*x, d));
            }
            Op::Sum(x) => res.push((*x, vec![g[0]; val(*x).len()])),
            Op::Nll { logp, labels } => {
                let t = val(*logp);
                let c = *t.shape().last().unwrap_or(&1);
                let scale = -g[0] / T::of(labels.len() as f64);
                let mut d = vec![T::zero(); t.len()];
                for (i, &l) in labels.iter().enumerate() {
                    d[i * c + l] = scale;
                }
                res.push((*logp, d));
            }
            Op::Ctc { logp, grad } => res.push((*logp, grad.iter().map(|&x| x * g[0]).collect())),
        }
        res
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn linear_examples() {
        let mut store = ParamStore::<f64>::new();
        let eye = store.add("eye", Tensor::eye(2), true).unwrap();
        let zb = store.add("zb", Tensor::zeros(&[2]), true).unwrap();
        let z23 = store.add("z23", Tensor::zeros(&[2, 3]), true).unwrap();
        let five = store.add("five", t(&[3], &[5.0, 5.0, 5.0]), true).unwrap();
        let diag = store.add("diag", t(&[2, 2], &[1.0, 0.0, 0.0, 2.0]), true).unwrap();
        let ones = store.add("ones", t(&[2], &[1.0, 1.0]), true).unwrap();

        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 1, 2], &[1.0, 2.0])).unwrap();
        let cases = [(eye, zb, vec![1.0, 2.0]), (z23, five, vec![5.0; 3]), (diag, ones, vec![2.0, 5.0])];
        for (w, b, want) in cases {
            let (w, b) = (tape.param(&store, w), tape.param(&store, b));
            let y = tape.linear(x, w, Some(b)).unwrap();
            assert_eq!(tape.value(y).data(), &want[..]);
        }
    }

    #[test]
    fn linear_shape_error_names_both_shapes() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[1, 3])).unwrap();
        let w = tape.constant(Tensor::zeros(&[2, 2])).unwrap();
        match tape.linear(x, w, None) {
            Err(Error::Dimension { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![1, 3]);
                assert_eq!(rhs, vec![2, 2]);
            }
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn conv1d_examples() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[1, 1, 3], &[1.0, 2.0, 3.0])).unwrap();
        let id = tape.constant(t(&[1, 1, 1], &[1.0])).unwrap();
        let y = tape.conv1d(x, id, None, 1).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0]);

        let zw = tape.constant(Tensor::zeros(&[1, 1, 3])).unwrap();
        let c = tape.constant(t(&[1], &[4.5])).unwrap();
        let y = tape.conv1d(x, zw, Some(c), 1).unwrap();
        assert_eq!(tape.value(y).data(), &[4.5; 3]);

        let w = tape.constant(t(&[1, 1, 3], &[1.0, 1.0, 1.0])).unwrap();
        let y = tape.conv1d(x, w, None, 1).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 6.0, 5.0]);
    }

    #[test]
    fn conv1d_configuration_errors() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[1, 3, 4])).unwrap();
        let even = tape.constant(Tensor::zeros(&[3, 3, 2])).unwrap();
        assert!(matches!(tape.conv1d(x, even, None, 1), Err(Error::Config(_))));
        let w = tape.constant(Tensor::zeros(&[2, 1, 3])).unwrap();
        assert!(matches!(tape.conv1d(x, w, None, 2), Err(Error::Config(_))));
    }

    #[test]
    fn softmax_examples() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[3], &[0.0, 0.0, 0.0])).unwrap();
        let y = tape.softmax(x, 0).unwrap();
        for &v in tape.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let x = tape.constant(t(&[3], &[1000.0, 0.0, 0.0])).unwrap();
        let y = tape.softmax(x, 0).unwrap();
        assert!((tape.value(y).data()[0] - 1.0).abs() < 1e-15);
        let x = tape.constant(t(&[3], &[1.0, 2.0, 3.0])).unwrap();
        let y = tape.softmax(x, 0).unwrap();
        let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
        for (i, &v) in tape.value(y).data().iter().enumerate() {
            assert!((v - ((i + 1) as f64).exp() / z).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_over_middle_axis() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_fn(&[2, 3, 2], |i| (i as f64 * 0.37).sin())).unwrap();
        let y = tape.softmax(x, 1).unwrap();
        let v = tape.value(y);
        for o in 0..2 {
            for i in 0..2 {
                let s: f64 = (0..3).map(|j| v.get(&[o, j, i])).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn layer_norm_examples() {
        let mut tape = Tape::<f64>::new();
        let one = tape.constant(Tensor::full(&[3], 1.0)).unwrap();
        let zero = tape.constant(Tensor::zeros(&[3])).unwrap();
        let c = tape.constant(Tensor::full(&[2, 3], 7.0)).unwrap();
        let y = tape.layer_norm(c, one, zero, 1e-5).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));

        let x = tape.constant(t(&[1, 3], &[1.0, 2.0, 3.0])).unwrap();
        let beta = tape.constant(t(&[3], &[0.5, -1.0, 2.0])).unwrap();
        let y = tape.layer_norm(x, zero, beta, 1e-5).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, -1.0, 2.0]);

        let y = tape.layer_norm(x, one, zero, 1e-5).unwrap();
        let s = (2.0f64 / 3.0 + 1e-5).sqrt();
        let want = [-1.0 / s, 0.0, 1.0 / s];
        for (&a, &b) in tape.value(y).data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn backward_of_sum_wx_is_outer_structure() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("W", Tensor::from_fn(&[2, 3], |i| i as f64 - 2.0), true).unwrap();
        let disconnected = store.add("P", Tensor::zeros(&[4]), true).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let wv = tape.param(&store, w);
        let _ = tape.param(&store, disconnected);
        let y = tape.matmul(x, wv).unwrap();
        let loss = tape.sum(y).unwrap();
        let grads = tape.backward(loss).unwrap();
        // d/dW_ij sum_n x_n·W = sum_n x_ni
        assert_eq!(grads.get(w).unwrap().data(), &[4.0, 4.0, 4.0, 6.0, 6.0, 6.0]);
        assert!(grads.get(disconnected).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[2])).unwrap();
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn frozen_parameter_gets_no_gradient() {
        let mut store = ParamStore::<f64>::new();
        let frozen = store.add("frozen", Tensor::full(&[2, 2], 0.5), false).unwrap();
        let live = store.add("live", Tensor::full(&[2], 0.1), true).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[3, 2], 1.0)).unwrap();
        let (fw, lb) = (tape.param(&store, frozen), tape.param(&store, live));
        let y = tape.linear(x, fw, Some(lb)).unwrap();
        let loss = tape.sum(y).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(frozen).is_none());
        assert_eq!(grads.get(live).unwrap().data(), &[3.0, 3.0]);
        store.accumulate(&grads);
        assert!(store.get(frozen).grad().is_none());
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full(&[2], 1e300)).unwrap();
        assert!(matches!(tape.mul(x, x), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn concat_and_broadcast_shapes() {
        let mut tape = Tape::<f64>::new();
        let p = tape.constant(Tensor::from_fn(&[1, 2, 1, 3], |i| i as f64)).unwrap();
        let pb = tape.broadcast_to(p, &[2, 2, 1, 3]).unwrap();
        let k = tape.constant(Tensor::full(&[2, 2, 4, 3], 9.0)).unwrap();
        let cat = tape.concat(&[pb, k], 2).unwrap();
        let v = tape.value(cat);
        assert_eq!(v.shape(), &[2, 2, 5, 3]);
        assert_eq!(v.get(&[1, 1, 0, 2]), 5.0);
        assert_eq!(v.get(&[1, 1, 3, 2]), 9.0);
    }
}
