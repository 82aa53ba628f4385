//! Reverse-mode automatic differentiation over a per-pass tape.
//!
//! Every operation on a [`Var`] appends a node holding its forward value and
//! enough saved state to replay the chain rule. [`Tape::backward`] walks the
//! nodes in reverse creation order, which is a valid topological order since
//! a node can only reference nodes created before it. A tape is meant to
//! live for a single forward/backward pass and then be dropped.

use std::cell::{Ref, RefCell};

use super::dense::axis_split;
use super::kernels::{self, ConvGeometry};
use super::{Real, Tensor};
use crate::error::{Error, Result};

enum Op<T> {
    Leaf,
    MatMul { a: usize, b: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    AddRow { x: usize, bias: usize },
    Scale { a: usize, factor: T },
    AddScalar { a: usize },
    Relu { a: usize },
    Exp { a: usize },
    Log { a: usize },
    Sqrt { a: usize },
    Sigmoid { a: usize },
    Acos { a: usize },
    Cos { a: usize },
    Clamp { a: usize, lo: T, hi: T },
    Reshape { a: usize },
    Transpose { a: usize },
    Concat { inputs: Vec<usize>, axis: usize },
    Slice { a: usize, axis: usize, start: usize },
    Sum { a: usize },
    Mean { a: usize },
    SumAxis { a: usize, axis: usize },
    MaxAxis { a: usize, argmax: Vec<usize> },
    Softmax { a: usize, axis: usize },
    LogSoftmax { a: usize, axis: usize },
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        normalized: Vec<T>,
        inv_std: Vec<T>,
    },
    L2Normalize { a: usize, axis: usize, norms: Vec<T> },
    Conv2d {
        x: usize,
        weight: usize,
        bias: Option<usize>,
        geom: ConvGeometry,
        cols: Vec<T>,
    },
    Bilinear { map: usize, locs: usize },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recording of one forward pass.
pub struct Tape<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
}

/// Handle to a value recorded on a [`Tape`].
pub struct Var<'t, T: Real> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Real> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T: Real> Copy for Var<'_, T> {}

impl<T: Real> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.shape())
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable input (parameter or input under test).
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_node(value, Op::Leaf, true)
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_node(value, Op::Leaf, false)
    }

    /// Concatenates `vars` along `axis`; all other dimensions must agree.
    pub fn concat<'t>(&'t self, vars: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        let first = vars
            .first()
            .ok_or_else(|| Error::shape("concat of zero tensors"))?;
        let nodes = self.nodes.borrow();
        let base = nodes[first.id].value.shape().to_vec();
        if axis >= base.len() {
            return Err(Error::shape(format!("concat axis {axis} for shape {base:?}")));
        }
        let mut total = 0;
        for v in vars {
            let s = nodes[v.id].value.shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(Error::shape(format!("concat of {base:?} with {s:?} along axis {axis}")));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for v in vars {
                let t = &nodes[v.id].value;
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let inputs: Vec<usize> = vars.iter().map(|v| v.id).collect();
        let requires_grad = inputs.iter().any(|&i| nodes[i].requires_grad);
        drop(nodes);
        Ok(self.push_node(
            Tensor::from_parts(shape, data),
            Op::Concat { inputs, axis },
            requires_grad,
        ))
    }

    fn push_node(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn push_from(&self, value: Tensor<T>, op: Op<T>, inputs: &[usize]) -> Var<'_, T> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|&i| nodes[i].requires_grad)
        };
        self.push_node(value, op, requires_grad)
    }

    /// Propagates d`loss` back to every node that requires a gradient.
    ///
    /// Gradients accumulate additively when a value feeds several consumers.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(vec![T::one()]);
        for id in (0..=loss.id).rev() {
            if !nodes[id].requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        let grads = grads
            .into_iter()
            .zip(nodes.iter())
            .map(|(g, node)| {
                g.filter(|_| node.requires_grad)
                    .map(|g| Tensor::from_parts(node.value.shape().to_vec(), g))
            })
            .collect();
        Ok(Gradients { grads })
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss with respect to `var`, or `None` when `var` did
    /// not influence the loss through differentiable operations.
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Like [`get`](Self::get) but materializes zeros for unreached values.
    pub fn get_or_zeros(&self, var: Var<'_, T>) -> Tensor<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.shape()))
    }
}

fn unary<T: Real>(t: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    t.map(f)
}

impl<'t, T: Real> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    fn node(&self) -> Ref<'t, Node<T>> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id])
    }

    pub fn value(&self) -> Tensor<T> {
        self.node().value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.node().value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.node().requires_grad
    }

    fn same_tape(&self, other: &Var<'t, T>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::contract("operands recorded on different tapes"))
        }
    }

    fn map_unary(&self, op: Op<T>, f: impl Fn(T) -> T) -> Var<'t, T> {
        let value = unary(&self.node().value, f);
        self.tape.push_from(value, op, &[self.id])
    }

    fn binary_same_shape(
        &self,
        other: Var<'t, T>,
        name: &str,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var<'t, T>> {
        self.same_tape(&other)?;
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            if a.shape() != b.shape() {
                return Err(Error::shape(format!(
                    "{name}: {:?} vs {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::from_parts(a.shape().to_vec(), data)
        };
        Ok(self.tape.push_from(value, op, &[self.id, other.id]))
    }

    /// Matrix product of `self: m×k` with `other: k×n`.
    pub fn matmul(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&other)?;
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
                return Err(Error::shape(format!(
                    "matmul: {:?} × {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            Tensor::from_parts(vec![m, n], kernels::matmul(a.data(), b.data(), m, k, n))
        };
        Ok(self.tape.push_from(
            value,
            Op::MatMul {
                a: self.id,
                b: other.id,
            },
            &[self.id, other.id],
        ))
    }

    pub fn add(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let op = Op::Add {
            a: self.id,
            b: other.id,
        };
        self.binary_same_shape(other, "add", |x, y| x + y, op)
    }

    pub fn sub(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let op = Op::Sub {
            a: self.id,
            b: other.id,
        };
        self.binary_same_shape(other, "sub", |x, y| x - y, op)
    }

    /// Elementwise product.
    pub fn mul(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let op = Op::Mul {
            a: self.id,
            b: other.id,
        };
        self.binary_same_shape(other, "mul", |x, y| x * y, op)
    }

    /// Adds `bias: [n]` to every length-`n` row along the last axis.
    pub fn add_row(&self, bias: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&bias)?;
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (x, b) = (&nodes[self.id].value, &nodes[bias.id].value);
            let n = *x.shape().last().unwrap_or(&0);
            if b.rank() != 1 || b.shape()[0] != n {
                return Err(Error::shape(format!(
                    "add_row: bias {:?} for input {:?}",
                    b.shape(),
                    x.shape()
                )));
            }
            let data = x
                .data()
                .chunks(n)
                .flat_map(|row| row.iter().zip(b.data()).map(|(&v, &c)| v + c))
                .collect();
            Tensor::from_parts(x.shape().to_vec(), data)
        };
        Ok(self.tape.push_from(
            value,
            Op::AddRow {
                x: self.id,
                bias: bias.id,
            },
            &[self.id, bias.id],
        ))
    }

    pub fn scale(&self, factor: T) -> Var<'t, T> {
        self.map_unary(Op::Scale { a: self.id, factor }, |v| v * factor)
    }

    pub fn add_scalar(&self, c: T) -> Var<'t, T> {
        self.map_unary(Op::AddScalar { a: self.id }, |v| v + c)
    }

    pub fn neg(&self) -> Var<'t, T> {
        self.scale(-T::one())
    }

    pub fn relu(&self) -> Var<'t, T> {
        self.map_unary(Op::Relu { a: self.id }, |v| v.max(T::zero()))
    }

    pub fn exp(&self) -> Var<'t, T> {
        self.map_unary(Op::Exp { a: self.id }, T::exp)
    }

    pub fn ln(&self) -> Var<'t, T> {
        self.map_unary(Op::Log { a: self.id }, T::ln)
    }

    pub fn sqrt(&self) -> Var<'t, T> {
        self.map_unary(Op::Sqrt { a: self.id }, T::sqrt)
    }

    pub fn sigmoid(&self) -> Var<'t, T> {
        self.map_unary(Op::Sigmoid { a: self.id }, |v| T::one() / (T::one() + (-v).exp()))
    }

    pub fn acos(&self) -> Var<'t, T> {
        self.map_unary(Op::Acos { a: self.id }, T::acos)
    }

    pub fn cos(&self) -> Var<'t, T> {
        self.map_unary(Op::Cos { a: self.id }, T::cos)
    }

    /// Clamps into `[lo, hi]`; the gradient is passed through only where the
    /// input already lies inside the interval.
    pub fn clamp(&self, lo: T, hi: T) -> Var<'t, T> {
        self.map_unary(Op::Clamp { a: self.id, lo, hi }, |v| v.max(lo).min(hi))
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Var<'t, T>> {
        let value = self.node().value.reshape(shape)?;
        Ok(self.tape.push_from(value, Op::Reshape { a: self.id }, &[self.id]))
    }

    /// Transpose of a matrix.
    pub fn t(&self) -> Result<Var<'t, T>> {
        let value = {
            let node = self.node();
            let v = &node.value;
            if v.rank() != 2 {
                return Err(Error::shape(format!("transpose of {:?}", v.shape())));
            }
            let (r, c) = (v.shape()[0], v.shape()[1]);
            Tensor::from_parts(vec![c, r], kernels::transpose(v.data(), r, c))
        };
        Ok(self.tape.push_from(value, Op::Transpose { a: self.id }, &[self.id]))
    }

    /// `len` entries along `axis` starting at `start`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Var<'t, T>> {
        let value = {
            let node = self.node();
            let v = &node.value;
            if axis >= v.rank() || len == 0 || start + len > v.shape()[axis] {
                return Err(Error::shape(format!(
                    "slice [{start}, {}) on axis {axis} of {:?}",
                    start + len,
                    v.shape()
                )));
            }
            let (outer, n, inner) = axis_split(v.shape(), axis);
            let mut data = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = (o * n + start) * inner;
                data.extend_from_slice(&v.data()[base..base + len * inner]);
            }
            let mut shape = v.shape().to_vec();
            shape[axis] = len;
            Tensor::from_parts(shape, data)
        };
        Ok(self.tape.push_from(
            value,
            Op::Slice {
                a: self.id,
                axis,
                start,
            },
            &[self.id],
        ))
    }

    /// Sum of all entries as a `[1]` tensor.
    pub fn sum(&self) -> Var<'t, T> {
        let value = Tensor::scalar(self.node().value.data().iter().copied().sum());
        self.tape.push_from(value, Op::Sum { a: self.id }, &[self.id])
    }

    pub fn mean(&self) -> Var<'t, T> {
        let value = {
            let node = self.node();
            let n = T::lit(node.value.numel() as f64);
            Tensor::scalar(node.value.data().iter().copied().sum::<T>() / n)
        };
        self.tape.push_from(value, Op::Mean { a: self.id }, &[self.id])
    }

    /// Sums out `axis`. Reducing a rank-1 tensor yields shape `[1]`.
    pub fn sum_axis(&self, axis: usize) -> Result<Var<'t, T>> {
        let value = {
            let node = self.node();
            let v = &node.value;
            check_axis(v, axis)?;
            let (outer, n, inner) = axis_split(v.shape(), axis);
            let mut data = vec![T::zero(); outer * inner];
            for o in 0..outer {
                for a in 0..n {
                    let row = &v.data()[(o * n + a) * inner..(o * n + a + 1) * inner];
                    for (d, &x) in data[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                        *d = *d + x;
                    }
                }
            }
            Tensor::from_parts(reduced_shape(v.shape(), axis), data)
        };
        Ok(self
            .tape
            .push_from(value, Op::SumAxis { a: self.id, axis }, &[self.id]))
    }

    /// Maximum along `axis`. The gradient flows to the first maximal entry
    /// of each lane only.
    pub fn max_axis(&self, axis: usize) -> Result<Var<'t, T>> {
        let (value, argmax) = {
            let node = self.node();
            let v = &node.value;
            check_axis(v, axis)?;
            let (outer, n, inner) = axis_split(v.shape(), axis);
            let mut data = Vec::with_capacity(outer * inner);
            let mut argmax = Vec::with_capacity(outer * inner);
            for o in 0..outer {
                for i in 0..inner {
                    let mut best = (o * n) * inner + i;
                    for a in 1..n {
                        let idx = (o * n + a) * inner + i;
                        if v.data()[idx] > v.data()[best] {
                            best = idx;
                        }
                    }
                    data.push(v.data()[best]);
                    argmax.push(best);
                }
            }
            (Tensor::from_parts(reduced_shape(v.shape(), axis), data), argmax)
        };
        Ok(self
            .tape
            .push_from(value, Op::MaxAxis { a: self.id, argmax }, &[self.id]))
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&self, axis: usize) -> Result<Var<'t, T>> {
        let value = {
            let node = self.node();
            check_axis(&node.value, axis)?;
            softmax_lanes(&node.value, axis, false)
        };
        Ok(self
            .tape
            .push_from(value, Op::Softmax { a: self.id, axis }, &[self.id]))
    }

    /// `log(softmax(x))` along `axis`, via log-sum-exp.
    pub fn log_softmax(&self, axis: usize) -> Result<Var<'t, T>> {
        let value = {
            let node = self.node();
            check_axis(&node.value, axis)?;
            softmax_lanes(&node.value, axis, true)
        };
        Ok(self
            .tape
            .push_from(value, Op::LogSoftmax { a: self.id, axis }, &[self.id]))
    }

    /// Layer normalization over the last axis using the biased variance.
    pub fn layer_norm(&self, gamma: Var<'t, T>, beta: Var<'t, T>, eps: T) -> Result<Var<'t, T>> {
        self.same_tape(&gamma)?;
        self.same_tape(&beta)?;
        if eps <= T::zero() {
            return Err(Error::contract("layer_norm eps must be positive"));
        }
        let (value, normalized, inv_std) = {
            let nodes = self.tape.nodes.borrow();
            let (x, g, b) = (
                &nodes[self.id].value,
                &nodes[gamma.id].value,
                &nodes[beta.id].value,
            );
            let d = *x.shape().last().unwrap();
            if g.shape() != [d] || b.shape() != [d] {
                return Err(Error::shape(format!(
                    "layer_norm: input {:?}, gamma {:?}, beta {:?}",
                    x.shape(),
                    g.shape(),
                    b.shape()
                )));
            }
            let dn = T::lit(d as f64);
            let mut out = Vec::with_capacity(x.numel());
            let mut normalized = Vec::with_capacity(x.numel());
            let mut inv_std = Vec::with_capacity(x.numel() / d);
            for row in x.data().chunks(d) {
                let mean = row.iter().copied().sum::<T>() / dn;
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
                let istd = T::one() / (var + eps).sqrt();
                inv_std.push(istd);
                for (j, &v) in row.iter().enumerate() {
                    let xh = (v - mean) * istd;
                    normalized.push(xh);
                    out.push(xh * g.data()[j] + b.data()[j]);
                }
            }
            (
                Tensor::from_parts(x.shape().to_vec(), out),
                normalized,
                inv_std,
            )
        };
        Ok(self.tape.push_from(
            value,
            Op::LayerNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                normalized,
                inv_std,
            },
            &[self.id, gamma.id, beta.id],
        ))
    }

    /// Divides each lane along `axis` by its Euclidean norm.
    ///
    /// A lane with zero norm is a contract violation.
    pub fn l2_normalize(&self, axis: usize) -> Result<Var<'t, T>> {
        let (value, norms) = {
            let node = self.node();
            let v = &node.value;
            check_axis(v, axis)?;
            let (outer, n, inner) = axis_split(v.shape(), axis);
            let mut data = v.data().to_vec();
            let mut norms = Vec::with_capacity(outer * inner);
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |a: usize| (o * n + a) * inner + i;
                    let norm = (0..n)
                        .map(|a| v.data()[idx(a)] * v.data()[idx(a)])
                        .sum::<T>()
                        .sqrt();
                    // A zero or non-finite norm comes from degenerate values
                    // (a diverged model, say), not from misuse of the API.
                    if !(norm.is_finite() && norm > T::zero()) {
                        return Err(Error::Numeric(format!("l2_normalize of a vector with norm {}", norm.as_f64())));
                    }
                    for a in 0..n {
                        data[idx(a)] = data[idx(a)] / norm;
                    }
                    norms.push(norm);
                }
            }
            (Tensor::from_parts(v.shape().to_vec(), data), norms)
        };
        Ok(self.tape.push_from(
            value,
            Op::L2Normalize {
                a: self.id,
                axis,
                norms,
            },
            &[self.id],
        ))
    }

    /// 2-D convolution of a single `C_in×H×W` image with zero padding.
    ///
    /// `weight` has shape `C_out×C_in×k_h×k_w` and `bias` shape `[C_out]`.
    pub fn conv2d(
        &self,
        weight: Var<'t, T>,
        bias: Option<Var<'t, T>>,
        stride: usize,
        padding: usize,
    ) -> Result<Var<'t, T>> {
        self.same_tape(&weight)?;
        if let Some(b) = &bias {
            self.same_tape(b)?;
        }
        if stride == 0 {
            return Err(Error::contract("conv2d stride must be positive"));
        }
        let (value, geom, cols) = {
            let nodes = self.tape.nodes.borrow();
            let (x, w) = (&nodes[self.id].value, &nodes[weight.id].value);
            if x.rank() != 3 || w.rank() != 4 || w.shape()[1] != x.shape()[0] {
                return Err(Error::shape(format!(
                    "conv2d: input {:?}, weight {:?}",
                    x.shape(),
                    w.shape()
                )));
            }
            let geom = ConvGeometry {
                in_channels: x.shape()[0],
                height: x.shape()[1],
                width: x.shape()[2],
                kernel_h: w.shape()[2],
                kernel_w: w.shape()[3],
                stride,
                padding,
            };
            if geom.height + 2 * padding < geom.kernel_h || geom.width + 2 * padding < geom.kernel_w {
                return Err(Error::shape(format!(
                    "conv2d: kernel {:?} larger than padded input {:?}",
                    w.shape(),
                    x.shape()
                )));
            }
            let c_out = w.shape()[0];
            let positions = geom.positions();
            let cols = kernels::im2col(x.data(), &geom);
            let mut out = vec![T::zero(); c_out * positions];
            if let Some(b) = &bias {
                let b = &nodes[b.id].value;
                if b.shape() != [c_out] {
                    return Err(Error::shape(format!(
                        "conv2d: bias {:?} for {c_out} output channels",
                        b.shape()
                    )));
                }
                for (co, row) in out.chunks_mut(positions).enumerate() {
                    row.fill(b.data()[co]);
                }
            }
            kernels::matmul_acc(w.data(), &cols, &mut out, c_out, geom.patch_len(), positions);
            (
                Tensor::from_parts(vec![c_out, geom.out_height(), geom.out_width()], out),
                geom,
                cols,
            )
        };
        let mut inputs = vec![self.id, weight.id];
        inputs.extend(bias.map(|b| b.id));
        Ok(self.tape.push_from(
            value,
            Op::Conv2d {
                x: self.id,
                weight: weight.id,
                bias: bias.map(|b| b.id),
                geom,
                cols,
            },
            &inputs,
        ))
    }

    /// Bilinearly samples the `C×H×W` map held by `self` at `locs: P×2`
    /// normalized `(u, v)` coordinates, returning `P×C`.
    ///
    /// `u` spans the width and `v` the height; both must lie in `[0, 1]`.
    pub fn bilinear_sample(&self, locs: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&locs)?;
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (map, p) = (&nodes[self.id].value, &nodes[locs.id].value);
            if map.rank() != 3 || p.rank() != 2 || p.shape()[1] != 2 {
                return Err(Error::shape(format!(
                    "bilinear_sample: map {:?}, locations {:?}",
                    map.shape(),
                    p.shape()
                )));
            }
            let (c, h, w) = (map.shape()[0], map.shape()[1], map.shape()[2]);
            let points = p.shape()[0];
            let mut out = Vec::with_capacity(points * c);
            for uv in p.data().chunks(2) {
                let cell = BilinearCell::locate(uv[0], uv[1], h, w)?;
                for ch in 0..c {
                    out.push(cell.interpolate(&map.data()[ch * h * w..(ch + 1) * h * w], w));
                }
            }
            Tensor::from_parts(vec![points, c], out)
        };
        Ok(self.tape.push_from(
            value,
            Op::Bilinear {
                map: self.id,
                locs: locs.id,
            },
            &[self.id, locs.id],
        ))
    }
}

/// The four grid nodes surrounding a sampling location.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BilinearCell<T> {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    pub fx: T,
    pub fy: T,
    /// Pixel units per unit of `u` and `v`: `(W − 1, H − 1)`.
    pub du: T,
    pub dv: T,
}

impl<T: Real> BilinearCell<T> {
    pub fn locate(u: T, v: T, h: usize, w: usize) -> Result<Self> {
        let unit = |c: T| c >= T::zero() && c <= T::one();
        if !unit(u) || !unit(v) {
            return Err(Error::contract(format!(
                "sampling location ({u}, {v}) outside [0, 1]²"
            )));
        }
        let axis = |c: T, n: usize| -> (usize, usize, T, T) {
            if n == 1 {
                return (0, 0, T::zero(), T::zero());
            }
            let scale = T::lit((n - 1) as f64);
            let x = c * scale;
            let i0 = x.floor().as_f64().min((n - 2) as f64) as usize;
            (i0, i0 + 1, x - T::lit(i0 as f64), scale)
        };
        let (x0, x1, fx, du) = axis(u, w);
        let (y0, y1, fy, dv) = axis(v, h);
        Ok(BilinearCell {
            x0,
            y0,
            x1,
            y1,
            fx,
            fy,
            du,
            dv,
        })
    }

    /// Corner `(flat index, weight)` pairs for an `H×W` plane of width `w`.
    pub fn corners(&self, w: usize) -> [(usize, T); 4] {
        let one = T::one();
        [
            (self.y0 * w + self.x0, (one - self.fx) * (one - self.fy)),
            (self.y0 * w + self.x1, self.fx * (one - self.fy)),
            (self.y1 * w + self.x0, (one - self.fx) * self.fy),
            (self.y1 * w + self.x1, self.fx * self.fy),
        ]
    }

    pub fn interpolate(&self, plane: &[T], w: usize) -> T {
        self.corners(w)
            .iter()
            .fold(T::zero(), |acc, &(i, wt)| acc + wt * plane[i])
    }

    /// `(∂value/∂u, ∂value/∂v)` for one plane.
    pub fn coord_grad(&self, plane: &[T], w: usize) -> (T, T) {
        let one = T::one();
        let v00 = plane[self.y0 * w + self.x0];
        let v01 = plane[self.y0 * w + self.x1];
        let v10 = plane[self.y1 * w + self.x0];
        let v11 = plane[self.y1 * w + self.x1];
        let dx = (one - self.fy) * (v01 - v00) + self.fy * (v11 - v10);
        let dy = (one - self.fx) * (v10 - v00) + self.fx * (v11 - v01);
        (dx * self.du, dy * self.dv)
    }
}

fn check_axis<T: Real>(t: &Tensor<T>, axis: usize) -> Result<()> {
    if axis >= t.rank() {
        Err(Error::shape(format!(
            "axis {axis} out of range for shape {:?}",
            t.shape()
        )))
    } else {
        Ok(())
    }
}

fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    s.remove(axis);
    if s.is_empty() {
        s.push(1);
    }
    s
}

fn softmax_lanes<T: Real>(t: &Tensor<T>, axis: usize, log: bool) -> Tensor<T> {
    let (outer, n, inner) = axis_split(t.shape(), axis);
    let x = t.data();
    let mut out = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |a: usize| (o * n + a) * inner + i;
            let max = (0..n).map(|a| x[idx(a)]).fold(T::neg_infinity(), T::max);
            let sum: T = (0..n).map(|a| (x[idx(a)] - max).exp()).sum();
            let lse = max + sum.ln();
            for a in 0..n {
                out[idx(a)] = if log {
                    x[idx(a)] - lse
                } else {
                    (x[idx(a)] - max).exp() / sum
                };
            }
        }
    }
    Tensor::from_parts(t.shape().to_vec(), out)
}

fn accumulate<T: Real>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    id: usize,
    f: impl FnOnce(&mut [T]),
) {
    if !nodes[id].requires_grad {
        return;
    }
    let slot = grads[id].get_or_insert_with(|| vec![T::zero(); nodes[id].value.numel()]);
    f(slot);
}

fn add_into<T: Real>(dst: &mut [T], src: impl IntoIterator<Item = T>) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

fn backprop<T: Real>(nodes: &[Node<T>], id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
    let node = &nodes[id];
    let y = node.value.data();
    let val = |i: usize| &nodes[i].value;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul { a, b } => {
            let (av, bv) = (val(*a), val(*b));
            let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
            accumulate(nodes, grads, *a, |ga| {
                let bt = kernels::transpose(bv.data(), k, n);
                kernels::matmul_acc(g, &bt, ga, m, n, k);
            });
            accumulate(nodes, grads, *b, |gb| {
                let at = kernels::transpose(av.data(), m, k);
                kernels::matmul_acc(&at, g, gb, k, m, n);
            });
        }
        Op::Add { a, b } => {
            accumulate(nodes, grads, *a, |ga| add_into(ga, g.iter().copied()));
            accumulate(nodes, grads, *b, |gb| add_into(gb, g.iter().copied()));
        }
        Op::Sub { a, b } => {
            accumulate(nodes, grads, *a, |ga| add_into(ga, g.iter().copied()));
            accumulate(nodes, grads, *b, |gb| add_into(gb, g.iter().map(|&v| -v)));
        }
        Op::Mul { a, b } => {
            let (av, bv) = (val(*a).data(), val(*b).data());
            accumulate(nodes, grads, *a, |ga| {
                add_into(ga, g.iter().zip(bv).map(|(&g, &b)| g * b))
            });
            accumulate(nodes, grads, *b, |gb| {
                add_into(gb, g.iter().zip(av).map(|(&g, &a)| g * a))
            });
        }
        Op::AddRow { x, bias } => {
            accumulate(nodes, grads, *x, |gx| add_into(gx, g.iter().copied()));
            let n = val(*bias).numel();
            accumulate(nodes, grads, *bias, |gb| {
                for row in g.chunks(n) {
                    add_into(gb, row.iter().copied());
                }
            });
        }
        Op::Scale { a, factor } => {
            accumulate(nodes, grads, *a, |ga| add_into(ga, g.iter().map(|&v| v * *factor)));
        }
        Op::AddScalar { a } | Op::Reshape { a } => {
            accumulate(nodes, grads, *a, |ga| add_into(ga, g.iter().copied()));
        }
        Op::Relu { a } => {
            accumulate(nodes, grads, *a, |ga| {
                add_into(
                    ga,
                    g.iter()
                        .zip(y)
                        .map(|(&g, &y)| if y > T::zero() { g } else { T::zero() }),
                )
            });
        }
        Op::Exp { a } => {
            accumulate(nodes, grads, *a, |ga| add_into(ga, g.iter().zip(y).map(|(&g, &y)| g * y)));
        }
        Op::Log { a } => {
            let x = val(*a).data();
            accumulate(nodes, grads, *a, |ga| add_into(ga, g.iter().zip(x).map(|(&g, &x)| g / x)));
        }
        Op::Sqrt { a } => {
            let half = T::lit(0.5);
            accumulate(nodes, grads, *a, |ga| {
                add_into(ga, g.iter().zip(y).map(|(&g, &y)| g * half / y))
            });
        }
        Op::Sigmoid { a } => {
            accumulate(nodes, grads, *a, |ga| {
                add_into(ga, g.iter().zip(y).map(|(&g, &y)| g * y * (T::one() - y)))
            });
        }
        Op::Acos { a } => {
            let x = val(*a).data();
            accumulate(nodes, grads, *a, |ga| {
                add_into(
                    ga,
                    g.iter()
                        .zip(x)
                        .map(|(&g, &x)| -g / (T::one() - x * x).sqrt()),
                )
            });
        }
        Op::Cos { a } => {
            let x = val(*a).data();
            accumulate(nodes, grads, *a, |ga| {
                add_into(ga, g.iter().zip(x).map(|(&g, &x)| -g * x.sin()))
            });
        }
        Op::Clamp { a, lo, hi } => {
            let x = val(*a).data();
            accumulate(nodes, grads, *a, |ga| {
                add_into(
                    ga,
                    g.iter().zip(x).map(|(&g, &x)| {
                        if x >= *lo && x <= *hi {
                            g
                        } else {
                            T::zero()
                        }
                    }),
                )
            });
        }
        Op::Transpose { a } => {
            let s = node.value.shape();
            accumulate(nodes, grads, *a, |ga| {
                add_into(ga, kernels::transpose(g, s[0], s[1]))
            });
        }
        Op::Concat { inputs, axis } => {
            let (outer, total, inner) = axis_split(node.value.shape(), *axis);
            let mut offset = 0;
            for &input in inputs {
                let len = val(input).shape()[*axis];
                accumulate(nodes, grads, input, |gi| {
                    for o in 0..outer {
                        let src = &g[(o * total + offset) * inner..(o * total + offset + len) * inner];
                        add_into(&mut gi[o * len * inner..(o + 1) * len * inner], src.iter().copied());
                    }
                });
                offset += len;
            }
        }
        Op::Slice { a, axis, start } => {
            let (outer, n, inner) = axis_split(val(*a).shape(), *axis);
            let len = node.value.shape()[*axis];
            accumulate(nodes, grads, *a, |ga| {
                for o in 0..outer {
                    let dst = &mut ga[(o * n + start) * inner..(o * n + start + len) * inner];
                    add_into(dst, g[o * len * inner..(o + 1) * len * inner].iter().copied());
                }
            });
        }
        Op::Sum { a } => {
            accumulate(nodes, grads, *a, |ga| ga.iter_mut().for_each(|v| *v = *v + g[0]));
        }
        Op::Mean { a } => {
            let share = g[0] / T::lit(val(*a).numel() as f64);
            accumulate(nodes, grads, *a, |ga| ga.iter_mut().for_each(|v| *v = *v + share));
        }
        Op::SumAxis { a, axis } => {
            let (outer, n, inner) = axis_split(val(*a).shape(), *axis);
            accumulate(nodes, grads, *a, |ga| {
                for o in 0..outer {
                    for k in 0..n {
                        let dst = &mut ga[(o * n + k) * inner..(o * n + k + 1) * inner];
                        add_into(dst, g[o * inner..(o + 1) * inner].iter().copied());
                    }
                }
            });
        }
        Op::MaxAxis { a, argmax } => {
            accumulate(nodes, grads, *a, |ga| {
                for (&src, &gv) in argmax.iter().zip(g) {
                    ga[src] = ga[src] + gv;
                }
            });
        }
        Op::Softmax { a, axis } | Op::LogSoftmax { a, axis } => {
            let log = matches!(node.op, Op::LogSoftmax { .. });
            let (outer, n, inner) = axis_split(node.value.shape(), *axis);
            accumulate(nodes, grads, *a, |ga| {
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| (o * n + k) * inner + i;
                        if log {
                            let gsum: T = (0..n).map(|k| g[idx(k)]).sum();
                            for k in 0..n {
                                ga[idx(k)] = ga[idx(k)] + g[idx(k)] - y[idx(k)].exp() * gsum;
                            }
                        } else {
                            let dot: T = (0..n).map(|k| g[idx(k)] * y[idx(k)]).sum();
                            for k in 0..n {
                                ga[idx(k)] = ga[idx(k)] + y[idx(k)] * (g[idx(k)] - dot);
                            }
                        }
                    }
                }
            });
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            normalized,
            inv_std,
        } => {
            let gam = val(*gamma).data();
            let d = gam.len();
            let dn = T::lit(d as f64);
            accumulate(nodes, grads, *x, |gx| {
                for (r, istd) in inv_std.iter().enumerate() {
                    let rows = r * d..(r + 1) * d;
                    let xh = &normalized[rows.clone()];
                    let dxh: Vec<T> = g[rows.clone()].iter().zip(gam).map(|(&g, &c)| g * c).collect();
                    let sum_dxh: T = dxh.iter().copied().sum();
                    let sum_dxh_xh: T = dxh.iter().zip(xh).map(|(&a, &b)| a * b).sum();
                    for (j, dst) in gx[rows].iter_mut().enumerate() {
                        *dst = *dst + *istd / dn * (dn * dxh[j] - sum_dxh - xh[j] * sum_dxh_xh);
                    }
                }
            });
            accumulate(nodes, grads, *gamma, |gg| {
                for (grow, xrow) in g.chunks(d).zip(normalized.chunks(d)) {
                    add_into(gg, grow.iter().zip(xrow).map(|(&g, &x)| g * x));
                }
            });
            accumulate(nodes, grads, *beta, |gb| {
                for grow in g.chunks(d) {
                    add_into(gb, grow.iter().copied());
                }
            });
        }
        Op::L2Normalize { a, axis, norms } => {
            let (outer, n, inner) = axis_split(node.value.shape(), *axis);
            accumulate(nodes, grads, *a, |ga| {
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| (o * n + k) * inner + i;
                        let norm = norms[o * inner + i];
                        let dot: T = (0..n).map(|k| g[idx(k)] * y[idx(k)]).sum();
                        for k in 0..n {
                            ga[idx(k)] = ga[idx(k)] + (g[idx(k)] - y[idx(k)] * dot) / norm;
                        }
                    }
                }
            });
        }
        Op::Conv2d {
            x,
            weight,
            bias,
            geom,
            cols,
        } => {
            let w = val(*weight);
            let c_out = w.shape()[0];
            let (patch, positions) = (geom.patch_len(), geom.positions());
            accumulate(nodes, grads, *weight, |gw| {
                let cols_t = kernels::transpose(cols, patch, positions);
                kernels::matmul_acc(g, &cols_t, gw, c_out, positions, patch);
            });
            if let Some(b) = bias {
                accumulate(nodes, grads, *b, |gb| {
                    for (co, row) in g.chunks(positions).enumerate() {
                        gb[co] = gb[co] + row.iter().copied().sum();
                    }
                });
            }
            accumulate(nodes, grads, *x, |gx| {
                let wt = kernels::transpose(w.data(), c_out, patch);
                let dcols = kernels::matmul(&wt, g, patch, c_out, positions);
                kernels::col2im_acc(&dcols, geom, gx);
            });
        }
        Op::Bilinear { map, locs } => {
            let mv = val(*map);
            let (c, h, w) = (mv.shape()[0], mv.shape()[1], mv.shape()[2]);
            let cells: Vec<BilinearCell<T>> = val(*locs)
                .data()
                .chunks(2)
                .map(|uv| BilinearCell::locate(uv[0], uv[1], h, w).expect("validated in forward"))
                .collect();
            accumulate(nodes, grads, *map, |gm| {
                for (p, cell) in cells.iter().enumerate() {
                    for ch in 0..c {
                        let gv = g[p * c + ch];
                        for (idx, wt) in cell.corners(w) {
                            let dst = ch * h * w + idx;
                            gm[dst] = gm[dst] + gv * wt;
                        }
                    }
                }
            });
            accumulate(nodes, grads, *locs, |gl| {
                for (p, cell) in cells.iter().enumerate() {
                    for ch in 0..c {
                        let gv = g[p * c + ch];
                        let (du, dv) = cell.coord_grad(&mv.data()[ch * h * w..(ch + 1) * h * w], w);
                        gl[2 * p] = gl[2 * p] + gv * du;
                        gl[2 * p + 1] = gl[2 * p + 1] + gv * dv;
                    }
                }
            });
        }
    }
}
