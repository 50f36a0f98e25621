//! Reverse-mode differentiation tape.
//!
//! Every operation appends a node holding its forward value and enough
//! saved state to compute vector-Jacobian products. Nodes are only ever
//! appended, so index order is a topological order and `backward` is a single
//! reverse sweep.

use super::conv::ConvRecord;
use super::linalg::gemm;
use super::norm::BnRecord;
use super::{Result, Tensor, TensorError};
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBroadcast(Var, Var),
    MulBroadcast(Var, Var),
    Affine(Var, T),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    SliceLast { input: Var, start: usize },
    Select { input: Var, axis: usize, index: usize },
    Stack { inputs: Vec<Var>, axis: usize },
    Conv2d(Box<ConvRecord<T>>),
    BatchNorm(Box<BnRecord<T>>),
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
}

/// Linear record of a computation.
pub struct Tape<T> {
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar loss with respect to every gradient-requiring leaf.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Vec<T>>, len: usize, f: impl FnOnce(&mut [T])) {
    let buf = slot.get_or_insert_with(|| vec![T::zero(); len]);
    f(buf);
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Copies `src` (shape `in_shape`) into `dst` laid out by `perm`, optionally
/// accumulating. With `inverse`, scatters from the permuted layout back.
fn permute_copy<T: Scalar>(
    src: &[T],
    in_shape: &[usize],
    perm: &[usize],
    dst: &mut [T],
    inverse: bool,
) {
    let rank = in_shape.len();
    let in_strides = strides(in_shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    // stride in the input buffer for a unit step along each output axis
    let step: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut idx = vec![0usize; rank];
    let mut in_off = 0usize;
    for out_off in 0..src.len() {
        if inverse {
            dst[in_off] += src[out_off];
        } else {
            dst[out_off] = src[in_off];
        }
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            in_off += step[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            in_off -= step[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, op, rg)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// A differentiable leaf.
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
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

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::dim("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, false);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.derived(value, Op::MatMul(a, b), &[a, b]))
    }

    fn zip_same(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(TensorError::dim(name, va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.derived(value, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("hadamard", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn check_trailing(&self, name: &'static str, a: Var, b: Var) -> Result<usize> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(TensorError::dim(name, sa, sb));
        }
        Ok(sb.iter().product())
    }

    fn zip_broadcast(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var> {
        let inner = self.check_trailing(name, a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va
            .data()
            .chunks_exact(inner)
            .flat_map(|row| row.iter().zip(vb.data()).map(|(&x, &y)| f(x, y)))
            .collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.derived(value, op, &[a, b]))
    }

    /// `a + b` where `b`'s shape equals the trailing dimensions of `a`.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_broadcast("add_broadcast", a, b, |x, y| x + y, Op::AddBroadcast(a, b))
    }

    /// `a ∘ b` where `b`'s shape equals the trailing dimensions of `a`.
    pub fn mul_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_broadcast("mul_broadcast", a, b, |x, y| x * y, Op::MulBroadcast(a, b))
    }

    /// `scale·x + shift` with constant coefficients.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Var {
        let value = self.value(x).map(|v| scale * v + shift);
        self.derived(value, Op::Affine(x, scale), &[x])
    }

    pub fn scale(&mut self, x: Var, scale: T) -> Var {
        self.affine(x, scale, T::zero())
    }

    /// `1 - x`
    pub fn one_minus(&mut self, x: Var) -> Var {
        self.affine(x, -T::one(), T::one())
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.derived(value, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| {
            if v >= T::zero() {
                T::one() / (T::one() + (-v).exp())
            } else {
                let e = v.exp();
                e / (T::one() + e)
            }
        });
        self.derived(value, Op::Sigmoid(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.tanh());
        self.derived(value, Op::Tanh(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        self.derived(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s: T = v.data().iter().copied().sum();
        let m = s / T::from_usize(v.numel()).unwrap();
        self.derived(Tensor::scalar(m), Op::Mean(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.derived(value, Op::Reshape(x), &[x]))
    }

    /// Axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let in_shape = self.shape(x).to_vec();
        let mut seen = vec![false; in_shape.len()];
        if perm.len() != in_shape.len() || perm.iter().any(|&p| p >= seen.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(TensorError::dim("permute", &in_shape, perm));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
        let mut out = vec![T::zero(); self.value(x).numel()];
        permute_copy(self.value(x).data(), &in_shape, perm, &mut out, false);
        let value = Tensor::new(out_shape, out)?;
        Ok(self.derived(value, Op::Permute(x, perm.to_vec()), &[x]))
    }

    /// Columns `start..start+len` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().unwrap();
        if len == 0 || start + len > d {
            return Err(TensorError::dim("slice_last", &shape, &[start, len]));
        }
        let data = self
            .value(x)
            .data()
            .chunks_exact(d)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = len;
        let value = Tensor::new(out_shape, data)?;
        Ok(self.derived(value, Op::SliceLast { input: x, start }, &[x]))
    }

    /// Drops `axis` by picking one index along it.
    pub fn select(&mut self, x: Var, axis: usize, index: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || index >= shape[axis] || shape.len() < 2 {
            return Err(TensorError::dim("select", &shape, &[axis, index]));
        }
        let (outer, d, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            let base = (o * d + index) * inner;
            data.extend_from_slice(&src[base..base + inner]);
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let value = Tensor::new(out_shape, data)?;
        Ok(self.derived(value, Op::Select { input: x, axis, index }, &[x]))
    }

    /// Stacks equally shaped values along a new `axis`.
    pub fn stack(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| TensorError::invalid("stack", "no inputs"))?;
        let shape = self.shape(*first).to_vec();
        if axis > shape.len() {
            return Err(TensorError::dim("stack", &shape, &[axis]));
        }
        for &x in xs {
            if self.shape(x) != shape.as_slice() {
                return Err(TensorError::dim("stack", &shape, self.shape(x)));
            }
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis..].iter().product();
        let mut data = Vec::with_capacity(outer * inner * xs.len());
        for o in 0..outer {
            for &x in xs {
                data.extend_from_slice(&self.value(x).data()[o * inner..(o + 1) * inner]);
            }
        }
        let mut out_shape = shape;
        out_shape.insert(axis, xs.len());
        let value = Tensor::new(out_shape, data)?;
        Ok(self.derived(
            value,
            Op::Stack {
                inputs: xs.to_vec(),
                axis,
            },
            xs,
        ))
    }

    /// Affine map along the last axis: `x·W + b` for `x: [..., n_in]`,
    /// `W: [n_in, n_out]`, `b: [n_out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let n_in = *xs.last().unwrap();
        if ws.len() != 2 || ws[0] != n_in {
            return Err(TensorError::dim("dense", &xs, &ws));
        }
        if self.shape(b) != [ws[1]] {
            return Err(TensorError::dim("dense", &ws, self.shape(b)));
        }
        let rows = self.value(x).numel() / n_in;
        let flat = if xs.len() == 2 { x } else { self.reshape(x, &[rows, n_in])? };
        let y = self.matmul(flat, w)?;
        let y = self.add_broadcast(y, b)?;
        if xs.len() == 2 {
            return Ok(y);
        }
        let mut out_shape = xs;
        *out_shape.last_mut().unwrap() = ws[1];
        self.reshape(y, &out_shape)
    }

    /// Mean of squared differences.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let d = self.sub(pred, target)?;
        let sq = self.mul(d, d)?;
        Ok(self.mean(sq))
    }

    /// Back-propagates from a scalar `loss` to all gradient-requiring leaves.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let ls = self.shape(loss);
        if ls.iter().product::<usize>() != 1 {
            return Err(TensorError::NonScalarLoss(ls.to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        let mut leaf_grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => {
                    if matches!(node.op, Op::Leaf) {
                        leaf_grads[i] = Some(Tensor::zeros(node.value.shape()));
                    }
                    continue;
                }
            };
            self.backprop_node(node, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                leaf_grads[i] = Some(Tensor::new(node.value.shape().to_vec(), g)?);
            }
        }
        for (i, node) in self.nodes.iter().enumerate().skip(loss.0 + 1) {
            if node.requires_grad && matches!(node.op, Op::Leaf) {
                leaf_grads[i] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads: leaf_grads })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let len = |v: Var| self.nodes[v.0].value.numel();
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.needs(*a) {
                    let bv = val(*b);
                    accumulate(&mut grads[a.0], m * k, |ga| gemm(m, n, k, g, false, bv, true, ga, true));
                }
                if self.needs(*b) {
                    let av = val(*a);
                    accumulate(&mut grads[b.0], k * n, |gb| gemm(k, m, n, av, true, g, false, gb, true));
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.needs(v) {
                        accumulate(&mut grads[v.0], g.len(), |gv| {
                            gv.iter_mut().zip(g).for_each(|(d, &s)| *d += s)
                        });
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    accumulate(&mut grads[a.0], g.len(), |gv| {
                        gv.iter_mut().zip(g).for_each(|(d, &s)| *d += s)
                    });
                }
                if self.needs(*b) {
                    accumulate(&mut grads[b.0], g.len(), |gv| {
                        gv.iter_mut().zip(g).for_each(|(d, &s)| *d -= s)
                    });
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let bv = val(*b);
                    accumulate(&mut grads[a.0], g.len(), |gv| {
                        for ((d, &s), &y) in gv.iter_mut().zip(g).zip(bv) {
                            *d += s * y;
                        }
                    });
                }
                if self.needs(*b) {
                    let av = val(*a);
                    accumulate(&mut grads[b.0], g.len(), |gv| {
                        for ((d, &s), &x) in gv.iter_mut().zip(g).zip(av) {
                            *d += s * x;
                        }
                    });
                }
            }
            Op::AddBroadcast(a, b) => {
                if self.needs(*a) {
                    accumulate(&mut grads[a.0], g.len(), |gv| {
                        gv.iter_mut().zip(g).for_each(|(d, &s)| *d += s)
                    });
                }
                if self.needs(*b) {
                    let inner = len(*b);
                    accumulate(&mut grads[b.0], inner, |gb| {
                        for row in g.chunks_exact(inner) {
                            gb.iter_mut().zip(row).for_each(|(d, &s)| *d += s);
                        }
                    });
                }
            }
            Op::MulBroadcast(a, b) => {
                let inner = len(*b);
                if self.needs(*a) {
                    let bv = val(*b);
                    accumulate(&mut grads[a.0], g.len(), |ga| {
                        for (grow, gout) in ga.chunks_exact_mut(inner).zip(g.chunks_exact(inner)) {
                            for ((d, &s), &y) in grow.iter_mut().zip(gout).zip(bv) {
                                *d += s * y;
                            }
                        }
                    });
                }
                if self.needs(*b) {
                    let av = val(*a);
                    accumulate(&mut grads[b.0], inner, |gb| {
                        for (arow, gout) in av.chunks_exact(inner).zip(g.chunks_exact(inner)) {
                            for ((d, &s), &x) in gb.iter_mut().zip(gout).zip(arow) {
                                *d += s * x;
                            }
                        }
                    });
                }
            }
            Op::Affine(x, scale) => {
                let scale = *scale;
                accumulate(&mut grads[x.0], g.len(), |gx| {
                    gx.iter_mut().zip(g).for_each(|(d, &s)| *d += s * scale)
                });
            }
            Op::Relu(x) => {
                let xv = val(*x);
                accumulate(&mut grads[x.0], g.len(), |gx| {
                    for ((d, &s), &v) in gx.iter_mut().zip(g).zip(xv) {
                        if v > T::zero() {
                            *d += s;
                        }
                    }
                });
            }
            Op::Sigmoid(x) => {
                let yv = node.value.data();
                accumulate(&mut grads[x.0], g.len(), |gx| {
                    for ((d, &s), &y) in gx.iter_mut().zip(g).zip(yv) {
                        *d += s * y * (T::one() - y);
                    }
                });
            }
            Op::Tanh(x) => {
                let yv = node.value.data();
                accumulate(&mut grads[x.0], g.len(), |gx| {
                    for ((d, &s), &y) in gx.iter_mut().zip(g).zip(yv) {
                        *d += s * (T::one() - y * y);
                    }
                });
            }
            Op::Sum(x) => {
                let s = g[0];
                accumulate(&mut grads[x.0], len(*x), |gx| gx.iter_mut().for_each(|d| *d += s));
            }
            Op::Mean(x) => {
                let n = len(*x);
                let s = g[0] / T::from_usize(n).unwrap();
                accumulate(&mut grads[x.0], n, |gx| gx.iter_mut().for_each(|d| *d += s));
            }
            Op::Reshape(x) => {
                accumulate(&mut grads[x.0], g.len(), |gx| {
                    gx.iter_mut().zip(g).for_each(|(d, &s)| *d += s)
                });
            }
            Op::Permute(x, perm) => {
                let in_shape = self.shape(*x).to_vec();
                accumulate(&mut grads[x.0], g.len(), |gx| {
                    permute_copy(g, &in_shape, perm, gx, true)
                });
            }
            Op::SliceLast { input, start } => {
                let d = *self.shape(*input).last().unwrap();
                let w = *node.value.shape().last().unwrap();
                let start = *start;
                accumulate(&mut grads[input.0], len(*input), |gx| {
                    for (row, grow) in gx.chunks_exact_mut(d).zip(g.chunks_exact(w)) {
                        row[start..start + w]
                            .iter_mut()
                            .zip(grow)
                            .for_each(|(dst, &s)| *dst += s);
                    }
                });
            }
            Op::Select { input, axis, index } => {
                let (outer, d, inner) = split_axis(self.shape(*input), *axis);
                let index = *index;
                accumulate(&mut grads[input.0], outer * d * inner, |gx| {
                    for o in 0..outer {
                        let base = (o * d + index) * inner;
                        gx[base..base + inner]
                            .iter_mut()
                            .zip(&g[o * inner..(o + 1) * inner])
                            .for_each(|(dst, &s)| *dst += s);
                    }
                });
            }
            Op::Stack { inputs, axis } => {
                let shape = self.shape(inputs[0]);
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[*axis..].iter().product();
                let k = inputs.len();
                for (t, &x) in inputs.iter().enumerate() {
                    if !self.needs(x) {
                        continue;
                    }
                    accumulate(&mut grads[x.0], outer * inner, |gx| {
                        for o in 0..outer {
                            let src = (o * k + t) * inner;
                            gx[o * inner..(o + 1) * inner]
                                .iter_mut()
                                .zip(&g[src..src + inner])
                                .for_each(|(dst, &s)| *dst += s);
                        }
                    });
                }
            }
            Op::Conv2d(rec) => rec.backward(self, g, grads),
            Op::BatchNorm(rec) => rec.backward(self, g, grads),
        }
    }
}

pub(crate) fn accumulate_into<T: Scalar>(
    slot: &mut Option<Vec<T>>,
    len: usize,
    f: impl FnOnce(&mut [T]),
) {
    accumulate(slot, len, f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, data).unwrap()
    }

    #[test]
    fn matmul_hand_case() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.constant(t(&[2, 1], &[0.0, 1.0]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[2.0, 4.0]);
    }

    #[test]
    fn matmul_identity_is_noop() {
        let mut tape = Tape::new();
        let i2 = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let m = tape.constant(t(&[2, 2], &[0.3, -1.2, 7.0, 2.5]));
        let c = tape.matmul(i2, m).unwrap();
        assert_eq!(tape.value(c), tape.value(m));
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::<f64>::zeros(&[2, 3]));
        let b = tape.constant(Tensor::<f64>::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        assert_eq!(err, TensorError::dim("matmul", &[2, 3], &[2, 3]));
        assert!(err.to_string().contains("[2, 3] vs [2, 3]"));
    }

    #[test]
    fn elementwise_activations() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[3], &[-1.0, 0.0, 2.0]));
        let r = tape.relu(x);
        assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);
        let z = tape.constant(t(&[1], &[0.0]));
        let s = tape.sigmoid(z);
        let th = tape.tanh(z);
        assert_eq!(tape.value(s).data(), &[0.5]);
        assert_eq!(tape.value(th).data(), &[0.0]);
    }

    #[test]
    fn hadamard_cases() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2], &[2.0, 3.0]));
        let b = tape.constant(t(&[2], &[4.0, 5.0]));
        let ones = tape.constant(Tensor::ones(&[2]));
        let zeros = tape.constant(Tensor::zeros(&[2]));
        let ab = tape.mul(a, b).unwrap();
        let a1 = tape.mul(a, ones).unwrap();
        let a0 = tape.mul(a, zeros).unwrap();
        assert_eq!(tape.value(ab).data(), &[8.0, 15.0]);
        assert_eq!(tape.value(a1).data(), tape.value(a).data());
        assert_eq!(tape.value(a0).data(), &[0.0, 0.0]);
        let c = tape.constant(Tensor::zeros(&[3]));
        assert!(matches!(tape.mul(a, c), Err(TensorError::Dimension { .. })));
    }

    #[test]
    fn dense_cases() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 2], &[1.0, 1.0]));
        let w = tape.constant(t(&[2, 1], &[1.0, 1.0]));
        let b = tape.constant(t(&[1], &[0.5]));
        let y = tape.dense(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[2.5]);

        let x3 = tape.constant(t(&[2, 1, 2], &[0.5, -1.0, 3.0, 4.0]));
        let eye = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let zb = tape.constant(Tensor::zeros(&[2]));
        let y3 = tape.dense(x3, eye, zb).unwrap();
        assert_eq!(tape.value(y3), tape.value(x3));

        let bad = tape.constant(Tensor::zeros(&[3, 1]));
        assert!(matches!(tape.dense(x, bad, b), Err(TensorError::Dimension { .. })));
    }

    #[test]
    fn sum_gives_all_ones_gradient() {
        let mut tape = Tape::new();
        let x = tape.variable(t(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, 9.0]));
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn square_at_three_has_gradient_six() {
        let mut tape = Tape::new();
        let x = tape.variable(t(&[1], &[3.0]));
        let sq = tape.mul(x, x).unwrap();
        let l = tape.sum(sq);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn fan_out_accumulates_exactly_twice() {
        let f = |tape: &mut Tape<f64>, x: Var| {
            let s = tape.sigmoid(x);
            let p = tape.mul(s, x).unwrap();
            tape.sum(p)
        };
        let data = [0.3, -1.7, 2.2];
        let mut tape = Tape::new();
        let x = tape.variable(t(&[3], &data));
        let once = f(&mut tape, x);
        let g1 = tape.backward(once).unwrap().get(x).unwrap().clone();
        let mut tape = Tape::new();
        let x = tape.variable(t(&[3], &data));
        let a = f(&mut tape, x);
        let b = f(&mut tape, x);
        let twice = tape.add(a, b).unwrap();
        let g2 = tape.backward(twice).unwrap().get(x).unwrap().clone();
        for (a, b) in g1.data().iter().zip(g2.data()) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::<f64>::ones(&[2]));
        assert_eq!(tape.backward(x).unwrap_err(), TensorError::NonScalarLoss(vec![2]));
    }

    #[test]
    fn unreachable_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::<f64>::ones(&[2]));
        let y = tape.variable(Tensor::<f64>::ones(&[3]));
        let l = tape.sum(x);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(y).unwrap().data(), &[0.0; 3]);
    }

    #[test]
    fn permute_and_its_gradient() {
        let mut tape = Tape::new();
        let data: Vec<f64> = (0..24).map(|i| i as f64).collect();
        let x = tape.variable(t(&[2, 3, 4], &data));
        let p = tape.permute(x, &[2, 0, 1]).unwrap();
        assert_eq!(tape.shape(p), &[4, 2, 3]);
        let xv = tape.value(x).clone();
        let pv = tape.value(p).clone();
        for i in 0..2 {
            for j in 0..3 {
                for k in 0..4 {
                    assert_eq!(pv.at(&[k, i, j]), xv.at(&[i, j, k]));
                }
            }
        }
        let w = tape.constant(t(&[4, 2, 3], &(0..24).map(|i| (i * 7 % 5) as f64).collect::<Vec<_>>()));
        let prod = tape.mul(p, w).unwrap();
        let l = tape.sum(prod);
        let g = tape.backward(l).unwrap();
        let gx = g.get(x).unwrap();
        let wv = tape.value(w);
        for i in 0..2 {
            for j in 0..3 {
                for k in 0..4 {
                    assert_eq!(gx.at(&[i, j, k]), wv.at(&[k, i, j]));
                }
            }
        }
    }

    #[test]
    fn select_stack_roundtrip() {
        let mut tape = Tape::new();
        let data: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let x = tape.variable(t(&[2, 3, 2], &data));
        let parts: Vec<Var> = (0..3).map(|i| tape.select(x, 1, i).unwrap()).collect();
        let y = tape.stack(&parts, 1).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
        let l = tape.sum(y);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0; 12]);
    }

    #[test]
    fn slice_last_columns() {
        let mut tape = Tape::new();
        let x = tape.variable(t(&[2, 4], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]));
        let s = tape.slice_last(x, 1, 2).unwrap();
        assert_eq!(tape.value(s).data(), &[1.0, 2.0, 5.0, 6.0]);
        let l = tape.sum(s);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn broadcast_ops() {
        let mut tape = Tape::new();
        let x = tape.variable(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let w = tape.variable(t(&[2], &[10.0, 100.0]));
        let y = tape.mul_broadcast(x, w).unwrap();
        assert_eq!(tape.value(y).data(), &[10.0, 200.0, 30.0, 400.0]);
        let z = tape.add_broadcast(y, w).unwrap();
        assert_eq!(tape.value(z).data(), &[20.0, 300.0, 40.0, 500.0]);
        let l = tape.sum(z);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[1.0 + 3.0 + 2.0, 2.0 + 4.0 + 2.0]);
        assert_eq!(g.get(x).unwrap().data(), &[10.0, 100.0, 10.0, 100.0]);
    }

    #[test]
    fn mse_of_hand_case() {
        let mut tape = Tape::new();
        let p = tape.variable(t(&[2], &[0.0, 0.0]));
        let y = tape.constant(t(&[2], &[3.0, 4.0]));
        let l = tape.mse_loss(p, y).unwrap();
        assert_eq!(tape.value(l).data(), &[12.5]);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(p).unwrap().data(), &[-3.0, -4.0]);
    }
}
