//! Define-by-run tape: every op appends a node holding its value and the
//! data its backward rule needs; [`Graph::backward`] walks the tape in
//! reverse.

use std::collections::HashMap;

use crate::conv::{self, ConvDims, TimePadding};
use crate::error::{AutodiffError, Result};
use crate::lstm::{self, LstmCache, LstmDims};
use crate::param::{ParamId, ParamStore};
use crate::scalar::{gemm, Mat, Scalar};
use crate::tensor::{split_axis, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Input,
    Constant,
    Param(ParamId),
    MatMul { x: Var, w: Var },
    Add(Var, Var),
    AddRow { x: Var, bias: Var },
    Mul(Var, Var),
    Scale { x: Var, factor: T },
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Permute { x: Var, perm: Vec<usize> },
    Reshape { x: Var },
    MeanAxis { x: Var, axis: usize },
    Repeat { x: Var, axis: usize },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Conv2d { x: Var, w: Var, bias: Var, dims: ConvDims },
    AvgPoolTime { x: Var, stride: usize },
    Lstm { x: Var, w_ih: Var, w_hh: Var, bias: Var, dims: LstmDims, cache: LstmCache<T> },
    Sum(Var),
    MseConst { x: Var, target: Tensor<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients of a scalar loss with respect to the graph's input leaves.
#[derive(Debug, Clone, Default)]
pub struct Gradients<T> {
    inputs: HashMap<Var, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.inputs.get(&v)
    }
}

/// A recorded computation.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

fn invalid(op: &'static str, msg: impl Into<String>) -> AutodiffError {
    AutodiffError::InvalidArgument { op, msg: msg.into() }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
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

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Leaf whose gradient is reported by [`Graph::backward`].
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Input, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Constant, false)
    }

    /// Snapshot of a trainable parameter; backward accumulates into its store slot.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(store.get(id).value.clone(), Op::Param(id), true)
    }

    /// `x[..., k] @ w[k, n] -> [..., n]`.
    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.is_empty() || ws.len() != 2 || xs[xs.len() - 1] != ws[0] {
            return Err(mismatch("matmul", xs, ws));
        }
        let (k, n) = (ws[0], ws[1]);
        let rows = self.value(x).numel() / k.max(1);
        let mut out_shape = xs.to_vec();
        *out_shape.last_mut().unwrap() = n;
        let mut out = vec![T::zero(); rows * n];
        gemm(
            rows,
            k,
            n,
            T::one(),
            self.value(x).data(),
            Mat::row_major(0, k),
            self.value(w).data(),
            Mat::row_major(0, n),
            T::zero(),
            &mut out,
            Mat::row_major(0, n),
        );
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(Tensor::new(&out_shape, out)?, Op::MatMul { x, w }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |p, q| p + q);
        let rg = self.rg(a) || self.rg(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(&shape, data)?, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |p, q| p * q);
        let rg = self.rg(a) || self.rg(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::new(&shape, data)?, Op::Mul(a, b), rg))
    }

    /// Adds `bias[n]` to every row of `x[..., n]`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xs, bs) = (self.shape(x), self.shape(bias));
        if bs.len() != 1 || xs.last() != Some(&bs[0]) {
            return Err(mismatch("add_row", xs, bs));
        }
        let n = bs[0];
        let b = self.value(bias).data();
        let data: Vec<T> = self
            .value(x)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + b[i % n])
            .collect();
        let shape = xs.to_vec();
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(Tensor::new(&shape, data)?, Op::AddRow { x, bias }, rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let factor = T::from_f64(factor);
        let t = map(self.value(x), |v| v * factor);
        let rg = self.rg(x);
        self.push(t, Op::Scale { x, factor }, rg)
    }

    /// `x @ w + bias` over the last axis.
    pub fn linear(&mut self, x: Var, w: Var, bias: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_row(y, bias)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| invalid("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(invalid("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(mismatch("concat", &base, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis];
                let chunk = len * inner;
                out.extend_from_slice(&self.value(p).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if axis >= xs.len() || start + len > xs[axis] {
            return Err(invalid(
                "slice",
                format!("range {start}..{} on axis {axis} of {xs:?}", start + len),
            ));
        }
        let (outer, n, inner) = split_axis(&xs, axis);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = xs;
        shape[axis] = len;
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Slice { x, axis, start }, rg))
    }

    /// Output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let t = self.value(x).permute(perm)?;
        let rg = self.rg(x);
        Ok(self.push(
            t,
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Reshape { x }, rg))
    }

    /// Mean over `axis`, kept with extent 1.
    ///
    /// Each mean is summed in sorted order, so the result does not depend on
    /// the ordering of the entries along `axis`.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if axis >= xs.len() || xs[axis] == 0 {
            return Err(invalid("mean_axis", format!("axis {axis} of {xs:?}")));
        }
        let (outer, n, inner) = split_axis(&xs, axis);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * inner);
        let mut buf = Vec::with_capacity(n);
        let denom = T::from_f64(n as f64);
        for o in 0..outer {
            for i in 0..inner {
                buf.clear();
                buf.extend((0..n).map(|k| src[(o * n + k) * inner + i]));
                buf.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
                let s = buf.iter().fold(T::zero(), |acc, &v| acc + v);
                out.push(s / denom);
            }
        }
        let mut shape = xs;
        shape[axis] = 1;
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&shape, out)?, Op::MeanAxis { x, axis }, rg))
    }

    /// Tiles an extent-1 `axis` to `times` copies.
    pub fn repeat(&mut self, x: Var, axis: usize, times: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if axis >= xs.len() || xs[axis] != 1 {
            return Err(invalid("repeat", format!("axis {axis} of {xs:?} must have extent 1")));
        }
        let (outer, _, inner) = split_axis(&xs, axis);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * times * inner);
        for o in 0..outer {
            for _ in 0..times {
                out.extend_from_slice(&src[o * inner..(o + 1) * inner]);
            }
        }
        let mut shape = xs;
        shape[axis] = times;
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Repeat { x, axis }, rg))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = map(self.value(x), |v| T::one() / (T::one() + (-v).exp()));
        let rg = self.rg(x);
        self.push(t, Op::Sigmoid(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = map(self.value(x), |v| v.tanh());
        let rg = self.rg(x);
        self.push(t, Op::Tanh(x), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = map(self.value(x), |v| if v > T::zero() { v } else { T::zero() });
        let rg = self.rg(x);
        self.push(t, Op::Relu(x), rg)
    }

    /// Convolution of `x[B, T, F, Cin]` with `w[kt, kf, Cin, Cout]`, "same"
    /// padding along frequency and `padding` along time.
    pub fn conv2d(&mut self, x: Var, w: Var, bias: Var, padding: TimePadding) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(bias));
        if xs.len() != 4 || ws.len() != 4 || xs[3] != ws[2] || bs != [ws[3]] {
            return Err(mismatch("conv2d", xs, ws));
        }
        if ws[1] % 2 == 0 || ws[0] == 0 {
            return Err(invalid("conv2d", format!("kernel {ws:?} needs odd frequency extent")));
        }
        let (pad_before, pad_after) = padding.amounts(ws[0]);
        let dims = ConvDims {
            batch: xs[0],
            time: xs[1],
            freq: xs[2],
            c_in: xs[3],
            c_out: ws[3],
            kt: ws[0],
            kf: ws[1],
            pad_before,
            pad_after,
        };
        if xs[1] + pad_before + pad_after < ws[0] {
            return Err(invalid("conv2d", "time extent shorter than kernel"));
        }
        let out = conv::conv_forward(
            &dims,
            self.value(x).data(),
            self.value(w).data(),
            self.value(bias).data(),
        );
        let shape = [dims.batch, dims.time_out(), dims.freq, dims.c_out];
        let rg = self.rg(x) || self.rg(w) || self.rg(bias);
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::Conv2d { x, w, bias, dims },
            rg,
        ))
    }

    /// Non-overlapping mean over axis 1 in groups of `stride`; a trailing
    /// partial group averages the frames it has.
    pub fn avg_pool_time(&mut self, x: Var, stride: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 || stride == 0 {
            return Err(invalid("avg_pool_time", format!("shape {xs:?}, stride {stride}")));
        }
        let out = conv::pool_forward(&xs, stride, self.value(x).data());
        let mut shape = xs;
        shape[1] = conv::pooled_len(shape[1], stride);
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(&shape, out)?, Op::AvgPoolTime { x, stride }, rg))
    }

    /// Unidirectional LSTM over axis 1 of `x[B, L, In]`; `reverse` runs from
    /// the last step to the first.
    pub fn lstm(&mut self, x: Var, w_ih: Var, w_hh: Var, bias: Var, reverse: bool) -> Result<Var> {
        let (xs, wi, wh, bs) = (
            self.shape(x),
            self.shape(w_ih),
            self.shape(w_hh),
            self.shape(bias),
        );
        if xs.len() != 3 || wi.len() != 2 || wi[0] != xs[2] {
            return Err(mismatch("lstm", xs, wi));
        }
        let g4 = wi[1];
        if g4 % 4 != 0 || wh != [g4 / 4, g4] || bs != [g4] {
            return Err(mismatch("lstm", wi, wh));
        }
        let dims = LstmDims {
            batch: xs[0],
            len: xs[1],
            input: xs[2],
            hidden: g4 / 4,
            reverse,
        };
        let (out, cache) = lstm::forward(
            &dims,
            self.value(x).data(),
            self.value(w_ih).data(),
            self.value(w_hh).data(),
            self.value(bias).data(),
        );
        let shape = [dims.batch, dims.len, dims.hidden];
        let rg = self.rg(x) || self.rg(w_ih) || self.rg(w_hh) || self.rg(bias);
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::Lstm {
                x,
                w_ih,
                w_hh,
                bias,
                dims,
                cache,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().fold(T::zero(), |a, &b| a + b);
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// `mean((x - target)^2)` against a constant target.
    pub fn mse_const(&mut self, x: Var, target: Tensor<T>) -> Result<Var> {
        if self.shape(x) != target.shape() {
            return Err(mismatch("mse_const", self.shape(x), target.shape()));
        }
        let n = T::from_f64(target.numel().max(1) as f64);
        let s = self
            .value(x)
            .data()
            .iter()
            .zip(target.data())
            .fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b));
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(s / n), Op::MseConst { x, target }, rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    /// Reverse-mode sweep from a scalar `loss`. Parameter gradients are
    /// added to `store` (calling twice accumulates twice); input-leaf
    /// gradients are returned.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(AutodiffError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));
        let mut result = Gradients::default();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.backward_node(Var(i), node, g, &mut grads, store, &mut result)?;
        }
        Ok(result)
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backward_node(
        &self,
        id: Var,
        node: &Node<T>,
        g: Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
        store: &mut ParamStore<T>,
        result: &mut Gradients<T>,
    ) -> Result<()> {
        let one = T::one();
        match &node.op {
            Op::Input => {
                result.inputs.insert(id, g);
            }
            Op::Constant => {}
            Op::Param(pid) => store.get_mut(*pid).grad.add_assign(&g),
            Op::MatMul { x, w } => {
                let ws = self.shape(*w);
                let (k, n) = (ws[0], ws[1]);
                let rows = g.numel() / n.max(1);
                if self.rg(*x) {
                    let mut dx = vec![T::zero(); rows * k];
                    gemm(
                        rows,
                        n,
                        k,
                        one,
                        g.data(),
                        Mat::row_major(0, n),
                        self.value(*w).data(),
                        Mat::transposed(0, n),
                        T::zero(),
                        &mut dx,
                        Mat::row_major(0, k),
                    );
                    self.accumulate(grads, *x, Tensor::new(self.shape(*x), dx)?);
                }
                if self.rg(*w) {
                    let mut dw = vec![T::zero(); k * n];
                    gemm(
                        k,
                        rows,
                        n,
                        one,
                        self.value(*x).data(),
                        Mat::transposed(0, k),
                        g.data(),
                        Mat::row_major(0, n),
                        T::zero(),
                        &mut dw,
                        Mat::row_major(0, n),
                    );
                    self.accumulate(grads, *w, Tensor::new(ws, dw)?);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *b, g.clone());
                self.accumulate(grads, *a, g);
            }
            Op::AddRow { x, bias } => {
                if self.rg(*bias) {
                    let n = self.shape(*bias)[0];
                    let mut db = vec![T::zero(); n];
                    for (i, &v) in g.data().iter().enumerate() {
                        db[i % n] = db[i % n] + v;
                    }
                    self.accumulate(grads, *bias, Tensor::new(&[n], db)?);
                }
                self.accumulate(grads, *x, g);
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let d = zip_map(&g, self.value(*b), |p, q| p * q);
                    self.accumulate(grads, *a, Tensor::new(g.shape(), d)?);
                }
                if self.rg(*b) {
                    let d = zip_map(&g, self.value(*a), |p, q| p * q);
                    self.accumulate(grads, *b, Tensor::new(g.shape(), d)?);
                }
            }
            Op::Scale { x, factor } => {
                let f = *factor;
                self.accumulate(grads, *x, map(&g, |v| v * f));
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = split_axis(g.shape(), *axis);
                let mut offset = 0;
                for &p in parts {
                    let len = self.shape(p)[*axis];
                    if self.rg(p) {
                        let mut d = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            d.extend_from_slice(&g.data()[base..base + len * inner]);
                        }
                        self.accumulate(grads, p, Tensor::new(self.shape(p), d)?);
                    }
                    offset += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let xs = self.shape(*x);
                let (outer, n, inner) = split_axis(xs, *axis);
                let len = g.shape()[*axis];
                let mut d = vec![T::zero(); outer * n * inner];
                for o in 0..outer {
                    let dst = (o * n + start) * inner;
                    d[dst..dst + len * inner]
                        .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
                }
                self.accumulate(grads, *x, Tensor::new(xs, d)?);
            }
            Op::Permute { x, perm } => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                self.accumulate(grads, *x, g.permute(&inv)?);
            }
            Op::Reshape { x } => {
                let d = g.reshape(self.shape(*x))?;
                self.accumulate(grads, *x, d);
            }
            Op::MeanAxis { x, axis } => {
                let xs = self.shape(*x);
                let (outer, n, inner) = split_axis(xs, *axis);
                let scale = one / T::from_f64(n as f64);
                let mut d = Vec::with_capacity(outer * n * inner);
                for o in 0..outer {
                    for _ in 0..n {
                        d.extend(g.data()[o * inner..(o + 1) * inner].iter().map(|&v| v * scale));
                    }
                }
                self.accumulate(grads, *x, Tensor::new(xs, d)?);
            }
            Op::Repeat { x, axis } => {
                let xs = self.shape(*x);
                let (outer, times, inner) = split_axis(g.shape(), *axis);
                let mut d = vec![T::zero(); outer * inner];
                for o in 0..outer {
                    for t in 0..times {
                        let src = &g.data()[(o * times + t) * inner..(o * times + t + 1) * inner];
                        for (acc, &v) in d[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                            *acc = *acc + v;
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::new(xs, d)?);
            }
            Op::Sigmoid(x) => {
                let d = zip_map(&g, &node.value, |gv, y| gv * y * (one - y));
                self.accumulate(grads, *x, Tensor::new(g.shape(), d)?);
            }
            Op::Tanh(x) => {
                let d = zip_map(&g, &node.value, |gv, y| gv * (one - y * y));
                self.accumulate(grads, *x, Tensor::new(g.shape(), d)?);
            }
            Op::Relu(x) => {
                let d = zip_map(&g, self.value(*x), |gv, v| if v > T::zero() { gv } else { T::zero() });
                self.accumulate(grads, *x, Tensor::new(g.shape(), d)?);
            }
            Op::Conv2d { x, w, bias, dims } => {
                let cg = conv::conv_backward(
                    dims,
                    self.value(*x).data(),
                    self.value(*w).data(),
                    g.data(),
                    self.rg(*x),
                );
                if let Some(dx) = cg.dx {
                    self.accumulate(grads, *x, Tensor::new(self.shape(*x), dx)?);
                }
                self.accumulate(grads, *w, Tensor::new(self.shape(*w), cg.dw)?);
                self.accumulate(grads, *bias, Tensor::new(self.shape(*bias), cg.dbias)?);
            }
            Op::AvgPoolTime { x, stride } => {
                let xs = self.shape(*x);
                let d = conv::pool_backward(xs, *stride, g.data());
                self.accumulate(grads, *x, Tensor::new(xs, d)?);
            }
            Op::Lstm {
                x,
                w_ih,
                w_hh,
                bias,
                dims,
                cache,
            } => {
                let lg = lstm::backward(
                    dims,
                    self.value(*x).data(),
                    self.value(*w_ih).data(),
                    self.value(*w_hh).data(),
                    node.value.data(),
                    cache,
                    g.data(),
                    self.rg(*x),
                );
                if let Some(dx) = lg.dx {
                    self.accumulate(grads, *x, Tensor::new(self.shape(*x), dx)?);
                }
                self.accumulate(grads, *w_ih, Tensor::new(self.shape(*w_ih), lg.dw_ih)?);
                self.accumulate(grads, *w_hh, Tensor::new(self.shape(*w_hh), lg.dw_hh)?);
                self.accumulate(grads, *bias, Tensor::new(self.shape(*bias), lg.dbias)?);
            }
            Op::Sum(x) => {
                let gv = g.item();
                self.accumulate(grads, *x, Tensor::full(self.shape(*x), gv));
            }
            Op::MseConst { x, target } => {
                let scale = g.item() * T::from_f64(2.0 / target.numel().max(1) as f64);
                let d = zip_map(self.value(*x), target, |a, b| (a - b) * scale);
                self.accumulate(grads, *x, Tensor::new(target.shape(), d)?);
            }
        }
        Ok(())
    }
}

fn map<T: Scalar>(t: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    Tensor::new(t.shape(), t.data().iter().map(|&v| f(v)).collect()).expect("same length")
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Vec<T> {
    a.data().iter().zip(b.data()).map(|(&p, &q)| f(p, q)).collect()
}
