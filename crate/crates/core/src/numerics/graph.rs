//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] is an append-only arena: every op evaluates eagerly, stores its
//! output value and whatever the backward rule needs, and returns a [`Var`]
//! handle. Node order is a valid topological order, so [`Graph::backward`]
//! simply walks the arena in reverse.
//!
//! Parameters live outside the graph in a [`ParamStore`]; [`Graph::param`]
//! copies a parameter in as a leaf and [`Graph::backward_into`] adds its
//! gradient back into a [`GradBuffer`]. Gradients accumulate across calls until
//! the buffer is explicitly zeroed, so calling `backward_into` twice on the same
//! graph doubles the stored gradient.

use super::params::{GradBuffer, ParamId, ParamStore};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Floor applied to the input of [`Graph::log`].
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    Transpose(Var),
    Reshape(Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<T>, rstd: Vec<T> },
    MaxPool { input: Var, argmax: Vec<usize> },
    MaskedFill { input: Var, mask: Vec<bool> },
    Clamp { input: Var, lo: T, hi: T },
    GatherRows { input: Var, idx: Vec<usize> },
    Sum(Var),
    Mean(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Splits `shape` around `axis` into (outer, axis length, inner) extents.
fn around(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}

#[derive(Default)]
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
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

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input; no gradient is tracked.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf whose gradient can be read back from [`Gradients`].
    pub fn leaf(&mut self, t: Tensor<T>, requires_grad: bool) -> Var {
        self.push(t, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", format!("{:?} x {:?}", sa, sb)));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = Tensor::zeros(&[m, n]);
        T::gemm(
            m,
            k,
            n,
            T::one(),
            self.value(a).data(),
            k as isize,
            1,
            self.value(b).data(),
            n as isize,
            1,
            T::zero(),
            out.data_mut(),
            n as isize,
            1,
        );
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Var {
        let va = self.value(a);
        let data = va.data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(va.shape().to_vec(), data).expect("same shape");
        let ng = self.ng(a) || self.ng(b);
        self.push(out, op, ng)
    }

    fn map(&mut self, a: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let va = self.value(a);
        let data = va.data().iter().map(|&x| f(x)).collect();
        let out = Tensor::new(va.shape().to_vec(), data).expect("same shape");
        let ng = self.ng(a);
        self.push(out, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("div", a, b)?;
        Ok(self.zip_with(a, b, Op::Div(a, b), |x, y| x / y))
    }

    /// Adds a length-`d` row vector to every row of `a` (last axis `d`).
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (_, cols) = self.value(a).rows_cols();
        if self.shape(row) != [cols] {
            return Err(shape_err("add_row", format!("{:?} + {:?}", self.shape(a), self.shape(row))));
        }
        let r = self.value(row).data();
        let va = self.value(a);
        let data = va.data().iter().enumerate().map(|(i, &x)| x + r[i % cols]).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let ng = self.ng(a) || self.ng(row);
        Ok(self.push(out, Op::AddRow(a, row), ng))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let c = T::of(c);
        self.map(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let c = T::of(c);
        self.map(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs.first().ok_or_else(|| shape_err("concat", "no inputs".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(shape_err("concat", format!("axis {} for rank {}", axis, base.len())));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(shape_err("concat", format!("{:?} vs {:?} on axis {}", s, base, axis)));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = around(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let len = self.shape(v)[axis] * inner;
                data.extend_from_slice(&self.value(v).data()[o * len..(o + 1) * len]);
            }
        }
        let ng = inputs.iter().any(|&v| self.ng(v));
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::Concat { inputs: inputs.to_vec(), axis }, ng))
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() || start > end || end > s[axis] {
            return Err(shape_err("slice", format!("{:?} axis {} range {}..{}", s, axis, start, end)));
        }
        let (outer, len, inner) = around(&s, axis);
        let width = (end - start) * inner;
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * width);
        for o in 0..outer {
            let off = o * len * inner + start * inner;
            data.extend_from_slice(&src[off..off + width]);
        }
        let mut shape = s;
        shape[axis] = end - start;
        let out = Tensor::new(shape, data)?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::Slice { input: a, axis, start }, ng))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(shape_err("transpose", format!("rank-2 input required, got {:?}", s)));
        }
        let (r, c) = (s[0], s[1]);
        let src = self.value(a).data();
        let mut data = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        let out = Tensor::new(vec![c, r], data)?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::Transpose(a), ng))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(a).len() {
            return Err(shape_err("reshape", format!("{:?} -> {:?}", self.shape(a), shape)));
        }
        let out = self.value(a).clone().reshaped(shape.to_vec());
        let ng = self.ng(a);
        Ok(self.push(out, Op::Reshape(a), ng))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Op::Relu(a), |x| if x > T::zero() { x } else { T::zero() })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a), |x| x.tanh())
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, Op::Exp(a), |x| x.exp())
    }

    /// Natural log with the input clamped at [`LOG_FLOOR`].
    pub fn log(&mut self, a: Var) -> Var {
        let floor = T::of(LOG_FLOOR);
        self.map(a, Op::Log(a), |x| x.max(floor).ln())
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    /// `log(sigmoid(x))`, evaluated without overflow for large |x|.
    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::LogSigmoid(a), |x| -softplus(-x))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let (lo, hi) = (T::of(lo), T::of(hi));
        self.map(a, Op::Clamp { input: a, lo, hi }, |x| x.max(lo).min(hi))
    }

    fn rowwise(&mut self, a: Var, op: Op<T>, f: impl Fn(&[T], &mut [T])) -> Var {
        let va = self.value(a);
        let (rows, cols) = va.rows_cols();
        let mut out = Tensor::zeros(va.shape());
        for r in 0..rows {
            f(&va.data()[r * cols..(r + 1) * cols], &mut out.data_mut()[r * cols..(r + 1) * cols]);
        }
        let ng = self.ng(a);
        self.push(out, op, ng)
    }

    /// Softmax over the last axis (row max subtracted first).
    pub fn softmax(&mut self, a: Var) -> Var {
        self.rowwise(a, Op::Softmax(a), |x, y| {
            let m = x.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for (yi, &xi) in y.iter_mut().zip(x) {
                *yi = (xi - m).exp();
                z += *yi;
            }
            for yi in y.iter_mut() {
                *yi /= z;
            }
        })
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        self.rowwise(a, Op::LogSoftmax(a), |x, y| {
            let m = x.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = m + x.iter().map(|&xi| (xi - m).exp()).sum::<T>().ln();
            for (yi, &xi) in y.iter_mut().zip(x) {
                *yi = xi - lse;
            }
        })
    }

    /// Layer normalization over the last axis with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (rows, cols) = self.value(x).rows_cols();
        if self.shape(gain) != [cols] || self.shape(bias) != [cols] {
            return Err(shape_err(
                "layer_norm",
                format!("{:?} with gain {:?} bias {:?}", self.shape(x), self.shape(gain), self.shape(bias)),
            ));
        }
        let eps = T::of(eps);
        let n = T::of(cols as f64);
        let vx = self.value(x).data();
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let mut xhat = vec![T::zero(); rows * cols];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); rows * cols];
        for r in 0..rows {
            let row = &vx[r * cols..(r + 1) * cols];
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..cols {
                let h = (row[c] - mean) * rs;
                xhat[r * cols + c] = h;
                out[r * cols + c] = h * g[c] + b[c];
            }
        }
        let out = Tensor::new(self.shape(x).to_vec(), out)?;
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        Ok(self.push(out, Op::LayerNorm { x, gain, bias, xhat, rstd }, ng))
    }

    /// Max over `axis`, removing it from the shape.
    pub fn max_pool(&mut self, a: Var, axis: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() || s[axis] == 0 {
            return Err(shape_err("max_pool", format!("{:?} over axis {}", s, axis)));
        }
        let (outer, len, inner) = around(&s, axis);
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut best = o * len * inner + i;
                for l in 1..len {
                    let idx = o * len * inner + l * inner + i;
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                data.push(src[best]);
                argmax.push(best);
            }
        }
        let mut shape = s;
        shape.remove(axis);
        let out = Tensor::new(shape, data)?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::MaxPool { input: a, argmax }, ng))
    }

    /// Replaces entries where `mask` is true with `value`; those entries get no gradient.
    pub fn masked_fill(&mut self, a: Var, mask: &[bool], value: f64) -> Result<Var> {
        if mask.len() != self.value(a).len() {
            return Err(shape_err(
                "masked_fill",
                format!("mask of {} for {:?}", mask.len(), self.shape(a)),
            ));
        }
        let v = T::of(value);
        let va = self.value(a);
        let data = va.data().iter().zip(mask).map(|(&x, &m)| if m { v } else { x }).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::MaskedFill { input: a, mask: mask.to_vec() }, ng))
    }

    /// Selects rows (first axis) by index; repeated indices are allowed.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.is_empty() {
            return Err(shape_err("gather_rows", "scalar input".into()));
        }
        let width: usize = s[1..].iter().product();
        if let Some(&bad) = idx.iter().find(|&&i| i >= s[0]) {
            return Err(shape_err("gather_rows", format!("row {} of {:?}", bad, s)));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(idx.len() * width);
        for &i in idx {
            data.extend_from_slice(&src[i * width..(i + 1) * width]);
        }
        let mut shape = s;
        shape[0] = idx.len();
        let out = Tensor::new(shape, data)?;
        let ng = self.ng(a);
        Ok(self.push(out, Op::GatherRows { input: a, idx: idx.to_vec() }, ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum::<T>();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let n = va.len().max(1);
        let s = va.data().iter().copied().sum::<T>() / T::of(n as f64);
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::Mean(a), ng)
    }

    /// Runs reverse-mode differentiation from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Backward pass whose parameter gradients are added into `buf`.
    pub fn backward_into(&self, loss: Var, buf: &mut GradBuffer<T>) -> Result<()> {
        let grads = self.backward(loss)?;
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, &grads.grads[i]) {
                buf.add(*id, g);
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.ng(*a) {
                    let ga = slot(grads, *a, m * k);
                    T::gemm(
                        m,
                        n,
                        k,
                        T::one(),
                        g,
                        n as isize,
                        1,
                        self.value(*b).data(),
                        1,
                        n as isize,
                        T::one(),
                        ga,
                        k as isize,
                        1,
                    );
                }
                if self.ng(*b) {
                    let gb = slot(grads, *b, k * n);
                    T::gemm(
                        k,
                        m,
                        n,
                        T::one(),
                        self.value(*a).data(),
                        1,
                        k as isize,
                        g,
                        n as isize,
                        1,
                        T::one(),
                        gb,
                        n as isize,
                        1,
                    );
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, |ga| add_into(ga, g));
                self.acc(grads, *b, |gb| add_into(gb, g));
            }
            Op::AddRow(a, r) => {
                self.acc(grads, *a, |ga| add_into(ga, g));
                let cols = self.shape(*r)[0];
                self.acc(grads, *r, |gr| {
                    for (j, &gj) in g.iter().enumerate() {
                        gr[j % cols] += gj;
                    }
                });
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |ga| add_into(ga, g));
                self.acc(grads, *b, |gb| gb.iter_mut().zip(g).for_each(|(x, &d)| *x -= d));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.acc(grads, *a, |ga| {
                    for j in 0..g.len() {
                        ga[j] += g[j] * vb[j];
                    }
                });
                self.acc(grads, *b, |gb| {
                    for j in 0..g.len() {
                        gb[j] += g[j] * va[j];
                    }
                });
            }
            Op::Div(a, b) => {
                let vb = self.value(*b).data();
                self.acc(grads, *a, |ga| {
                    for j in 0..g.len() {
                        ga[j] += g[j] / vb[j];
                    }
                });
                self.acc(grads, *b, |gb| {
                    for j in 0..g.len() {
                        gb[j] -= g[j] * y[j] / vb[j];
                    }
                });
            }
            Op::Scale(a, c) => self.acc(grads, *a, |ga| {
                ga.iter_mut().zip(g).for_each(|(x, &d)| *x += d * *c);
            }),
            Op::AddScalar(a) | Op::Reshape(a) => self.acc(grads, *a, |ga| add_into(ga, g)),
            Op::Concat { inputs, axis } => {
                let (outer, _, inner) = around(node.value.shape(), *axis);
                let total = node.value.shape()[*axis] * inner;
                let mut off = 0;
                for &v in inputs {
                    let len = self.shape(v)[*axis] * inner;
                    self.acc(grads, v, |gv| {
                        for o in 0..outer {
                            add_into(&mut gv[o * len..(o + 1) * len], &g[o * total + off..o * total + off + len]);
                        }
                    });
                    off += len;
                }
            }
            Op::Slice { input, axis, start } => {
                let (outer, len, inner) = around(self.shape(*input), *axis);
                let width = node.value.shape()[*axis] * inner;
                self.acc(grads, *input, |gi| {
                    for o in 0..outer {
                        let off = o * len * inner + start * inner;
                        add_into(&mut gi[off..off + width], &g[o * width..(o + 1) * width]);
                    }
                });
            }
            Op::Transpose(a) => {
                let (r, c) = (self.shape(*a)[0], self.shape(*a)[1]);
                self.acc(grads, *a, |ga| {
                    for ii in 0..r {
                        for jj in 0..c {
                            ga[ii * c + jj] += g[jj * r + ii];
                        }
                    }
                });
            }
            Op::Relu(a) => self.acc(grads, *a, |ga| {
                for j in 0..g.len() {
                    if y[j] > T::zero() {
                        ga[j] += g[j];
                    }
                }
            }),
            Op::Tanh(a) => self.acc(grads, *a, |ga| {
                for j in 0..g.len() {
                    ga[j] += g[j] * (T::one() - y[j] * y[j]);
                }
            }),
            Op::Exp(a) => self.acc(grads, *a, |ga| {
                for j in 0..g.len() {
                    ga[j] += g[j] * y[j];
                }
            }),
            Op::Log(a) => {
                let x = self.value(*a).data();
                let floor = T::of(LOG_FLOOR);
                self.acc(grads, *a, |ga| {
                    for j in 0..g.len() {
                        if x[j] > floor {
                            ga[j] += g[j] / x[j];
                        }
                    }
                });
            }
            Op::Sigmoid(a) => self.acc(grads, *a, |ga| {
                for j in 0..g.len() {
                    ga[j] += g[j] * y[j] * (T::one() - y[j]);
                }
            }),
            Op::LogSigmoid(a) => {
                let x = self.value(*a).data();
                self.acc(grads, *a, |ga| {
                    for j in 0..g.len() {
                        ga[j] += g[j] * sigmoid(-x[j]);
                    }
                });
            }
            Op::Softmax(a) => {
                let (rows, cols) = node.value.rows_cols();
                self.acc(grads, *a, |ga| {
                    for r in 0..rows {
                        let (yr, gr) = (&y[r * cols..(r + 1) * cols], &g[r * cols..(r + 1) * cols]);
                        let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                        for c in 0..cols {
                            ga[r * cols + c] += yr[c] * (gr[c] - dot);
                        }
                    }
                });
            }
            Op::LogSoftmax(a) => {
                let (rows, cols) = node.value.rows_cols();
                self.acc(grads, *a, |ga| {
                    for r in 0..rows {
                        let gr = &g[r * cols..(r + 1) * cols];
                        let gs: T = gr.iter().copied().sum();
                        for c in 0..cols {
                            ga[r * cols + c] += gr[c] - y[r * cols + c].exp() * gs;
                        }
                    }
                });
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let (rows, cols) = node.value.rows_cols();
                let gv = self.value(*gain).data();
                self.acc(grads, *gain, |gg| {
                    for j in 0..g.len() {
                        gg[j % cols] += g[j] * xhat[j];
                    }
                });
                self.acc(grads, *bias, |gb| {
                    for j in 0..g.len() {
                        gb[j % cols] += g[j];
                    }
                });
                let n = T::of(cols as f64);
                self.acc(grads, *x, |gx| {
                    for r in 0..rows {
                        let base = r * cols;
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for c in 0..cols {
                            let d = g[base + c] * gv[c];
                            m1 += d;
                            m2 += d * xhat[base + c];
                        }
                        m1 /= n;
                        m2 /= n;
                        for c in 0..cols {
                            let d = g[base + c] * gv[c];
                            gx[base + c] += rstd[r] * (d - m1 - xhat[base + c] * m2);
                        }
                    }
                });
            }
            Op::MaxPool { input, argmax } => self.acc(grads, *input, |gi| {
                for (j, &src) in argmax.iter().enumerate() {
                    gi[src] += g[j];
                }
            }),
            Op::MaskedFill { input, mask } => self.acc(grads, *input, |gi| {
                for j in 0..g.len() {
                    if !mask[j] {
                        gi[j] += g[j];
                    }
                }
            }),
            Op::Clamp { input, lo, hi } => {
                let x = self.value(*input).data();
                self.acc(grads, *input, |gi| {
                    for j in 0..g.len() {
                        if x[j] >= *lo && x[j] <= *hi {
                            gi[j] += g[j];
                        }
                    }
                });
            }
            Op::GatherRows { input, idx } => {
                let width = if idx.is_empty() { 0 } else { g.len() / idx.len() };
                self.acc(grads, *input, |gi| {
                    for (k, &r) in idx.iter().enumerate() {
                        add_into(&mut gi[r * width..(r + 1) * width], &g[k * width..(k + 1) * width]);
                    }
                });
            }
            Op::Sum(a) => self.acc(grads, *a, |ga| ga.iter_mut().for_each(|x| *x += g[0])),
            Op::Mean(a) => {
                let n = T::of(self.value(*a).len().max(1) as f64);
                self.acc(grads, *a, |ga| ga.iter_mut().for_each(|x| *x += g[0] / n));
            }
        }
    }

    fn acc(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if self.ng(v) {
            let n = self.value(v).len();
            f(slot(grads, v, n));
        }
    }
}

fn slot<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, n: usize) -> &mut [T] {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); n])
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Real>(x: T) -> T {
    // log(1 + e^x) = max(x, 0) + log(1 + e^-|x|)
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss w.r.t. `v`, or `None` if `v` does not reach the loss.
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}
