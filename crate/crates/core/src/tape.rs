//! Define-by-run reverse-mode automatic differentiation.
//!
//! Every forward op appends a node to the [`Tape`]; nodes are therefore in
//! topological order by construction. [`Tape::backward`] walks them in
//! reverse once, accumulating vector-Jacobian products into per-node
//! gradient buffers. A tape is single-use: build a fresh one per forward.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::tensor::{gemm_acc, gemm_at_acc, gemm_bt_acc, Tensor, TensorError};

type Result<T> = core::result::Result<T, TensorError>;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Activation {
    Relu,
    /// `0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))`
    #[default]
    Gelu,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Gelu => 0.5 * x * (1.0 + math::tanh(GELU_C * (x + GELU_A * x * x * x))),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Gelu => {
                let t = math::tanh(GELU_C * (x + GELU_A * x * x * x));
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `broadcast`: rhs is a trailing vector repeated over every row of lhs.
    Binary {
        kind: BinaryKind,
        a: Var,
        b: Var,
        broadcast: bool,
    },
    Scale(Var, f64),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    MeanAxis {
        x: Var,
        axis: usize,
    },
    Act(Var, Activation),
    Abs(Var),
    Transpose(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Reshape(Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Gradient tape holding every intermediate value of one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_ran: bool,
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

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Leaf that does not receive a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf that receives a gradient on [`backward`](Self::backward).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last backward loss w.r.t. `v`, if `v` participated.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2("matmul")?;
        let (k2, n) = self.value(b).dims2("matmul")?;
        if k != k2 {
            return Err(TensorError::Shape {
                op: "matmul",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), tracked))
    }

    /// Elementwise `a ∘ b`. `b` is either the same shape as `a` or a trailing
    /// vector whose length equals `a`'s last dimension.
    pub fn elementwise(&mut self, a: Var, b: Var, kind: BinaryKind) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        let broadcast = if sa == sb {
            false
        } else {
            let d = self.value(a).last_dim();
            let trailing = match sb {
                [n] => *n == d,
                [1, n] => *n == d,
                _ => false,
            };
            if !trailing || sa.is_empty() {
                return Err(TensorError::Shape {
                    op: "elementwise",
                    lhs: sa.to_vec(),
                    rhs: sb.to_vec(),
                });
            }
            true
        };
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let f = |x: f64, y: f64| match kind {
            BinaryKind::Add => x + y,
            BinaryKind::Sub => x - y,
            BinaryKind::Mul => x * y,
        };
        let out: Vec<f64> = if broadcast {
            let d = bv.len();
            av.iter().enumerate().map(|(i, &x)| f(x, bv[i % d])).collect()
        } else {
            av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect()
        };
        let value = Tensor::new(self.value(a).shape(), out)?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(
            value,
            Op::Binary {
                kind,
                a,
                b,
                broadcast,
            },
            tracked,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, BinaryKind::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, BinaryKind::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, BinaryKind::Mul)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a);
        let value = Tensor::new(t.shape(), t.data().iter().map(|x| x * c).collect())
            .expect("shape preserved");
        let tracked = self.tracked(a);
        self.push(value, Op::Scale(a, c), tracked)
    }

    /// Softmax over the last dimension, with max-subtraction.
    pub fn softmax_lastdim(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let d = t.last_dim();
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(d) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = math::exp(*v - max);
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let value = Tensor::new(t.shape(), out).expect("shape preserved");
        let tracked = self.tracked(a);
        self.push(value, Op::Softmax(a), tracked)
    }

    /// Normalizes each last-dim slice to zero mean / unit (population)
    /// variance, then applies `gain` and `bias` (both of length `d`).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let t = self.value(x);
        let d = t.last_dim();
        for p in [gain, bias] {
            if self.value(p).len() != d {
                return Err(TensorError::Shape {
                    op: "layer_norm",
                    lhs: t.shape().to_vec(),
                    rhs: self.value(p).shape().to_vec(),
                });
            }
        }
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let n_rows = t.len() / d;
        let mut xhat = Vec::with_capacity(t.len());
        let mut inv_std = Vec::with_capacity(n_rows);
        let mut out = Vec::with_capacity(t.len());
        for row in t.data().chunks(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let r = 1.0 / math::sqrt(var + eps);
            inv_std.push(r);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * r;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let value = Tensor::new(t.shape(), out)?;
        let tracked = self.tracked(x) || self.tracked(gain) || self.tracked(bias);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            tracked,
        ))
    }

    /// Arithmetic mean along `axis`, removing that dimension.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let t = self.value(a);
        let rank = t.rank();
        if axis >= rank {
            return Err(TensorError::Axis { axis, rank });
        }
        let (outer, len, inner) = axis_split(t.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        let data = t.data();
        for o in 0..outer {
            for k in 0..len {
                let base = (o * len + k) * inner;
                for i in 0..inner {
                    out[o * inner + i] += data[base + i];
                }
            }
        }
        let inv = 1.0 / len as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        let mut shape = t.shape().to_vec();
        shape.remove(axis);
        let value = Tensor::new(&shape, out)?;
        let tracked = self.tracked(a);
        Ok(self.push(value, Op::MeanAxis { x: a, axis }, tracked))
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Var {
        let t = self.value(a);
        let out = t.data().iter().map(|&x| kind.apply(x)).collect();
        let value = Tensor::new(t.shape(), out).expect("shape preserved");
        let tracked = self.tracked(a);
        self.push(value, Op::Act(a, kind), tracked)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = t.data().iter().map(|x| x.abs()).collect();
        let value = Tensor::new(t.shape(), out).expect("shape preserved");
        let tracked = self.tracked(a);
        self.push(value, Op::Abs(a), tracked)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = t.dims2("transpose")?;
        let d = t.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = d[i * c + j];
            }
        }
        let value = Tensor::matrix(c, r, out)?;
        let tracked = self.tracked(a);
        Ok(self.push(value, Op::Transpose(a), tracked))
    }

    /// Columns `start..start+len` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = t.dims2("slice_cols")?;
        if len == 0 || start + len > c {
            return Err(TensorError::Range {
                op: "slice_cols",
                start,
                end: start + len,
                extent: c,
            });
        }
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&t.data()[i * c + start..i * c + start + len]);
        }
        let value = Tensor::matrix(r, len, out)?;
        let tracked = self.tracked(a);
        Ok(self.push(value, Op::SliceCols { x: a, start }, tracked))
    }

    /// Rows `start..start+len` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = t.dims2("slice_rows")?;
        if len == 0 || start + len > r {
            return Err(TensorError::Range {
                op: "slice_rows",
                start,
                end: start + len,
                extent: r,
            });
        }
        let out = t.data()[start * c..(start + len) * c].to_vec();
        let value = Tensor::matrix(len, c, out)?;
        let tracked = self.tracked(a);
        Ok(self.push(value, Op::SliceRows { x: a, start }, tracked))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(TensorError::Rank {
            op: "concat_cols",
            expected: 2,
            shape: Vec::new(),
        })?;
        let (r, _) = self.value(first).dims2("concat_cols")?;
        let mut total = 0;
        for &p in parts {
            let (pr, pc) = self.value(p).dims2("concat_cols")?;
            if pr != r {
                return Err(TensorError::Shape {
                    op: "concat_cols",
                    lhs: self.value(first).shape().to_vec(),
                    rhs: self.value(p).shape().to_vec(),
                });
            }
            total += pc;
        }
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let value = Tensor::matrix(r, total, out)?;
        let tracked = parts.iter().any(|&p| self.tracked(p));
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), tracked))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(TensorError::Rank {
            op: "concat_rows",
            expected: 2,
            shape: Vec::new(),
        })?;
        let (_, c) = self.value(first).dims2("concat_rows")?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (pr, pc) = self.value(p).dims2("concat_rows")?;
            if pc != c {
                return Err(TensorError::Shape {
                    op: "concat_rows",
                    lhs: self.value(first).shape().to_vec(),
                    rhs: self.value(p).shape().to_vec(),
                });
            }
            rows += pr;
            out.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::matrix(rows, c, out)?;
        let tracked = parts.iter().any(|&p| self.tracked(p));
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), tracked))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshaped(shape)?;
        let tracked = self.tracked(a);
        Ok(self.push(value, Op::Reshape(a), tracked))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let tracked = self.tracked(a);
        self.push(Tensor::scalar(s), Op::Sum(a), tracked)
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// `x·w + b` with `b` broadcast over rows.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add(xw, b)
    }

    /// Populates gradients of the scalar `loss` w.r.t. every tracked node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_ran {
            return Err(TensorError::BackwardTwice);
        }
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(TensorError::NonScalarLoss(lt.shape().to_vec()));
        }
        if !self.tracked(loss) {
            return Err(TensorError::Detached);
        }
        self.backward_ran = true;
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.node_vjp(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn node_vjp(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].tracked {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
            f(buf);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                acc(*a, &mut |ga| gemm_bt_acc(g, bv.data(), ga, m, n, k));
                acc(*b, &mut |gb| gemm_at_acc(av.data(), g, gb, m, k, n));
            }
            Op::Binary {
                kind,
                a,
                b,
                broadcast,
            } => {
                let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                let d = bv.len();
                let bidx = |i: usize| if *broadcast { i % d } else { i };
                match kind {
                    BinaryKind::Add | BinaryKind::Sub => {
                        let sign = if *kind == BinaryKind::Sub { -1.0 } else { 1.0 };
                        acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                        acc(*b, &mut |gb| {
                            for (i, gi) in g.iter().enumerate() {
                                gb[bidx(i)] += sign * gi;
                            }
                        });
                    }
                    BinaryKind::Mul => {
                        acc(*a, &mut |ga| {
                            for (i, gi) in g.iter().enumerate() {
                                ga[i] += gi * bv[bidx(i)];
                            }
                        });
                        acc(*b, &mut |gb| {
                            for (i, gi) in g.iter().enumerate() {
                                gb[bidx(i)] += gi * av[i];
                            }
                        });
                    }
                }
            }
            Op::Scale(a, c) => acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += c * y)),
            Op::Softmax(a) => {
                let y = node.value.data();
                let d = node.value.last_dim();
                acc(*a, &mut |ga| {
                    for ((gr, yr), gar) in g.chunks(d).zip(y.chunks(d)).zip(ga.chunks_mut(d)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for j in 0..d {
                            gar[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = node.value.last_dim();
                let gv = nodes[gain.0].value.data();
                acc(*gain, &mut |gg| {
                    for (gr, hr) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            gg[j] += gr[j] * hr[j];
                        }
                    }
                });
                acc(*bias, &mut |gb| {
                    for gr in g.chunks(d) {
                        gb.iter_mut().zip(gr).for_each(|(x, y)| *x += y);
                    }
                });
                acc(*x, &mut |gx| {
                    for (row, ((gr, hr), gxr)) in
                        g.chunks(d).zip(xhat.chunks(d)).zip(gx.chunks_mut(d)).enumerate()
                    {
                        let r = inv_std[row];
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for j in 0..d {
                            let dh = gr[j] * gv[j];
                            mean_dh += dh;
                            mean_dh_h += dh * hr[j];
                        }
                        mean_dh /= d as f64;
                        mean_dh_h /= d as f64;
                        for j in 0..d {
                            let dh = gr[j] * gv[j];
                            gxr[j] += r * (dh - mean_dh - hr[j] * mean_dh_h);
                        }
                    }
                });
            }
            Op::MeanAxis { x, axis } => {
                let (outer, len, inner) = axis_split(nodes[x.0].value.shape(), *axis);
                let inv = 1.0 / len as f64;
                acc(*x, &mut |gx| {
                    for o in 0..outer {
                        for k in 0..len {
                            let base = (o * len + k) * inner;
                            for i in 0..inner {
                                gx[base + i] += g[o * inner + i] * inv;
                            }
                        }
                    }
                });
            }
            Op::Act(a, kind) => {
                let xv = nodes[a.0].value.data();
                acc(*a, &mut |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * kind.derivative(xv[i]);
                    }
                });
            }
            Op::Abs(a) => {
                let xv = nodes[a.0].value.data();
                acc(*a, &mut |ga| {
                    for i in 0..ga.len() {
                        let s = if xv[i] > 0.0 {
                            1.0
                        } else if xv[i] < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        ga[i] += g[i] * s;
                    }
                });
            }
            Op::Transpose(a) => {
                let (r, c) = (nodes[a.0].value.shape()[0], nodes[a.0].value.shape()[1]);
                acc(*a, &mut |ga| {
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::SliceCols { x, start } => {
                let c = nodes[x.0].value.last_dim();
                let len = node.value.last_dim();
                acc(*x, &mut |gx| {
                    for (i, gr) in g.chunks(len).enumerate() {
                        let dst = &mut gx[i * c + start..i * c + start + len];
                        dst.iter_mut().zip(gr).for_each(|(a, b)| *a += b);
                    }
                });
            }
            Op::SliceRows { x, start } => {
                let c = nodes[x.0].value.last_dim();
                acc(*x, &mut |gx| {
                    let dst = &mut gx[start * c..start * c + g.len()];
                    dst.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                });
            }
            Op::ConcatCols(parts) => {
                let total = node.value.last_dim();
                let mut offset = 0;
                for p in parts {
                    let pc = nodes[p.0].value.last_dim();
                    acc(*p, &mut |gp| {
                        for (i, gpr) in gp.chunks_mut(pc).enumerate() {
                            let src = &g[i * total + offset..i * total + offset + pc];
                            gpr.iter_mut().zip(src).for_each(|(a, b)| *a += b);
                        }
                    });
                    offset += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = nodes[p.0].value.len();
                    acc(*p, &mut |gp| {
                        gp.iter_mut().zip(&g[offset..offset + n]).for_each(|(a, b)| *a += b);
                    });
                    offset += n;
                }
            }
            Op::Reshape(a) => acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y)),
            Op::Sum(a) => acc(*a, &mut |ga| ga.iter_mut().for_each(|x| *x += g[0])),
        }
    }
}

/// `(outer, len, inner)` extents around `axis` in a row-major shape.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
