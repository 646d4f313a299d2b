//! Tape-style reverse-mode differentiation.
//!
//! A [`Graph`] is built per minibatch: every operation evaluates eagerly,
//! appends a node recording its parents, and returns a [`Var`] handle. Nodes
//! are only ever appended, so node order is a topological order and the
//! backward sweep is a single reverse pass.

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How the two operands of a binary op line up.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Same,
    LhsScalar,
    RhsScalar,
    /// lhs is `[C]`/`[1, C]`, rhs is `[R, C]`
    LhsRow,
    /// rhs is `[C]`/`[1, C]`, lhs is `[R, C]`
    RhsRow,
}

impl Bcast {
    fn resolve(op: &'static str, a: &[usize], b: &[usize]) -> Result<(Self, Vec<usize>)> {
        let numel = |s: &[usize]| s.iter().product::<usize>();
        let row_of = |full: &[usize], row: &[usize]| {
            full.len() == 2
                && match row {
                    [c] => *c == full[1],
                    [1, c] => *c == full[1],
                    _ => false,
                }
        };
        if a == b {
            Ok((Bcast::Same, a.to_vec()))
        } else if numel(b) == 1 {
            Ok((Bcast::RhsScalar, a.to_vec()))
        } else if numel(a) == 1 {
            Ok((Bcast::LhsScalar, b.to_vec()))
        } else if row_of(a, b) {
            Ok((Bcast::RhsRow, a.to_vec()))
        } else if row_of(b, a) {
            Ok((Bcast::LhsRow, b.to_vec()))
        } else {
            Err(Error::Shape {
                op,
                lhs: a.to_vec(),
                rhs: b.to_vec(),
            })
        }
    }

    /// Flat source indices of (lhs, rhs) for output element `i`.
    #[inline]
    fn index(self, i: usize, cols: usize) -> (usize, usize) {
        match self {
            Bcast::Same => (i, i),
            Bcast::LhsScalar => (0, i),
            Bcast::RhsScalar => (i, 0),
            Bcast::LhsRow => (i % cols, i),
            Bcast::RhsRow => (i, i % cols),
        }
    }
}

fn zip_with(a: &Tensor, b: &Tensor, kind: Bcast, shape: Vec<usize>, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let numel: usize = shape.iter().product();
    let cols = *shape.last().unwrap_or(&1);
    let (ad, bd) = (a.data(), b.data());
    let data = if kind == Bcast::Same {
        ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect()
    } else {
        (0..numel)
            .map(|i| {
                let (ia, ib) = kind.index(i, cols);
                f(ad[ia], bd[ib])
            })
            .collect()
    };
    Tensor::from_parts(shape, data)
}

/// Sums a full-shaped gradient down to the shape of a broadcast operand.
fn reduce_to(full: Tensor, target: &[usize], is_scalar: bool, is_row: bool) -> Tensor {
    if is_scalar {
        Tensor::from_parts(target.to_vec(), vec![full.data().iter().sum()])
    } else if is_row {
        let (rows, cols) = full.matrix_dims();
        let mut out = vec![0.0; cols];
        for r in 0..rows {
            for (o, v) in out.iter_mut().zip(&full.data()[r * cols..(r + 1) * cols]) {
                *o += v;
            }
        }
        Tensor::from_parts(target.to_vec(), out)
    } else {
        full
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Sigmoid,
    Identity,
}

enum Op {
    Leaf,
    Add(Var, Var, Bcast),
    Sub(Var, Var, Bcast),
    Mul(Var, Var, Bcast),
    Scale(Var, f64),
    Offset(Var),
    MatMul(Var, Var),
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    Abs(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    Max(Var, usize),
    Broadcast(Var, bool),
    ConcatCols(Vec<Var>),
    TileCols(Var, usize),
    FoldColsMean(Var, usize),
    RepeatRows(Var, usize),
    GroupRowsMean(Var, usize),
    Reshape(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Computation tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    /// Accumulated gradients of `requires_grad` leaves, indexed by node.
    leaf_grads: Vec<Option<Tensor>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a trainable leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.leaf_grads[v.0].as_ref()
    }

    pub fn grad_or_zeros(&self, v: Var) -> Tensor {
        self.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(self.shape(v)))
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    /// Same value, no parents: gradient never flows through the result.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<(Tensor, Bcast)> {
        let (kind, shape) = Bcast::resolve(op, self.shape(a), self.shape(b))?;
        let value = zip_with(self.value(a), self.value(b), kind, shape, f);
        Ok((value, kind))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (value, kind) = self.binary("add", a, b, |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b, kind), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (value, kind) = self.binary("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Sub(a, b, kind), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (value, kind) = self.binary("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b, kind), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|x| x * factor);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, factor), rg)
    }

    /// `a + c` for a constant `c`.
    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x + c);
        let rg = self.rg(a);
        self.push(value, Op::Offset(a), rg)
    }

    /// `c - a` for a constant `c`.
    pub fn rsub_scalar(&mut self, c: f64, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.offset(neg, c)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
            false,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), rg))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    /// `max(0, x)`; the same primitive as [`Graph::relu`], named for loss code.
    pub fn relu_hinge(&mut self, a: Var) -> Var {
        self.relu(a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn activate(&mut self, a: Var, act: Activation) -> Var {
        match act {
            Activation::Tanh => self.tanh(a),
            Activation::Relu => self.relu(a),
            Activation::Sigmoid => self.sigmoid(a),
            Activation::Identity => a,
        }
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Maximum over all elements; gradient goes to the first maximiser.
    pub fn max(&mut self, a: Var) -> Var {
        let data = self.value(a).data();
        let mut arg = 0;
        for (i, &v) in data.iter().enumerate() {
            if v > data[arg] {
                arg = i;
            }
        }
        let m = data[arg];
        let rg = self.rg(a);
        self.push(Tensor::scalar(m), Op::Max(a, arg), rg)
    }

    /// Expands a scalar or a row vector to `shape`.
    pub fn broadcast(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let src = self.value(a);
        let numel: usize = shape.iter().product();
        let cols = *shape.last().unwrap_or(&1);
        let (data, is_row) = if src.numel() == 1 {
            (vec![src.data()[0]; numel], false)
        } else if shape.len() == 2 && src.numel() == cols && src.matrix_dims().0 == 1 {
            let d = src.data();
            ((0..numel).map(|i| d[i % cols]).collect(), true)
        } else {
            return Err(Error::Shape {
                op: "broadcast",
                lhs: src.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        };
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_parts(shape.to_vec(), data), Op::Broadcast(a, is_row), rg))
    }

    fn require_matrix(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::Shape {
                op,
                lhs: s.to_vec(),
                rhs: vec![],
            }),
        }
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let mut rows = None;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.require_matrix("concat_cols", p)?;
            match rows {
                None => rows = Some(r),
                Some(r0) if r0 != r => {
                    return Err(Error::Shape {
                        op: "concat_cols",
                        lhs: self.shape(parts[0]).to_vec(),
                        rhs: self.shape(p).to_vec(),
                    })
                }
                _ => {}
            }
            widths.push(c);
        }
        let rows = rows.ok_or_else(|| Error::InvalidTensor("concat of zero parts".into()))?;
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::from_parts(vec![rows, total], out),
            Op::ConcatCols(parts.to_vec()),
            rg,
        ))
    }

    /// `[R, C] -> [R, C * times]` with column `j` copied from column `j % C`.
    pub fn tile_cols(&mut self, a: Var, times: usize) -> Result<Var> {
        let (rows, cols) = self.require_matrix("tile_cols", a)?;
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(rows * cols * times);
        for r in 0..rows {
            let row = &src[r * cols..(r + 1) * cols];
            for _ in 0..times {
                out.extend_from_slice(row);
            }
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::from_parts(vec![rows, cols * times], out),
            Op::TileCols(a, times),
            rg,
        ))
    }

    /// `[R, G * C] -> [R, C]`, averaging columns that agree modulo `C`.
    pub fn fold_cols_mean(&mut self, a: Var, cols: usize) -> Result<Var> {
        let (rows, width) = self.require_matrix("fold_cols_mean", a)?;
        if cols == 0 || width % cols != 0 {
            return Err(Error::Shape {
                op: "fold_cols_mean",
                lhs: vec![rows, width],
                rhs: vec![cols],
            });
        }
        let groups = width / cols;
        let src = self.value(a).data();
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let o = &mut out[r * cols..(r + 1) * cols];
            for g in 0..groups {
                let s = &src[r * width + g * cols..r * width + (g + 1) * cols];
                for (x, y) in o.iter_mut().zip(s) {
                    *x += y;
                }
            }
            o.iter_mut().for_each(|x| *x /= groups as f64);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_parts(vec![rows, cols], out), Op::FoldColsMean(a, cols), rg))
    }

    /// `[R, C] -> [R * times, C]` with each row repeated `times` times in a block.
    pub fn repeat_rows(&mut self, a: Var, times: usize) -> Result<Var> {
        let (rows, cols) = self.require_matrix("repeat_rows", a)?;
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(rows * cols * times);
        for r in 0..rows {
            for _ in 0..times {
                out.extend_from_slice(&src[r * cols..(r + 1) * cols]);
            }
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::from_parts(vec![rows * times, cols], out),
            Op::RepeatRows(a, times),
            rg,
        ))
    }

    /// `[R * G, C] -> [R, C]`, averaging consecutive blocks of `group` rows.
    pub fn group_rows_mean(&mut self, a: Var, group: usize) -> Result<Var> {
        let (rows, cols) = self.require_matrix("group_rows_mean", a)?;
        if group == 0 || rows % group != 0 {
            return Err(Error::Shape {
                op: "group_rows_mean",
                lhs: vec![rows, cols],
                rhs: vec![group],
            });
        }
        let out_rows = rows / group;
        let src = self.value(a).data();
        let mut out = vec![0.0; out_rows * cols];
        for r in 0..rows {
            let o = &mut out[(r / group) * cols..(r / group + 1) * cols];
            for (x, y) in o.iter_mut().zip(&src[r * cols..(r + 1) * cols]) {
                *x += y;
            }
        }
        out.iter_mut().for_each(|x| *x /= group as f64);
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::from_parts(vec![out_rows, cols], out),
            Op::GroupRowsMean(a, group),
            rg,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    /// `x @ weight + bias` followed by `act`.
    pub fn dense(&mut self, x: Var, weight: Var, bias: Var, act: Activation) -> Result<Var> {
        let z = self.matmul(x, weight)?;
        let z = self.add(z, bias)?;
        Ok(self.activate(z, act))
    }

    /// Reverse sweep from a scalar `loss`. Gradients of trainable leaves are
    /// added to whatever previous calls accumulated.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss);
        if shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarLoss(shape.to_vec()));
        }
        if !self.rg(loss) {
            return Ok(());
        }
        let mut adj: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::from_parts(shape.to_vec(), vec![1.0]));

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                match &mut self.leaf_grads[idx] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
                continue;
            }
            self.propagate(idx, g, &mut adj);
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: Tensor, adj: &mut [Option<Tensor>]) {
        let nodes = &self.nodes;
        let val = |v: Var| &nodes[v.0].value;
        let needs = |v: Var| nodes[v.0].requires_grad;
        let mut send = |v: Var, t: Tensor| {
            if !nodes[v.0].requires_grad {
                return;
            }
            match &mut adj[v.0] {
                Some(acc) => acc.add_assign(&t),
                slot => *slot = Some(t),
            }
        };
        let out = &nodes[idx].value;

        match &nodes[idx].op {
            Op::Leaf => unreachable!(),
            &Op::Add(a, b, kind) | &Op::Sub(a, b, kind) => {
                let sign = if matches!(nodes[idx].op, Op::Sub(..)) {
                    -1.0
                } else {
                    1.0
                };
                if needs(b) {
                    let gb = if sign < 0.0 { g.map(|x| -x) } else { g.clone() };
                    let gb = reduce_to(gb, val(b).shape(), kind == Bcast::RhsScalar, kind == Bcast::RhsRow);
                    send(b, gb);
                }
                if needs(a) {
                    let ga = reduce_to(g, val(a).shape(), kind == Bcast::LhsScalar, kind == Bcast::LhsRow);
                    send(a, ga);
                }
            }
            &Op::Mul(a, b, kind) => {
                let shape = out.shape().to_vec();
                if needs(a) {
                    let full = zip_with(&g, val(b), rhs_side(kind), shape.clone(), |gi, bi| gi * bi);
                    send(
                        a,
                        reduce_to(full, val(a).shape(), kind == Bcast::LhsScalar, kind == Bcast::LhsRow),
                    );
                }
                if needs(b) {
                    let full = zip_with(&g, val(a), lhs_side(kind), shape, |gi, ai| gi * ai);
                    send(
                        b,
                        reduce_to(full, val(b).shape(), kind == Bcast::RhsScalar, kind == Bcast::RhsRow),
                    );
                }
            }
            &Op::Scale(a, f) => send(a, g.map(|x| x * f)),
            &Op::Offset(a) => send(a, g),
            &Op::MatMul(a, b) => {
                let (m, k) = val(a).matrix_dims();
                let n = val(b).matrix_dims().1;
                if needs(a) {
                    // dA = dC * B^T
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, val(b).data(), true, &mut da, false);
                    send(a, Tensor::from_parts(vec![m, k], da));
                }
                if needs(b) {
                    // dB = A^T * dC
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, val(a).data(), true, g.data(), false, &mut db, false);
                    send(b, Tensor::from_parts(vec![k, n], db));
                }
            }
            &Op::Tanh(a) => send(a, elementwise(&g, out, |gi, y| gi * (1.0 - y * y))),
            &Op::Sigmoid(a) => send(a, elementwise(&g, out, |gi, y| gi * y * (1.0 - y))),
            &Op::Relu(a) => send(a, elementwise(&g, val(a), |gi, x| if x > 0.0 { gi } else { 0.0 })),
            &Op::Abs(a) => send(a, elementwise(&g, val(a), |gi, x| gi * sign(x))),
            &Op::Square(a) => send(a, elementwise(&g, val(a), |gi, x| 2.0 * gi * x)),
            &Op::Sum(a) => send(a, Tensor::full(val(a).shape(), g.item())),
            &Op::Mean(a) => {
                let n = val(a).numel() as f64;
                send(a, Tensor::full(val(a).shape(), g.item() / n))
            }
            &Op::Max(a, arg) => {
                let mut t = Tensor::zeros(val(a).shape());
                t.data_mut()[arg] = g.item();
                send(a, t)
            }
            &Op::Broadcast(a, is_row) => {
                send(a, reduce_to(g, val(a).shape(), !is_row, is_row));
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = out.matrix_dims();
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).matrix_dims().1;
                    if needs(p) {
                        let mut d = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            d.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                        }
                        send(p, Tensor::from_parts(vec![rows, w], d));
                    }
                    offset += w;
                }
            }
            &Op::TileCols(a, times) => {
                let (rows, cols) = val(a).matrix_dims();
                let width = cols * times;
                let mut d = vec![0.0; rows * cols];
                for r in 0..rows {
                    for j in 0..width {
                        d[r * cols + j % cols] += g.data()[r * width + j];
                    }
                }
                send(a, Tensor::from_parts(vec![rows, cols], d));
            }
            &Op::FoldColsMean(a, cols) => {
                let (rows, width) = val(a).matrix_dims();
                let groups = (width / cols) as f64;
                let mut d = vec![0.0; rows * width];
                for r in 0..rows {
                    for j in 0..width {
                        d[r * width + j] = g.data()[r * cols + j % cols] / groups;
                    }
                }
                send(a, Tensor::from_parts(vec![rows, width], d));
            }
            &Op::RepeatRows(a, times) => {
                let (rows, cols) = val(a).matrix_dims();
                let mut d = vec![0.0; rows * cols];
                for r in 0..rows * times {
                    let o = &mut d[(r / times) * cols..(r / times + 1) * cols];
                    for (x, y) in o.iter_mut().zip(&g.data()[r * cols..(r + 1) * cols]) {
                        *x += y;
                    }
                }
                send(a, Tensor::from_parts(vec![rows, cols], d));
            }
            &Op::GroupRowsMean(a, group) => {
                let (rows, cols) = val(a).matrix_dims();
                let mut d = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    d.extend(
                        g.data()[(r / group) * cols..(r / group + 1) * cols]
                            .iter()
                            .map(|x| x / group as f64),
                    );
                }
                send(a, Tensor::from_parts(vec![rows, cols], d));
            }
            &Op::Reshape(a) => {
                let shape = val(a).shape().to_vec();
                send(a, Tensor::from_parts(shape, g.into_data()));
            }
        }
    }
}

/// For `d(lhs)`: how the full-shaped output gradient lines up with rhs.
fn rhs_side(kind: Bcast) -> Bcast {
    match kind {
        Bcast::RhsScalar => Bcast::RhsScalar,
        Bcast::RhsRow => Bcast::RhsRow,
        _ => Bcast::Same,
    }
}

/// For `d(rhs)`: how the full-shaped output gradient lines up with lhs.
fn lhs_side(kind: Bcast) -> Bcast {
    match kind {
        Bcast::LhsScalar => Bcast::RhsScalar,
        Bcast::LhsRow => Bcast::RhsRow,
        _ => Bcast::Same,
    }
}

fn elementwise(g: &Tensor, x: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_parts(
        g.shape().to_vec(),
        g.data().iter().zip(x.data()).map(|(&a, &b)| f(a, b)).collect(),
    )
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
