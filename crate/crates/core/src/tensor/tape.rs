use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use super::{gemm, Tensor};
use crate::error::{Error, Result};

/// Recorded operation. Inputs are node ids on the same tape; ids are assigned
/// in creation order, which is therefore a topological order.
#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: usize, b: usize, ta: bool, tb: bool },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddRow { a: usize, row: usize },
    MulRow { a: usize, row: usize },
    MulCol { a: usize, col: usize },
    Affine { a: usize, scale: f64 },
    Transpose(usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceCols { a: usize, start: usize },
    SliceRows { a: usize, start: usize },
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    LeakyRelu { a: usize, slope: f64 },
    Exp(usize),
    Log(usize),
    Clamp { a: usize, lo: f64, hi: f64 },
    SoftmaxRows(usize),
    SegmentSoftmax { a: usize, offsets: Arc<[usize]> },
    SegmentSum { a: usize, offsets: Arc<[usize]> },
    GatherRows { a: usize, index: Arc<[usize]> },
    MeanRows(usize),
    SumAll(usize),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A define-by-run tape. Single-threaded; build one per worker.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}", self.id)
    }
}

/// Gradients of a scalar loss with respect to every leaf that requires them.
#[derive(Debug, Default)]
pub struct Gradients {
    by_id: HashMap<usize, Tensor>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.by_id.get(&var.id)
    }

    pub fn take(&mut self, var: Var<'_>) -> Option<Tensor> {
        self.by_id.remove(&var.id)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
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

    fn requires(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// Reverse pass from a `1 × 1` loss. The tape is emptied afterwards, so
    /// every `Var` recorded on it becomes invalid for value access.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = std::mem::take(&mut *self.nodes.borrow_mut());
        let root = nodes
            .get(loss.id)
            .ok_or_else(|| Error::Contract("loss is not on this tape".into()))?;
        if root.value.shape() != [1, 1] {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }

        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(loss.id + 1, || None);
        grads[loss.id] = Some(vec![1.0]);
        let mut out = Gradients::default();

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let y = &node.value;
            let mut acc = |target: usize, contribution: Vec<f64>| {
                if !nodes[target].requires_grad {
                    return;
                }
                match &mut grads[target] {
                    Some(existing) => existing
                        .iter_mut()
                        .zip(contribution)
                        .for_each(|(e, c)| *e += c),
                    slot @ None => *slot = Some(contribution),
                }
            };
            let val = |i: usize| &nodes[i].value;

            match &node.op {
                Op::Leaf => {
                    out.by_id.insert(id, Tensor::new(y.rows(), y.cols(), g)?);
                }
                &Op::MatMul { a, b, ta, tb } => {
                    let gt = Tensor::new(y.rows(), y.cols(), g)?;
                    let (av, bv) = (val(a), val(b));
                    if nodes[a].requires_grad {
                        let da = if ta {
                            gemm(bv, tb, &gt, true)?
                        } else {
                            gemm(&gt, false, bv, !tb)?
                        };
                        acc(a, da.into_data());
                    }
                    if nodes[b].requires_grad {
                        let db = if tb {
                            gemm(&gt, true, av, ta)?
                        } else {
                            gemm(av, !ta, &gt, false)?
                        };
                        acc(b, db.into_data());
                    }
                }
                &Op::Add(a, b) => {
                    acc(b, g.clone());
                    acc(a, g);
                }
                &Op::Sub(a, b) => {
                    acc(b, g.iter().map(|x| -x).collect());
                    acc(a, g);
                }
                &Op::Mul(a, b) => {
                    let (av, bv) = (val(a).data(), val(b).data());
                    acc(a, g.iter().zip(bv).map(|(g, b)| g * b).collect());
                    acc(b, g.iter().zip(av).map(|(g, a)| g * a).collect());
                }
                &Op::Div(a, b) => {
                    let (av, bv) = (val(a).data(), val(b).data());
                    acc(a, g.iter().zip(bv).map(|(g, b)| g / b).collect());
                    acc(
                        b,
                        g.iter()
                            .zip(av.iter().zip(bv))
                            .map(|(g, (a, b))| -g * a / (b * b))
                            .collect(),
                    );
                }
                &Op::AddRow { a, row } => {
                    let cols = y.cols();
                    let mut gr = vec![0.0; cols];
                    for chunk in g.chunks(cols.max(1)) {
                        gr.iter_mut().zip(chunk).for_each(|(s, x)| *s += x);
                    }
                    acc(row, gr);
                    acc(a, g);
                }
                &Op::MulRow { a, row } => {
                    let cols = y.cols();
                    let (av, rv) = (val(a).data(), val(row).data());
                    let mut gr = vec![0.0; cols];
                    let mut ga = vec![0.0; g.len()];
                    for (i, (gi, ai)) in g.iter().zip(av).enumerate() {
                        let c = i % cols;
                        gr[c] += gi * ai;
                        ga[i] = gi * rv[c];
                    }
                    acc(row, gr);
                    acc(a, ga);
                }
                &Op::MulCol { a, col } => {
                    let cols = y.cols();
                    let (av, cv) = (val(a).data(), val(col).data());
                    let mut gc = vec![0.0; y.rows()];
                    let mut ga = vec![0.0; g.len()];
                    for (i, (gi, ai)) in g.iter().zip(av).enumerate() {
                        let r = i / cols;
                        gc[r] += gi * ai;
                        ga[i] = gi * cv[r];
                    }
                    acc(col, gc);
                    acc(a, ga);
                }
                &Op::Affine { a, scale } => acc(a, g.iter().map(|x| x * scale).collect()),
                &Op::Transpose(a) => {
                    let gt = Tensor::new(y.rows(), y.cols(), g)?;
                    acc(a, gt.transpose().into_data());
                }
                Op::ConcatCols(parts) => {
                    let rows = y.rows();
                    let total = y.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let pc = val(p).cols();
                        let mut gp = Vec::with_capacity(rows * pc);
                        for r in 0..rows {
                            gp.extend_from_slice(&g[r * total + offset..r * total + offset + pc]);
                        }
                        acc(p, gp);
                        offset += pc;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = val(p).len();
                        acc(p, g[offset..offset + n].to_vec());
                        offset += n;
                    }
                }
                &Op::SliceCols { a, start } => {
                    let src = val(a);
                    let mut ga = vec![0.0; src.len()];
                    let w = y.cols();
                    for r in 0..y.rows() {
                        ga[r * src.cols() + start..r * src.cols() + start + w]
                            .copy_from_slice(&g[r * w..(r + 1) * w]);
                    }
                    acc(a, ga);
                }
                &Op::SliceRows { a, start } => {
                    let src = val(a);
                    let mut ga = vec![0.0; src.len()];
                    let from = start * src.cols();
                    ga[from..from + g.len()].copy_from_slice(&g);
                    acc(a, ga);
                }
                &Op::Sigmoid(a) => acc(
                    a,
                    g.iter()
                        .zip(y.data())
                        .map(|(g, y)| g * y * (1.0 - y))
                        .collect(),
                ),
                &Op::Tanh(a) => acc(
                    a,
                    g.iter()
                        .zip(y.data())
                        .map(|(g, y)| g * (1.0 - y * y))
                        .collect(),
                ),
                &Op::Relu(a) => acc(
                    a,
                    g.iter()
                        .zip(val(a).data())
                        .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                        .collect(),
                ),
                &Op::LeakyRelu { a, slope } => acc(
                    a,
                    g.iter()
                        .zip(val(a).data())
                        .map(|(g, x)| if *x > 0.0 { *g } else { g * slope })
                        .collect(),
                ),
                &Op::Exp(a) => acc(a, g.iter().zip(y.data()).map(|(g, y)| g * y).collect()),
                &Op::Log(a) => acc(
                    a,
                    g.iter().zip(val(a).data()).map(|(g, x)| g / x).collect(),
                ),
                &Op::Clamp { a, lo, hi } => acc(
                    a,
                    g.iter()
                        .zip(val(a).data())
                        .map(|(g, x)| if *x >= lo && *x <= hi { *g } else { 0.0 })
                        .collect(),
                ),
                &Op::SoftmaxRows(a) => {
                    let cols = y.cols().max(1);
                    let mut ga = vec![0.0; g.len()];
                    for ((gr, yr), out) in g
                        .chunks(cols)
                        .zip(y.data().chunks(cols))
                        .zip(ga.chunks_mut(cols))
                    {
                        softmax_backward(gr, yr, out);
                    }
                    acc(a, ga);
                }
                Op::SegmentSoftmax { a, offsets } => {
                    let mut ga = vec![0.0; g.len()];
                    for w in offsets.windows(2) {
                        let (s, e) = (w[0], w[1]);
                        softmax_backward(&g[s..e], &y.data()[s..e], &mut ga[s..e]);
                    }
                    acc(*a, ga);
                }
                Op::SegmentSum { a, offsets } => {
                    let cols = y.cols();
                    let mut ga = vec![0.0; val(*a).len()];
                    for (seg, w) in offsets.windows(2).enumerate() {
                        let grow = &g[seg * cols..(seg + 1) * cols];
                        for r in w[0]..w[1] {
                            ga[r * cols..(r + 1) * cols].copy_from_slice(grow);
                        }
                    }
                    acc(*a, ga);
                }
                Op::GatherRows { a, index } => {
                    let cols = y.cols();
                    let mut ga = vec![0.0; val(*a).len()];
                    for (r, &src) in index.iter().enumerate() {
                        let dst = &mut ga[src * cols..(src + 1) * cols];
                        dst.iter_mut()
                            .zip(&g[r * cols..(r + 1) * cols])
                            .for_each(|(d, x)| *d += x);
                    }
                    acc(*a, ga);
                }
                &Op::MeanRows(a) => {
                    let src = val(a);
                    let n = src.rows() as f64;
                    let mut ga = Vec::with_capacity(src.len());
                    for _ in 0..src.rows() {
                        ga.extend(g.iter().map(|x| x / n));
                    }
                    acc(a, ga);
                }
                &Op::SumAll(a) => acc(a, vec![g[0]; val(a).len()]),
            }
        }
        Ok(out)
    }
}

fn softmax_backward(g: &[f64], y: &[f64], out: &mut [f64]) {
    let dot: f64 = g.iter().zip(y).map(|(g, y)| g * y).sum();
    for ((o, g), y) in out.iter_mut().zip(g).zip(y) {
        *o = y * (g - dot);
    }
}

fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

fn check_offsets(offsets: &[usize], rows: usize, op: &'static str) -> Result<()> {
    let ok = offsets.first() == Some(&0)
        && offsets.last() == Some(&rows)
        && offsets.windows(2).all(|w| w[0] <= w[1]);
    if ok {
        Ok(())
    } else {
        Err(Error::Contract(format!(
            "{op}: segment offsets must run from 0 to {rows} without decreasing"
        )))
    }
}

impl<'t> Var<'t> {
    pub fn id(self) -> usize {
        self.id
    }

    pub fn tape(self) -> &'t Tape {
        self.tape
    }

    /// Copy of the current value.
    pub fn value(self) -> Tensor {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn with_value<R>(self, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn shape(self) -> [usize; 2] {
        self.with_value(Tensor::shape)
    }

    pub fn scalar(self) -> f64 {
        self.with_value(|t| t.data()[0])
    }

    fn same_tape(self, other: Var<'_>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "vars recorded on different tapes"
        );
    }

    fn unary(self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let value = self.with_value(|t| {
            Tensor::new(t.rows(), t.cols(), t.data().iter().map(|&x| f(x)).collect())
                .expect("shape preserved")
        });
        let rg = self.tape.requires(&[self.id]);
        self.tape.push(value, op, rg)
    }

    fn binary(
        self,
        other: Var<'t>,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>> {
        self.same_tape(other);
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            if a.shape() != b.shape() {
                return Err(Error::Dimension {
                    op: name,
                    lhs: a.shape(),
                    rhs: b.shape(),
                });
            }
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(a.rows(), a.cols(), data)?
        };
        let rg = self.tape.requires(&[self.id, other.id]);
        Ok(self.tape.push(value, op, rg))
    }

    /// General product `op(self) @ op(other)`, `op` transposing when the flag is set.
    pub fn matmul_ex(self, other: Var<'t>, ta: bool, tb: bool) -> Result<Var<'t>> {
        self.same_tape(other);
        let value = {
            let nodes = self.tape.nodes.borrow();
            gemm(&nodes[self.id].value, ta, &nodes[other.id].value, tb)?
        };
        let rg = self.tape.requires(&[self.id, other.id]);
        Ok(self.tape.push(
            value,
            Op::MatMul {
                a: self.id,
                b: other.id,
                ta,
                tb,
            },
            rg,
        ))
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.matmul_ex(other, false, false)
    }

    /// `self @ otherᵀ`, i.e. a linear map with weight `other` stored as `out × in`.
    pub fn linear(self, weight: Var<'t>) -> Result<Var<'t>> {
        self.matmul_ex(weight, false, true)
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    /// Element-wise product.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "div", Op::Div(self.id, other.id), |a, b| a / b)
    }

    fn broadcast(
        self,
        other: Var<'t>,
        name: &'static str,
        by_row: bool,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>> {
        self.same_tape(other);
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            let ok = if by_row {
                b.shape() == [1, a.cols()]
            } else {
                b.shape() == [a.rows(), 1]
            };
            if !ok {
                return Err(Error::Dimension {
                    op: name,
                    lhs: a.shape(),
                    rhs: b.shape(),
                });
            }
            let cols = a.cols();
            let data = a
                .data()
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    let y = if by_row { b.data()[i % cols] } else { b.data()[i / cols] };
                    f(x, y)
                })
                .collect();
            Tensor::new(a.rows(), a.cols(), data)?
        };
        let rg = self.tape.requires(&[self.id, other.id]);
        Ok(self.tape.push(value, op, rg))
    }

    /// Adds a `1 × cols` row to every row.
    pub fn add_row(self, row: Var<'t>) -> Result<Var<'t>> {
        let op = Op::AddRow {
            a: self.id,
            row: row.id,
        };
        self.broadcast(row, "add_row", true, op, |a, b| a + b)
    }

    /// Multiplies every row element-wise by a `1 × cols` row.
    pub fn mul_row(self, row: Var<'t>) -> Result<Var<'t>> {
        let op = Op::MulRow {
            a: self.id,
            row: row.id,
        };
        self.broadcast(row, "mul_row", true, op, |a, b| a * b)
    }

    /// Scales row `i` by entry `i` of a `rows × 1` column.
    pub fn mul_col(self, col: Var<'t>) -> Result<Var<'t>> {
        let op = Op::MulCol {
            a: self.id,
            col: col.id,
        };
        self.broadcast(col, "mul_col", false, op, |a, b| a * b)
    }

    /// `scale * self + shift`.
    pub fn affine(self, scale: f64, shift: f64) -> Var<'t> {
        self.unary(Op::Affine { a: self.id, scale }, move |x| scale * x + shift)
    }

    pub fn scale(self, scale: f64) -> Var<'t> {
        self.affine(scale, 0.0)
    }

    /// `1 - self`.
    pub fn one_minus(self) -> Var<'t> {
        self.affine(-1.0, 1.0)
    }

    pub fn t(self) -> Var<'t> {
        let value = self.with_value(Tensor::transpose);
        let rg = self.tape.requires(&[self.id]);
        self.tape.push(value, Op::Transpose(self.id), rg)
    }

    /// Horizontal concatenation (the `[a ; b]` of column vectors, laid out as rows here).
    pub fn concat_cols(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat of nothing".into()))?;
        let tape = first.tape;
        let value = {
            let nodes = tape.nodes.borrow();
            let rows = nodes[first.id].value.rows();
            let mut cols = 0;
            for p in parts {
                first.same_tape(*p);
                let v = &nodes[p.id].value;
                if v.rows() != rows {
                    return Err(Error::Dimension {
                        op: "concat_cols",
                        lhs: nodes[first.id].value.shape(),
                        rhs: v.shape(),
                    });
                }
                cols += v.cols();
            }
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for p in parts {
                    data.extend_from_slice(nodes[p.id].value.row(r));
                }
            }
            Tensor::new(rows, cols, data)?
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let rg = tape.requires(&ids);
        Ok(tape.push(value, Op::ConcatCols(ids), rg))
    }

    /// Vertical stacking.
    pub fn concat_rows(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat of nothing".into()))?;
        let tape = first.tape;
        let value = {
            let nodes = tape.nodes.borrow();
            let cols = nodes[first.id].value.cols();
            let mut data = Vec::new();
            let mut rows = 0;
            for p in parts {
                first.same_tape(*p);
                let v = &nodes[p.id].value;
                if v.cols() != cols {
                    return Err(Error::Dimension {
                        op: "concat_rows",
                        lhs: nodes[first.id].value.shape(),
                        rhs: v.shape(),
                    });
                }
                rows += v.rows();
                data.extend_from_slice(v.data());
            }
            Tensor::new(rows, cols, data)?
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let rg = tape.requires(&ids);
        Ok(tape.push(value, Op::ConcatRows(ids), rg))
    }

    pub fn slice_cols(self, start: usize, width: usize) -> Result<Var<'t>> {
        let value = self.with_value(|t| {
            if start + width > t.cols() {
                return Err(Error::Dimension {
                    op: "slice_cols",
                    lhs: t.shape(),
                    rhs: [start, width],
                });
            }
            let mut data = Vec::with_capacity(t.rows() * width);
            for r in 0..t.rows() {
                data.extend_from_slice(&t.row(r)[start..start + width]);
            }
            Tensor::new(t.rows(), width, data)
        })?;
        let rg = self.tape.requires(&[self.id]);
        Ok(self.tape.push(value, Op::SliceCols { a: self.id, start }, rg))
    }

    pub fn slice_rows(self, start: usize, height: usize) -> Result<Var<'t>> {
        let value = self.with_value(|t| {
            if start + height > t.rows() {
                return Err(Error::Dimension {
                    op: "slice_rows",
                    lhs: t.shape(),
                    rhs: [start, height],
                });
            }
            let c = t.cols();
            Tensor::new(height, c, t.data()[start * c..(start + height) * c].to_vec())
        })?;
        let rg = self.tape.requires(&[self.id]);
        Ok(self.tape.push(value, Op::SliceRows { a: self.id, start }, rg))
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), |x| 1.0 / (1.0 + (-x).exp()))
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(Op::Tanh(self.id), f64::tanh)
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'t> {
        self.unary(Op::LeakyRelu { a: self.id, slope }, move |x| {
            if x > 0.0 {
                x
            } else {
                slope * x
            }
        })
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Op::Exp(self.id), f64::exp)
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(Op::Log(self.id), f64::ln)
    }

    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        self.unary(Op::Clamp { a: self.id, lo, hi }, move |x| x.clamp(lo, hi))
    }

    /// Numerically stable softmax over each row.
    pub fn softmax_rows(self) -> Var<'t> {
        let value = self.with_value(|t| {
            let mut out = t.clone();
            let cols = t.cols().max(1);
            out.data_mut().chunks_mut(cols).for_each(softmax_in_place);
            out
        });
        let rg = self.tape.requires(&[self.id]);
        self.tape.push(value, Op::SoftmaxRows(self.id), rg)
    }

    /// Softmax of an `n × 1` column within contiguous segments
    /// `offsets[k]..offsets[k + 1]`.
    pub fn segment_softmax(self, offsets: Arc<[usize]>) -> Result<Var<'t>> {
        let value = self.with_value(|t| {
            if t.cols() != 1 {
                return Err(Error::Dimension {
                    op: "segment_softmax",
                    lhs: t.shape(),
                    rhs: [t.rows(), 1],
                });
            }
            check_offsets(&offsets, t.rows(), "segment_softmax")?;
            let mut out = t.clone();
            for w in offsets.windows(2) {
                softmax_in_place(&mut out.data_mut()[w[0]..w[1]]);
            }
            Ok(out)
        })?;
        let rg = self.tape.requires(&[self.id]);
        Ok(self.tape.push(
            value,
            Op::SegmentSoftmax {
                a: self.id,
                offsets,
            },
            rg,
        ))
    }

    /// Sums the rows of each segment; empty segments give zero rows.
    pub fn segment_sum(self, offsets: Arc<[usize]>) -> Result<Var<'t>> {
        let value = self.with_value(|t| {
            check_offsets(&offsets, t.rows(), "segment_sum")?;
            let cols = t.cols();
            let segments = offsets.len() - 1;
            let mut data = vec![0.0; segments * cols];
            for (seg, w) in offsets.windows(2).enumerate() {
                let dst = &mut data[seg * cols..(seg + 1) * cols];
                for r in w[0]..w[1] {
                    dst.iter_mut().zip(t.row(r)).for_each(|(d, x)| *d += x);
                }
            }
            Tensor::new(segments, cols, data)
        })?;
        let rg = self.tape.requires(&[self.id]);
        Ok(self.tape.push(
            value,
            Op::SegmentSum {
                a: self.id,
                offsets,
            },
            rg,
        ))
    }

    /// Row lookup (embedding lookup): output row `r` is input row `index[r]`.
    pub fn gather_rows(self, index: Arc<[usize]>) -> Result<Var<'t>> {
        let value = self.with_value(|t| {
            let cols = t.cols();
            let mut data = Vec::with_capacity(index.len() * cols);
            for &i in index.iter() {
                if i >= t.rows() {
                    return Err(Error::Domain(format!(
                        "row {i} out of range for {} rows",
                        t.rows()
                    )));
                }
                data.extend_from_slice(t.row(i));
            }
            Tensor::new(index.len(), cols, data)
        })?;
        let rg = self.tape.requires(&[self.id]);
        Ok(self
            .tape
            .push(value, Op::GatherRows { a: self.id, index }, rg))
    }

    /// Column means as a `1 × cols` row.
    pub fn mean_rows(self) -> Result<Var<'t>> {
        let value = self.with_value(|t| {
            if t.rows() == 0 {
                return Err(Error::Contract("mean over zero rows".into()));
            }
            let mut out = vec![0.0; t.cols()];
            for r in 0..t.rows() {
                out.iter_mut().zip(t.row(r)).for_each(|(o, x)| *o += x);
            }
            let n = t.rows() as f64;
            out.iter_mut().for_each(|o| *o /= n);
            Ok(Tensor::row_vector(out))
        })?;
        let rg = self.tape.requires(&[self.id]);
        Ok(self.tape.push(value, Op::MeanRows(self.id), rg))
    }

    pub fn sum_all(self) -> Var<'t> {
        let value = self.with_value(|t| Tensor::scalar(t.sum()));
        let rg = self.tape.requires(&[self.id]);
        self.tape.push(value, Op::SumAll(self.id), rg)
    }
}
