//! Recorded forward passes and reverse-mode gradients.
//!
//! A [`Tape`] is built fresh for each forward pass. Every primitive appends a
//! node holding its output value, so node order is a topological order and
//! [`Tape::backward`] is a single reverse sweep. Parameter leaves remember the
//! name they were read from; their gradients are added to the matching
//! [`ParamStore`] slots.

use std::ops::Range;
use std::sync::Arc;

use super::matrix::gemm_slices;
use super::{Axis, Matrix, ParamStore};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    Scale(usize, f64),
    AddScalar(usize, f64),
    Tanh(usize),
    Sigmoid(usize),
    Relu(usize),
    Abs(usize),
    Concat(usize, usize, Axis),
    SliceCols(usize, Range<usize>),
    GatherRows(usize, Arc<[usize]>),
    MeanRows(usize),
    BlockMeanRows(usize, usize),
    Propagate(Arc<Matrix>, usize),
    BatchNorm(usize, f64),
    Sum(usize),
    SumSquares(usize),
}

impl Op {
    fn tag(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Relu(..) => "relu",
            Op::Abs(..) => "abs",
            Op::Concat(..) => "concat",
            Op::SliceCols(..) => "slice_cols",
            Op::GatherRows(..) => "gather_rows",
            Op::MeanRows(..) => "mean_over_rows",
            Op::BlockMeanRows(..) => "block_mean_rows",
            Op::Propagate(..) => "propagate",
            Op::BatchNorm(..) => "batch_norm",
            Op::Sum(..) => "sum",
            Op::SumSquares(..) => "sum_squares",
        }
    }
}

struct Node {
    value: Matrix,
    op: Op,
    param: Option<String>,
    /// Per-op intermediates needed by backward (batch-norm inverse std).
    cache: Option<Matrix>,
}

/// Record of one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients for every node reached by a backward sweep.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn shape_err(op: &'static str, a: &Matrix, b: &Matrix) -> Error {
    Error::Shape {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn column_sums(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, m.cols());
    for r in 0..m.rows() {
        for (o, v) in out.as_mut_slice().iter_mut().zip(m.row(r)) {
            *o += v;
        }
    }
    out
}

fn broadcast_row(x: &Matrix, row: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let mut out = x.clone();
    for r in 0..out.rows() {
        for (o, b) in out.row_mut(r).iter_mut().zip(row.as_slice()) {
            *o = f(*o, *b);
        }
    }
    out
}

/// Validates an op against its input values and computes its output.
fn compute(op: &Op, nodes: &[Node]) -> Result<(Matrix, Option<Matrix>)> {
    let v = |i: usize| &nodes[i].value;
    let out = match op {
        Op::Leaf => return Err(Error::Internal("leaf has no computation".into())),
        Op::MatMul(a, b) => v(*a).matmul(v(*b))?,
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
            let (x, y) = (v(*a), v(*b));
            if x.shape() != y.shape() {
                return Err(shape_err(op.tag(), x, y));
            }
            match op {
                Op::Add(..) => x.zip_map(y, |p, q| p + q),
                Op::Sub(..) => x.zip_map(y, |p, q| p - q),
                _ => x.zip_map(y, |p, q| p * q),
            }
        }
        Op::AddRow(a, b) | Op::MulRow(a, b) => {
            let (x, row) = (v(*a), v(*b));
            if row.rows() != 1 || row.cols() != x.cols() {
                return Err(shape_err(op.tag(), x, row));
            }
            if matches!(op, Op::AddRow(..)) {
                broadcast_row(x, row, |p, q| p + q)
            } else {
                broadcast_row(x, row, |p, q| p * q)
            }
        }
        Op::Scale(a, c) => v(*a).map(|x| x * c),
        Op::AddScalar(a, c) => v(*a).map(|x| x + c),
        Op::Tanh(a) => v(*a).map(f64::tanh),
        Op::Sigmoid(a) => v(*a).map(sigmoid),
        Op::Relu(a) => v(*a).map(|x| if x > 0.0 { x } else { 0.0 }),
        Op::Abs(a) => v(*a).map(f64::abs),
        Op::Concat(a, b, axis) => Matrix::concat(v(*a), v(*b), *axis)?,
        Op::SliceCols(a, range) => {
            let x = v(*a);
            if range.end > x.cols() || range.start >= range.end {
                return Err(Error::Shape {
                    op: "slice_cols",
                    left: x.shape(),
                    right: (range.start, range.end),
                });
            }
            x.slice_cols(range.clone())
        }
        Op::GatherRows(a, idx) => {
            let x = v(*a);
            if let Some(&bad) = idx.iter().find(|&&i| i >= x.rows()) {
                return Err(Error::Shape {
                    op: "gather_rows",
                    left: x.shape(),
                    right: (bad, 0),
                });
            }
            x.gather_rows(idx)
        }
        Op::MeanRows(a) => v(*a).mean_over_rows()?,
        Op::BlockMeanRows(a, block) => {
            let x = v(*a);
            if *block == 0 || x.rows() == 0 || x.rows() % block != 0 {
                return Err(Error::Shape {
                    op: "block_mean_rows",
                    left: x.shape(),
                    right: (*block, x.cols()),
                });
            }
            let blocks = x.rows() / block;
            let mut out = Matrix::zeros(blocks, x.cols());
            for r in 0..x.rows() {
                let b = r / block;
                for (o, val) in out.row_mut(b).iter_mut().zip(x.row(r)) {
                    *o += val;
                }
            }
            out.scale_in_place(1.0 / *block as f64);
            out
        }
        Op::Propagate(adj, a) => {
            let x = v(*a);
            let n = adj.rows();
            if adj.cols() != n || n == 0 || x.rows() % n != 0 {
                return Err(shape_err("propagate", adj, x));
            }
            let mut out = Matrix::zeros(x.rows(), x.cols());
            let width = x.cols();
            for b in 0..x.rows() / n {
                let span = b * n * width..(b + 1) * n * width;
                gemm_slices(
                    (n, n, width),
                    (adj.as_slice(), n as isize, 1),
                    (&x.as_slice()[span.clone()], width as isize, 1),
                    &mut out.as_mut_slice()[span],
                );
            }
            out
        }
        Op::BatchNorm(a, eps) => {
            let x = v(*a);
            if x.rows() == 0 {
                return Err(shape_err("batch_norm", x, x));
            }
            let n = x.rows() as f64;
            let mut mean = column_sums(x);
            mean.scale_in_place(1.0 / n);
            let mut var = Matrix::zeros(1, x.cols());
            for r in 0..x.rows() {
                for ((s, xv), m) in var.as_mut_slice().iter_mut().zip(x.row(r)).zip(mean.as_slice()) {
                    *s += (xv - m) * (xv - m);
                }
            }
            let inv_std = var.map(|s| 1.0 / (s / n + eps).sqrt());
            let mut out = x.clone();
            for r in 0..out.rows() {
                for ((o, m), is) in out
                    .row_mut(r)
                    .iter_mut()
                    .zip(mean.as_slice())
                    .zip(inv_std.as_slice())
                {
                    *o = (*o - m) * is;
                }
            }
            return Ok((out, Some(inv_std)));
        }
        Op::Sum(a) => Matrix::scalar(v(*a).sum()),
        Op::SumSquares(a) => Matrix::scalar(v(*a).sum_squares()),
    };
    Ok((out, None))
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Op tag of a node, for diagnostics.
    pub fn op_tag(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.tag()
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            param: None,
            cache: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reads a parameter from `store` as a gradient-tracked leaf.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let value = store.value(name)?.clone();
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            param: Some(name.to_owned()),
            cache: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn push(&mut self, op: Op) -> Result<Var> {
        let (value, cache) = compute(&op, &self.nodes)?;
        self.nodes.push(Node {
            value,
            op,
            param: None,
            cache,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn push_infallible(&mut self, op: Op) -> Var {
        self.push(op).expect("elementwise op cannot fail")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::MatMul(a.0, b.0))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Sub(a.0, b.0))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Mul(a.0, b.0))
    }

    /// Adds a `1×c` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.push(Op::AddRow(x.0, row.0))
    }

    /// Multiplies every row of `x` elementwise by a `1×c` row.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.push(Op::MulRow(x.0, row.0))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        self.push_infallible(Op::Scale(x.0, factor))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.push_infallible(Op::AddScalar(x.0, c))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.push_infallible(Op::Tanh(x.0))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.push_infallible(Op::Sigmoid(x.0))
    }

    /// `max(0, x)`; the derivative at 0 is taken as 0.
    pub fn relu(&mut self, x: Var) -> Var {
        self.push_infallible(Op::Relu(x.0))
    }

    /// `|x|`; the derivative at 0 is taken as 0.
    pub fn abs(&mut self, x: Var) -> Var {
        self.push_infallible(Op::Abs(x.0))
    }

    pub fn concat(&mut self, a: Var, b: Var, axis: Axis) -> Result<Var> {
        self.push(Op::Concat(a.0, b.0, axis))
    }

    pub fn slice_cols(&mut self, x: Var, range: Range<usize>) -> Result<Var> {
        self.push(Op::SliceCols(x.0, range))
    }

    pub fn gather_rows(&mut self, x: Var, indices: impl Into<Arc<[usize]>>) -> Result<Var> {
        self.push(Op::GatherRows(x.0, indices.into()))
    }

    pub fn mean_over_rows(&mut self, x: Var) -> Result<Var> {
        self.push(Op::MeanRows(x.0))
    }

    /// Mean over each consecutive group of `block` rows.
    pub fn block_mean_rows(&mut self, x: Var, block: usize) -> Result<Var> {
        self.push(Op::BlockMeanRows(x.0, block))
    }

    /// Left-multiplies each consecutive `n`-row block of `x` by the constant
    /// `n×n` matrix `adj` (block-diagonal product).
    pub fn propagate(&mut self, adj: Arc<Matrix>, x: Var) -> Result<Var> {
        self.push(Op::Propagate(adj, x.0))
    }

    /// Column-wise standardization with batch statistics (biased variance).
    pub fn batch_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        self.push(Op::BatchNorm(x.0, eps))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        self.push_infallible(Op::Sum(x.0))
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        self.push_infallible(Op::SumSquares(x.0))
    }

    /// Recomputes every node from the recorded leaves.
    pub fn replay(&self) -> Result<Vec<Matrix>> {
        let mut scratch: Vec<Node> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let value = match node.op {
                Op::Leaf => node.value.clone(),
                _ => compute(&node.op, &scratch)?.0,
            };
            scratch.push(Node {
                value,
                op: node.op.clone(),
                param: None,
                cache: None,
            });
        }
        Ok(scratch.into_iter().map(|n| n.value).collect())
    }

    /// Propagates `seed` (shaped like `output`) back through the record.
    ///
    /// Parameter leaves have their gradients added to `params`; nothing is
    /// zeroed here. The returned table holds the gradient of every node that
    /// the sweep reached, including constants.
    pub fn backward(&self, output: Var, seed: &Matrix, params: &mut ParamStore) -> Result<Gradients> {
        let out_shape = self.nodes[output.0].value.shape();
        if seed.shape() != out_shape {
            return Err(Error::Shape {
                op: "backward seed",
                left: out_shape,
                right: seed.shape(),
            });
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed.clone());

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.backward_node(idx, node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        for (idx, node) in self.nodes.iter().enumerate().take(output.0 + 1) {
            if let (Some(name), Some(g)) = (&node.param, &grads[idx]) {
                params.accumulate_grad(name, g)?;
            }
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, idx: usize, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        let val = |i: usize| &self.nodes[i].value;
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let mut da = Matrix::zeros(av.rows(), av.cols());
                super::matrix::gemm(g, false, bv, true, &mut da);
                let mut db = Matrix::zeros(bv.rows(), bv.cols());
                super::matrix::gemm(av, true, g, false, &mut db);
                acc(grads, *a, da);
                acc(grads, *b, db);
            }
            Op::Add(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                acc(grads, *a, g.zip_map(val(*b), |p, q| p * q));
                acc(grads, *b, g.zip_map(val(*a), |p, q| p * q));
            }
            Op::AddRow(x, row) => {
                acc(grads, *x, g.clone());
                acc(grads, *row, column_sums(g));
            }
            Op::MulRow(x, row) => {
                acc(grads, *x, broadcast_row(g, val(*row), |p, q| p * q));
                acc(grads, *row, column_sums(&g.zip_map(val(*x), |p, q| p * q)));
            }
            Op::Scale(x, c) => acc(grads, *x, g.map(|v| v * c)),
            Op::AddScalar(x, _) => acc(grads, *x, g.clone()),
            Op::Tanh(x) => acc(grads, *x, g.zip_map(y, |gv, t| gv * (1.0 - t * t))),
            Op::Sigmoid(x) => acc(grads, *x, g.zip_map(y, |gv, s| gv * s * (1.0 - s))),
            Op::Relu(x) => acc(
                grads,
                *x,
                g.zip_map(val(*x), |gv, xv| if xv > 0.0 { gv } else { 0.0 }),
            ),
            Op::Abs(x) => acc(
                grads,
                *x,
                g.zip_map(val(*x), |gv, xv| {
                    if xv > 0.0 {
                        gv
                    } else if xv < 0.0 {
                        -gv
                    } else {
                        0.0
                    }
                }),
            ),
            Op::Concat(a, b, axis) => {
                let av = val(*a);
                match axis {
                    Axis::Rows => {
                        acc(grads, *a, g.slice_rows(0..av.rows()));
                        acc(grads, *b, g.slice_rows(av.rows()..g.rows()));
                    }
                    Axis::Cols => {
                        acc(grads, *a, g.slice_cols(0..av.cols()));
                        acc(grads, *b, g.slice_cols(av.cols()..g.cols()));
                    }
                }
            }
            Op::SliceCols(x, range) => {
                let xv = val(*x);
                let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                for r in 0..g.rows() {
                    dx.row_mut(r)[range.clone()].copy_from_slice(g.row(r));
                }
                acc(grads, *x, dx);
            }
            Op::GatherRows(x, indices) => {
                let xv = val(*x);
                let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                for (r, &src) in indices.iter().enumerate() {
                    for (d, gv) in dx.row_mut(src).iter_mut().zip(g.row(r)) {
                        *d += gv;
                    }
                }
                acc(grads, *x, dx);
            }
            Op::MeanRows(x) => {
                let xv = val(*x);
                let scale = 1.0 / xv.rows() as f64;
                let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                for r in 0..xv.rows() {
                    for (d, gv) in dx.row_mut(r).iter_mut().zip(g.row(0)) {
                        *d = gv * scale;
                    }
                }
                acc(grads, *x, dx);
            }
            Op::BlockMeanRows(x, block) => {
                let xv = val(*x);
                let scale = 1.0 / *block as f64;
                let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                for r in 0..xv.rows() {
                    for (d, gv) in dx.row_mut(r).iter_mut().zip(g.row(r / block)) {
                        *d = gv * scale;
                    }
                }
                acc(grads, *x, dx);
            }
            Op::Propagate(adj, x) => {
                let n = adj.rows();
                let width = g.cols();
                let mut dx = Matrix::zeros(g.rows(), width);
                for b in 0..g.rows() / n {
                    let span = b * n * width..(b + 1) * n * width;
                    gemm_slices(
                        (n, n, width),
                        (adj.as_slice(), 1, n as isize),
                        (&g.as_slice()[span.clone()], width as isize, 1),
                        &mut dx.as_mut_slice()[span],
                    );
                }
                acc(grads, *x, dx);
            }
            Op::BatchNorm(x, _) => {
                let inv_std = node
                    .cache
                    .as_ref()
                    .ok_or_else(|| Error::Internal(format!("batch_norm node {idx} lost its cache")))?;
                let n = g.rows() as f64;
                let sum_g = column_sums(g);
                let sum_gy = column_sums(&g.zip_map(y, |p, q| p * q));
                let mut dx = Matrix::zeros(g.rows(), g.cols());
                for r in 0..g.rows() {
                    let (gr, yr) = (g.row(r), y.row(r));
                    for (c, d) in dx.row_mut(r).iter_mut().enumerate() {
                        *d = inv_std.as_slice()[c] / n
                            * (n * gr[c] - sum_g.as_slice()[c] - yr[c] * sum_gy.as_slice()[c]);
                    }
                }
                acc(grads, *x, dx);
            }
            Op::Sum(x) => {
                let xv = val(*x);
                acc(grads, *x, Matrix::filled(xv.rows(), xv.cols(), g.item()));
            }
            Op::SumSquares(x) => {
                let s = 2.0 * g.item();
                acc(grads, *x, val(*x).map(|v| v * s));
            }
        }
        Ok(())
    }
}

fn acc(grads: &mut [Option<Matrix>], idx: usize, g: Matrix) {
    match &mut grads[idx] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
