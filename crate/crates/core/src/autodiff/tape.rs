//! Reverse-mode tape.
//!
//! Every operation appends one node holding its output value. `backward`
//! walks the nodes in exact reverse order and accumulates gradients into a
//! separate [`Gradients`] table, so the tape itself is never mutated by it.

use std::rc::Rc;

use super::tensor::{matmul, matmul_nt, matmul_tn, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for an operation defined outside this module.
pub trait CustomOp {
    fn name(&self) -> &'static str;

    /// Gradients with respect to each input, in input order.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &Tensor) -> Vec<Tensor>;
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    SumAll(Var),
    Relu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    Reshape(Var),
    Gather(Var, Rc<[usize]>),
    SegmentSum(Var, Rc<[usize]>),
    Custom(Vec<Var>, Box<dyn CustomOp>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradient table produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of `shape` when `v` did not influence the loss.
    pub fn get_or_zeros(&self, v: Var, shape: [usize; 2]) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape[0], shape[1]))
    }
}

fn shape_err(op: &'static str, expected: String, actual: String) -> Error {
    Error::Shape {
        op,
        expected,
        actual,
    }
}

fn dims(t: &Tensor) -> String {
    format!("{}x{}", t.rows(), t.cols())
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

    /// Drop all recorded nodes.
    pub fn reset(&mut self) {
        self.nodes.clear();
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf without gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return Err(shape_err(
                "matmul",
                format!("rhs with {} rows", av.cols()),
                dims(bv),
            ));
        }
        let out = matmul(av, bv);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("add", dims(av), dims(bv)));
        }
        let mut out = av.clone();
        out.add_assign(bv);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("mul", dims(av), dims(bv)));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::from_vec(av.rows(), av.cols(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// `a + 1·row`, broadcasting a `1×k` row over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.rows() != 1 || rv.cols() != av.cols() {
            return Err(shape_err("add_row", format!("1x{}", av.cols()), dims(rv)));
        }
        let mut out = av.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(rv.data()) {
                *o += b;
            }
        }
        let rg = self.rg(&[a, row]);
        Ok(self.push(out, Op::AddRow(a, row), rg))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|v| v * k);
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, k), rg)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).data().iter().sum());
        let rg = self.rg(&[a]);
        self.push(out, Op::SumAll(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(0.0));
        let rg = self.rg(&[a]);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let rg = self.rg(&[a]);
        self.push(out, Op::Sigmoid(a), rg)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        let rg = self.rg(&[a]);
        self.push(out, Op::SoftmaxRows(a), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|v| self.value(*v).rows())
            .ok_or_else(|| shape_err("concat_cols", "at least one input".into(), "none".into()))?;
        if let Some(bad) = parts.iter().find(|v| self.value(**v).rows() != rows) {
            return Err(shape_err(
                "concat_cols",
                format!("{rows} rows"),
                dims(self.value(*bad)),
            ));
        }
        let cols: usize = parts.iter().map(|v| self.value(*v).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let orow = out.row_mut(r);
            let mut c0 = 0;
            for v in parts {
                let src = self.nodes[v.0].value.row(r);
                orow[c0..c0 + src.len()].copy_from_slice(src);
                c0 += src.len();
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Rows `start..start + len` of `a`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        if start + len > av.rows() {
            return Err(shape_err(
                "slice_rows",
                format!("at least {} rows", start + len),
                dims(av),
            ));
        }
        let c = av.cols();
        let out = Tensor::from_vec(len, c, av.data()[start * c..(start + len) * c].to_vec())?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::SliceRows(a, start), rg))
    }

    /// Same row-major data viewed as `rows × cols`.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let av = self.value(a);
        if rows * cols != av.len() {
            return Err(shape_err("reshape", format!("{} elements", rows * cols), dims(av)));
        }
        let out = Tensor::from_vec(rows, cols, av.data().to_vec())?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    /// `out[k] = a[index[k]]`.
    pub fn gather_rows(&mut self, a: Var, index: Rc<[usize]>) -> Result<Var> {
        let av = self.value(a);
        if let Some(&bad) = index.iter().find(|&&k| k >= av.rows()) {
            return Err(Error::Index {
                index: bad,
                len: av.rows(),
            });
        }
        let c = av.cols();
        let mut out = Tensor::zeros(index.len(), c);
        for (k, &src) in index.iter().enumerate() {
            out.row_mut(k).copy_from_slice(av.row(src));
        }
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Gather(a, index), rg))
    }

    /// `out[s] = Σ_{k : index[k] = s} a[k]` for `s < n_segments`; rows are
    /// accumulated in ascending `k`.
    pub fn segment_sum(&mut self, a: Var, index: Rc<[usize]>, n_segments: usize) -> Result<Var> {
        let av = self.value(a);
        if index.len() != av.rows() {
            return Err(shape_err(
                "segment_sum",
                format!("{} indices", av.rows()),
                format!("{} indices", index.len()),
            ));
        }
        if let Some(&bad) = index.iter().find(|&&s| s >= n_segments) {
            return Err(Error::Index {
                index: bad,
                len: n_segments,
            });
        }
        let out = segment_sum_values(av, &index, n_segments);
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::SegmentSum(a, index), rg))
    }

    /// Record an operation whose value was computed by the caller.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor, op: Box<dyn CustomOp>) -> Var {
        let rg = self.rg(inputs);
        self.push(value, Op::Custom(inputs.to_vec(), op), rg)
    }

    /// Gradients of a scalar `loss` with respect to every node that requires them.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| shape_err("backward", "a node on this tape".into(), format!("node {}", loss.0)))?;
        if lv.value.shape() != [1, 1] {
            return Err(shape_err("backward", "1x1 scalar loss".into(), dims(&lv.value)));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, t: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.nodes[a.0].requires_grad {
                    acc(*a, matmul_nt(g, val(*b)));
                }
                if self.nodes[b.0].requires_grad {
                    acc(*b, matmul_tn(val(*a), g));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let ga = zip_map(g, bv, |x, y| x * y);
                let gb = zip_map(g, av, |x, y| x * y);
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                let mut s = Tensor::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (o, v) in s.data_mut().iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                acc(*row, s);
            }
            Op::Scale(a, k) => acc(*a, g.map(|v| v * k)),
            Op::SumAll(a) => {
                let av = val(*a);
                acc(*a, Tensor::filled(av.rows(), av.cols(), g.item()));
            }
            Op::Relu(a) => acc(*a, zip_map(g, val(*a), |gv, x| if x > 0.0 { gv } else { 0.0 })),
            Op::Sigmoid(a) => acc(*a, zip_map(g, &node.value, |gv, y| gv * y * (1.0 - y))),
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut out = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for (o, (yv, gv)) in out.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                        *o = yv * (gv - dot);
                    }
                }
                acc(*a, out);
            }
            Op::ConcatCols(parts) => {
                let mut c0 = 0;
                for v in parts {
                    let w = val(*v).cols();
                    if self.nodes[v.0].requires_grad {
                        let mut t = Tensor::zeros(g.rows(), w);
                        for r in 0..g.rows() {
                            t.row_mut(r).copy_from_slice(&g.row(r)[c0..c0 + w]);
                        }
                        acc(*v, t);
                    }
                    c0 += w;
                }
            }
            Op::SliceRows(a, start) => {
                let av = val(*a);
                let mut t = Tensor::zeros(av.rows(), av.cols());
                let c = av.cols();
                t.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                acc(*a, t);
            }
            Op::Reshape(a) => {
                let av = val(*a);
                acc(*a, Tensor::from_vec(av.rows(), av.cols(), g.data().to_vec()).expect("same length"));
            }
            Op::Gather(a, index) => {
                let av = val(*a);
                acc(*a, segment_sum_values(g, index, av.rows()));
            }
            Op::SegmentSum(a, index) => {
                let mut t = Tensor::zeros(index.len(), g.cols());
                for (k, &s) in index.iter().enumerate() {
                    t.row_mut(k).copy_from_slice(g.row(s));
                }
                acc(*a, t);
            }
            Op::Custom(inputs, op) => {
                let ins: Vec<&Tensor> = inputs.iter().map(|v| val(*v)).collect();
                let gs = op.backward(&ins, &node.value, g);
                debug_assert_eq!(gs.len(), inputs.len(), "{} gradient count", op.name());
                for (v, t) in inputs.iter().zip(gs) {
                    acc(*v, t);
                }
            }
        }
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data).expect("matching shapes")
}

pub(crate) fn segment_sum_values(a: &Tensor, index: &[usize], n_segments: usize) -> Tensor {
    let mut out = Tensor::zeros(n_segments, a.cols());
    for (k, &s) in index.iter().enumerate() {
        for (o, v) in out.row_mut(s).iter_mut().zip(a.row(k)) {
            *o += v;
        }
    }
    out
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}
