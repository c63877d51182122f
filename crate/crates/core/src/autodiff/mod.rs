//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s. Calling
//! [`Tape::backward`] on a `1×1` result walks the record in reverse and returns
//! the gradient of that scalar with respect to every parameter leaf.
//!
//! ```
//! use eagcl::autodiff::Tape;
//! use ndarray::array;
//!
//! let tape = Tape::new();
//! let x = tape.param(array![[1.0, 2.0]]);
//! let loss = x.mul(x).unwrap().sum().unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap(), &array![[2.0, 4.0]]);
//! ```
//!
//! Every operation checks operand shapes and rejects non-finite results, so a
//! NaN surfaces at the op that produced it rather than in the optimizer.

mod gradcheck;
mod optim;

use std::cell::RefCell;
use std::rc::Rc;

use ndarray::{Array2, Axis};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::sparse::CsrMatrix;

pub use gradcheck::{grad_check, GradCheckReport};
pub use optim::{xavier_uniform, Adam, AdamState};

/// A constant sparse operator together with its transpose, for the backward pass.
#[derive(Debug)]
pub struct SparseOperand {
    forward: CsrMatrix,
    transpose: CsrMatrix,
}

impl SparseOperand {
    pub fn new(m: CsrMatrix) -> Rc<Self> {
        let transpose = m.transpose();
        Rc::new(SparseOperand { forward: m, transpose })
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.forward
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    MatMulT(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    LeakyRelu(usize, f64),
    Sigmoid(usize),
    Exp(usize),
    SoftmaxRows(usize),
    LogSoftmaxRows(usize),
    Sum(usize),
    MeanRows(usize),
    RowSums(usize),
    DivByCol(usize, usize),
    HConcat(Vec<usize>),
    VConcat(Vec<usize>),
    Gather(usize, Rc<Vec<usize>>),
    Reshape(usize),
    SpMM(Rc<SparseOperand>, usize),
    Mask(usize, Array2<f64>),
    NormalizeRows(usize, f64),
    Pick(usize, Vec<(usize, usize)>),
    SegmentSum(usize, Rc<Vec<usize>>),
    SegmentSoftmax(usize, Rc<Vec<usize>>),
    MulCol(usize, usize),
}

struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

fn check_finite(v: &Array2<f64>, op: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(op.to_string()))
    }
}

fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

fn log_softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Array2<f64>, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    /// A trainable leaf.
    pub fn param(&self, value: Array2<f64>) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&self, value: Array2<f64>) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Array2::from_elem((1, 1), value))
    }

    fn requires(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// Gradients of the `1×1` node `loss` with respect to every leaf.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.dim() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a 1x1 loss, got {:?}",
                nodes[loss.id].value.dim()
            )));
        }
        let mut grads: Vec<Option<Array2<f64>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Array2::ones((1, 1)));

        fn acc(grads: &mut [Option<Array2<f64>>], nodes: &[Node], id: usize, g: Array2<f64>) {
            if !nodes[id].requires_grad {
                return;
            }
            match &mut grads[id] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let val = |i: usize| &nodes[i].value;
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    acc(&mut grads, &nodes, *a, g.dot(&val(*b).t()));
                    acc(&mut grads, &nodes, *b, val(*a).t().dot(&g));
                }
                Op::MatMulT(a, b) => {
                    acc(&mut grads, &nodes, *a, g.dot(val(*b)));
                    acc(&mut grads, &nodes, *b, g.t().dot(val(*a)));
                }
                Op::Add(a, b) => {
                    acc(&mut grads, &nodes, *b, g.clone());
                    acc(&mut grads, &nodes, *a, g);
                }
                Op::AddRow(a, b) => {
                    acc(&mut grads, &nodes, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut grads, &nodes, *a, g);
                }
                Op::Mul(a, b) => {
                    acc(&mut grads, &nodes, *a, &g * val(*b));
                    acc(&mut grads, &nodes, *b, &g * val(*a));
                }
                Op::Scale(a, k) => acc(&mut grads, &nodes, *a, g * *k),
                Op::LeakyRelu(a, slope) => {
                    let mut d = g;
                    d.zip_mut_with(val(*a), |gi, &x| {
                        if x <= 0.0 {
                            *gi *= slope
                        }
                    });
                    acc(&mut grads, &nodes, *a, d);
                }
                Op::Sigmoid(a) => {
                    let d = &g * &node.value.mapv(|y| y * (1.0 - y));
                    acc(&mut grads, &nodes, *a, d);
                }
                Op::Exp(a) => acc(&mut grads, &nodes, *a, &g * &node.value),
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let dot = (&g * y).sum_axis(Axis(1)).insert_axis(Axis(1));
                    acc(&mut grads, &nodes, *a, y * &(&g - &dot));
                }
                Op::LogSoftmaxRows(a) => {
                    let p = node.value.mapv(f64::exp);
                    let s = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                    acc(&mut grads, &nodes, *a, &g - &(&p * &s));
                }
                Op::Sum(a) => {
                    let d = Array2::from_elem(val(*a).dim(), g[[0, 0]]);
                    acc(&mut grads, &nodes, *a, d);
                }
                Op::MeanRows(a) => {
                    let rows = val(*a).nrows();
                    let d = g.broadcast(val(*a).dim()).unwrap().mapv(|v| v / rows as f64);
                    acc(&mut grads, &nodes, *a, d);
                }
                Op::RowSums(a) => {
                    let d = g.broadcast(val(*a).dim()).unwrap().to_owned();
                    acc(&mut grads, &nodes, *a, d);
                }
                Op::DivByCol(a, c) => {
                    let (x, col) = (val(*a), val(*c));
                    let da = &g / col;
                    let dc = -(&g * x / &col.mapv(|v| v * v)).sum_axis(Axis(1)).insert_axis(Axis(1));
                    acc(&mut grads, &nodes, *a, da);
                    acc(&mut grads, &nodes, *c, dc);
                }
                Op::HConcat(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = val(p).ncols();
                        acc(&mut grads, &nodes, p, g.slice(ndarray::s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::VConcat(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let h = val(p).nrows();
                        acc(&mut grads, &nodes, p, g.slice(ndarray::s![start..start + h, ..]).to_owned());
                        start += h;
                    }
                }
                Op::Gather(a, idx) => {
                    let mut d = Array2::zeros(val(*a).dim());
                    for (k, &r) in idx.iter().enumerate() {
                        let mut row = d.row_mut(r);
                        row += &g.row(k);
                    }
                    acc(&mut grads, &nodes, *a, d);
                }
                Op::Reshape(a) => {
                    let d = g
                        .as_standard_layout()
                        .to_owned()
                        .into_shape_with_order(val(*a).dim())
                        .expect("reshape preserves element count");
                    acc(&mut grads, &nodes, *a, d);
                }
                Op::SpMM(m, a) => {
                    let d = m.transpose.matmul(g.view())?;
                    acc(&mut grads, &nodes, *a, d);
                }
                Op::Mask(a, mask) => acc(&mut grads, &nodes, *a, &g * mask),
                Op::NormalizeRows(a, eps) => {
                    let x = val(*a);
                    let mut d = Array2::zeros(x.dim());
                    for ((xr, gr), mut dr) in x.rows().into_iter().zip(g.rows()).zip(d.rows_mut()) {
                        let r = xr.dot(&xr).sqrt();
                        let n = r + eps;
                        let gx = gr.dot(&xr);
                        let coef = if r > 0.0 { gx / (r * n * n) } else { 0.0 };
                        dr.assign(&(&gr / n - &(&xr * coef)));
                    }
                    acc(&mut grads, &nodes, *a, d);
                }
                Op::SegmentSum(a, lens) => {
                    let mut d = Array2::zeros(val(*a).dim());
                    let mut start = 0;
                    for (k, &len) in lens.iter().enumerate() {
                        for r in start..start + len {
                            d.row_mut(r).assign(&g.row(k));
                        }
                        start += len;
                    }
                    acc(&mut grads, &nodes, *a, d);
                }
                Op::SegmentSoftmax(a, lens) => {
                    let y = &node.value;
                    let mut d = Array2::zeros(y.dim());
                    let mut start = 0;
                    for &len in lens.iter() {
                        let span = start..start + len;
                        let dot: f64 = span.clone().map(|r| g[[r, 0]] * y[[r, 0]]).sum();
                        for r in span {
                            d[[r, 0]] = y[[r, 0]] * (g[[r, 0]] - dot);
                        }
                        start += len;
                    }
                    acc(&mut grads, &nodes, *a, d);
                }
                Op::MulCol(a, c) => {
                    let (x, col) = (val(*a), val(*c));
                    acc(&mut grads, &nodes, *c, (&g * x).sum_axis(Axis(1)).insert_axis(Axis(1)));
                    acc(&mut grads, &nodes, *a, &g * col);
                }
                Op::Pick(a, pos) => {
                    let mut d = Array2::zeros(val(*a).dim());
                    for (k, &(r, c)) in pos.iter().enumerate() {
                        d[[r, c]] += g[[k, 0]];
                    }
                    acc(&mut grads, &nodes, *a, d);
                }
            }
        }

        for (id, node) in nodes.iter().enumerate() {
            if !(matches!(node.op, Op::Leaf) && node.requires_grad) {
                grads[id] = None;
            } else if grads[id].is_none() {
                grads[id] = Some(Array2::zeros(node.value.dim()));
            }
        }
        Ok(Gradients { grads })
    }
}

pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient for a parameter leaf; `None` for constants and interior nodes.
    pub fn get(&self, v: Var<'_>) -> Option<&Array2<f64>> {
        self.grads.get(v.id).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var<'_>) -> Option<Array2<f64>> {
        self.grads.get_mut(v.id).and_then(Option::take)
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.nodes.borrow()[self.id].value.dim()
    }

    pub fn value(&self) -> Array2<f64> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn with_value<R>(&self, f: impl FnOnce(&Array2<f64>) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id].value)
    }

    /// The single entry of a `1×1` node.
    pub fn item(&self) -> f64 {
        self.with_value(|v| v[[0, 0]])
    }

    fn unary(&self, name: &'static str, f: impl FnOnce(&Array2<f64>) -> Array2<f64>, op: Op) -> Result<Var<'t>> {
        let value = self.with_value(f);
        check_finite(&value, name)?;
        let rg = self.tape.requires(&[self.id]);
        Ok(self.tape.push(value, op, rg))
    }

    fn binary(
        &self,
        other: Var<'t>,
        name: &'static str,
        f: impl FnOnce(&Array2<f64>, &Array2<f64>) -> Array2<f64>,
        op: Op,
    ) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            f(&nodes[self.id].value, &nodes[other.id].value)
        };
        check_finite(&value, name)?;
        let rg = self.tape.requires(&[self.id, other.id]);
        Ok(self.tape.push(value, op, rg))
    }

    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        let (l, r) = (self.shape(), other.shape());
        if l.1 != r.0 {
            return Err(Error::shape("matmul", l, r));
        }
        self.binary(other, "matmul", |a, b| a.dot(b), Op::MatMul(self.id, other.id))
    }

    /// `self · otherᵀ`
    pub fn matmul_t(&self, other: Var<'t>) -> Result<Var<'t>> {
        let (l, r) = (self.shape(), other.shape());
        if l.1 != r.1 {
            return Err(Error::shape("matmul_t", l, r));
        }
        self.binary(other, "matmul_t", |a, b| a.dot(&b.t()), Op::MatMulT(self.id, other.id))
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        let (l, r) = (self.shape(), other.shape());
        if l != r {
            return Err(Error::shape("add", l, r));
        }
        self.binary(other, "add", |a, b| a + b, Op::Add(self.id, other.id))
    }

    /// Adds a `1×c` row to every row.
    pub fn add_row(&self, row: Var<'t>) -> Result<Var<'t>> {
        let (l, r) = (self.shape(), row.shape());
        if r.0 != 1 || l.1 != r.1 {
            return Err(Error::shape("add_row", l, r));
        }
        self.binary(row, "add_row", |a, b| a + b, Op::AddRow(self.id, row.id))
    }

    /// Elementwise product.
    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        let (l, r) = (self.shape(), other.shape());
        if l != r {
            return Err(Error::shape("mul", l, r));
        }
        self.binary(other, "mul", |a, b| a * b, Op::Mul(self.id, other.id))
    }

    pub fn scale(&self, k: f64) -> Result<Var<'t>> {
        self.unary("scale", |a| a * k, Op::Scale(self.id, k))
    }

    pub fn leaky_relu(&self, slope: f64) -> Result<Var<'t>> {
        self.unary(
            "leaky_relu",
            |a| a.mapv(|x| if x > 0.0 { x } else { slope * x }),
            Op::LeakyRelu(self.id, slope),
        )
    }

    pub fn sigmoid(&self) -> Result<Var<'t>> {
        self.unary("sigmoid", |a| a.mapv(|x| 1.0 / (1.0 + (-x).exp())), Op::Sigmoid(self.id))
    }

    pub fn exp(&self) -> Result<Var<'t>> {
        self.unary("exp", |a| a.mapv(f64::exp), Op::Exp(self.id))
    }

    pub fn softmax_rows(&self) -> Result<Var<'t>> {
        self.unary("softmax", softmax_rows, Op::SoftmaxRows(self.id))
    }

    pub fn log_softmax_rows(&self) -> Result<Var<'t>> {
        self.unary("log_softmax", log_softmax_rows, Op::LogSoftmaxRows(self.id))
    }

    /// Sum of all entries, `1×1`.
    pub fn sum(&self) -> Result<Var<'t>> {
        self.unary("sum", |a| Array2::from_elem((1, 1), a.sum()), Op::Sum(self.id))
    }

    /// Mean over rows, giving a `1×c` row.
    pub fn mean_rows(&self) -> Result<Var<'t>> {
        if self.shape().0 == 0 {
            return Err(Error::Contract("mean over zero rows".into()));
        }
        self.unary(
            "mean_rows",
            |a| a.mean_axis(Axis(0)).unwrap().insert_axis(Axis(0)),
            Op::MeanRows(self.id),
        )
    }

    /// Per-row sums as an `r×1` column.
    pub fn row_sums(&self) -> Result<Var<'t>> {
        self.unary("row_sums", |a| a.sum_axis(Axis(1)).insert_axis(Axis(1)), Op::RowSums(self.id))
    }

    /// Divides row `i` by `col[i]`.
    pub fn div_by_col(&self, col: Var<'t>) -> Result<Var<'t>> {
        let (l, r) = (self.shape(), col.shape());
        if r != (l.0, 1) {
            return Err(Error::shape("div_by_col", l, r));
        }
        self.binary(col, "div_by_col", |a, c| a / c, Op::DivByCol(self.id, col.id))
    }

    pub fn hconcat(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts.first().ok_or_else(|| Error::Contract("concat of nothing".into()))?;
        let tape = first.tape;
        let rows = first.shape().0;
        for p in parts {
            if p.shape().0 != rows {
                return Err(Error::shape("hconcat", first.shape(), p.shape()));
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let value = {
            let nodes = tape.nodes.borrow();
            let views: Vec<_> = ids.iter().map(|&i| nodes[i].value.view()).collect();
            ndarray::concatenate(Axis(1), &views).expect("rows checked")
        };
        let rg = tape.requires(&ids);
        Ok(tape.push(value, Op::HConcat(ids), rg))
    }

    pub fn vconcat(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts.first().ok_or_else(|| Error::Contract("concat of nothing".into()))?;
        let tape = first.tape;
        let cols = first.shape().1;
        for p in parts {
            if p.shape().1 != cols {
                return Err(Error::shape("vconcat", first.shape(), p.shape()));
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let value = {
            let nodes = tape.nodes.borrow();
            let views: Vec<_> = ids.iter().map(|&i| nodes[i].value.view()).collect();
            ndarray::concatenate(Axis(0), &views).expect("cols checked")
        };
        let rg = tape.requires(&ids);
        Ok(tape.push(value, Op::VConcat(ids), rg))
    }

    /// Row gather; repeated indices accumulate in the backward pass.
    pub fn gather_rows(&self, idx: impl Into<Rc<Vec<usize>>>) -> Result<Var<'t>> {
        let idx: Rc<Vec<usize>> = idx.into();
        let rows = self.shape().0;
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::Index { what: "gather rows", index: bad, len: rows });
        }
        let value = self.with_value(|a| a.select(Axis(0), &idx));
        let rg = self.tape.requires(&[self.id]);
        Ok(self.tape.push(value, Op::Gather(self.id, idx), rg))
    }

    pub fn reshape(&self, rows: usize, cols: usize) -> Result<Var<'t>> {
        let (r, c) = self.shape();
        if r * c != rows * cols {
            return Err(Error::shape("reshape", (r, c), (rows, cols)));
        }
        self.unary(
            "reshape",
            |a| a.as_standard_layout().to_owned().into_shape_with_order((rows, cols)).unwrap(),
            Op::Reshape(self.id),
        )
    }

    /// `m · self` for a constant sparse `m`.
    pub fn spmm(&self, m: &Rc<SparseOperand>) -> Result<Var<'t>> {
        let value = self.with_value(|a| m.forward.matmul(a.view()))?;
        check_finite(&value, "spmm")?;
        let rg = self.tape.requires(&[self.id]);
        Ok(self.tape.push(value, Op::SpMM(Rc::clone(m), self.id), rg))
    }

    /// Inverted dropout. Identity when `train` is false or `rate` is 0.
    pub fn dropout(&self, rate: f64, train: bool, rng: &mut Rng) -> Result<Var<'t>> {
        if !train || rate == 0.0 {
            return Ok(*self);
        }
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} not in [0, 1)")));
        }
        let keep = 1.0 / (1.0 - rate);
        let (r, c) = self.shape();
        let mask = Array2::from_shape_simple_fn((r, c), || if rng.gen::<f64>() < rate { 0.0 } else { keep });
        let value = self.with_value(|a| a * &mask);
        let rg = self.tape.requires(&[self.id]);
        Ok(self.tape.push(value, Op::Mask(self.id, mask), rg))
    }

    /// Divides each row by `‖row‖ + eps`.
    pub fn normalize_rows(&self, eps: f64) -> Result<Var<'t>> {
        self.unary(
            "normalize_rows",
            |a| {
                let mut out = a.clone();
                for mut row in out.rows_mut() {
                    let n = row.dot(&row).sqrt() + eps;
                    row.mapv_inplace(|v| v / n);
                }
                out
            },
            Op::NormalizeRows(self.id, eps),
        )
    }

    /// Sums consecutive row groups of the given lengths; an empty group yields a zero row.
    pub fn segment_sum(&self, lens: impl Into<Rc<Vec<usize>>>) -> Result<Var<'t>> {
        let lens: Rc<Vec<usize>> = lens.into();
        let (r, c) = self.shape();
        let total: usize = lens.iter().sum();
        if total != r {
            return Err(Error::shape("segment_sum", (r, c), (total, c)));
        }
        let value = self.with_value(|a| {
            let mut out = Array2::zeros((lens.len(), c));
            let mut start = 0;
            for (k, &len) in lens.iter().enumerate() {
                let mut row = out.row_mut(k);
                for src in start..start + len {
                    row += &a.row(src);
                }
                start += len;
            }
            out
        });
        check_finite(&value, "segment_sum")?;
        let rg = self.tape.requires(&[self.id]);
        Ok(self.tape.push(value, Op::SegmentSum(self.id, lens), rg))
    }

    /// Softmax within each consecutive group of an `n×1` column.
    pub fn segment_softmax(&self, lens: impl Into<Rc<Vec<usize>>>) -> Result<Var<'t>> {
        let lens: Rc<Vec<usize>> = lens.into();
        let (r, c) = self.shape();
        let total: usize = lens.iter().sum();
        if c != 1 || total != r {
            return Err(Error::shape("segment_softmax", (r, c), (total, 1)));
        }
        let value = self.with_value(|a| {
            let mut out = a.clone();
            let mut start = 0;
            for &len in lens.iter() {
                let span = start..start + len;
                let max = span.clone().map(|i| a[[i, 0]]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for i in span.clone() {
                    out[[i, 0]] = (a[[i, 0]] - max).exp();
                    sum += out[[i, 0]];
                }
                for i in span {
                    out[[i, 0]] /= sum;
                }
                start += len;
            }
            out
        });
        check_finite(&value, "segment_softmax")?;
        let rg = self.tape.requires(&[self.id]);
        Ok(self.tape.push(value, Op::SegmentSoftmax(self.id, lens), rg))
    }

    /// Scales row `i` by `col[i]`.
    pub fn mul_col(&self, col: Var<'t>) -> Result<Var<'t>> {
        let (l, r) = (self.shape(), col.shape());
        if r != (l.0, 1) {
            return Err(Error::shape("mul_col", l, r));
        }
        self.binary(col, "mul_col", |a, c| a * c, Op::MulCol(self.id, col.id))
    }

    /// Collects the given `(row, col)` entries into a `k×1` column.
    pub fn pick(&self, positions: Vec<(usize, usize)>) -> Result<Var<'t>> {
        let (r, c) = self.shape();
        if let Some(&(pr, pc)) = positions.iter().find(|&&(pr, pc)| pr >= r || pc >= c) {
            return Err(Error::Index { what: "pick", index: if pr >= r { pr } else { pc }, len: if pr >= r { r } else { c } });
        }
        let value = self.with_value(|a| Array2::from_shape_fn((positions.len(), 1), |(k, _)| a[positions[k]]));
        let rg = self.tape.requires(&[self.id]);
        Ok(self.tape.push(value, Op::Pick(self.id, positions), rg))
    }
}
