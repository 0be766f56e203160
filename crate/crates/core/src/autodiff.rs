//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Every primitive appends a node to the [`Tape`]; operands always precede
//! their results, so one reverse sweep over the node list is a valid
//! topological order. A tape supports a single backward pass until
//! [`Tape::reset_grads`] is called.

use alloc::boxed::Box;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::arg_err;
use crate::matrix::Matrix;
use crate::{Error, Result};

/// Clamp applied to probabilities inside binary cross-entropy.
pub const BCE_EPS: f64 = 1e-12;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Abs(Var),
    Relu(Var),
    Sigmoid(Var),
    RowSoftmax(Var),
    Mean(Var),
    Sum(Var),
    Scale(Var, f64),
    ConcatRows(Box<[Var]>),
    GatherRows(Var, Box<[usize]>),
    BceElems(Var, Box<[f64]>),
    CrossEntropyRows(Var, Box<[usize]>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
    grad: Option<Matrix>,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    Same,
    Row,
    Col,
}

fn broadcast_kind(a: &Matrix, b: &Matrix, op: &str) -> Result<Broadcast> {
    if a.shape() == b.shape() {
        Ok(Broadcast::Same)
    } else if b.rows() == 1 && b.cols() == a.cols() {
        Ok(Broadcast::Row)
    } else if b.cols() == 1 && b.rows() == a.rows() {
        Ok(Broadcast::Col)
    } else {
        Err(arg_err!("{op}: shapes {:?} and {:?} are not broadcast-compatible", a.shape(), b.shape()))
    }
}

fn broadcast_zip(a: &Matrix, b: &Matrix, kind: Broadcast, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let mut out = a.clone();
    let cols = a.cols();
    for (idx, o) in out.as_mut_slice().iter_mut().enumerate() {
        let bv = match kind {
            Broadcast::Same => b.as_slice()[idx],
            Broadcast::Row => b.as_slice()[idx % cols],
            Broadcast::Col => b.as_slice()[idx / cols],
        };
        *o = f(*o, bv);
    }
    out
}

/// Sums a full-shape gradient back down to the broadcast operand's shape.
fn reduce_to(g: &Matrix, kind: Broadcast, shape: (usize, usize)) -> Matrix {
    match kind {
        Broadcast::Same => g.clone(),
        Broadcast::Row => {
            let mut out = Matrix::zeros(1, shape.1);
            for r in 0..g.rows() {
                for (o, &v) in out.as_mut_slice().iter_mut().zip(g.row(r)) {
                    *o += v;
                }
            }
            out
        }
        Broadcast::Col => {
            let sums: Vec<f64> = (0..g.rows()).map(|r| g.row(r).iter().sum()).collect();
            Matrix::column(&sums)
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = libm::exp(v - max);
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

pub fn row_softmax(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..m.rows() {
        softmax_row(m.row(r), out.row_mut(r));
    }
    out
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + libm::log(row.iter().map(|&v| libm::exp(v - max)).sum::<f64>())
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

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool, name: &str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name.to_string() });
        }
        self.nodes.push(Node { value, op, requires_grad, grad: None });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records an input. Parameters pass `requires_grad = true`.
    pub fn leaf(&mut self, value: Matrix, requires_grad: bool) -> Result<Var> {
        self.push(value, Op::Leaf, requires_grad, "leaf")
    }

    pub fn param(&mut self, value: Matrix) -> Result<Var> {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Matrix) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.as_slice()[0]
    }

    pub fn grad(&self, v: Var) -> Option<&Matrix> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        self.push(value, Op::MatMul(a, b), rg, "matmul")
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let kind = broadcast_kind(self.value(a), self.value(b), name)?;
        let value = broadcast_zip(self.value(a), self.value(b), kind, f);
        let rg = self.rg(a) || self.rg(b);
        self.push(value, op, rg, name)
    }

    /// `a + b`; `b` may be a row vector or column vector broadcast over `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise product with the same broadcasting as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", Op::Mul(a, b), |x, y| x * y)
    }

    fn unary(&mut self, a: Var, name: &str, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let value = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(value, op, rg, name)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "abs", Op::Abs(a), libm::fabs)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "relu", Op::Relu(a), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "sigmoid", Op::Sigmoid(a), sigmoid)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.unary(a, "scale", Op::Scale(a, s), |x| x * s)
    }

    pub fn row_softmax(&mut self, a: Var) -> Result<Var> {
        let value = row_softmax(self.value(a));
        let rg = self.rg(a);
        self.push(value, Op::RowSoftmax(a), rg, "row_softmax")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let m = self.value(a);
        if m.is_empty() {
            return Err(arg_err!("mean of an empty tensor"));
        }
        let value = Matrix::filled(1, 1, m.sum() / m.len() as f64);
        let rg = self.rg(a);
        self.push(value, Op::Mean(a), rg, "mean")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Matrix::filled(1, 1, self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::Sum(a), rg, "sum")
    }

    /// Stacks the operands vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| arg_err!("concat_rows of nothing"))?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.value(p);
            if m.cols() != cols {
                return Err(arg_err!("concat_rows: {} columns vs {cols}", m.cols()));
            }
            rows += m.rows();
            data.extend_from_slice(m.as_slice());
        }
        let value = Matrix::from_vec(rows, cols, data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(value, Op::ConcatRows(parts.into()), rg, "concat_rows")
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let m = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= m.rows()) {
            return Err(arg_err!("gather_rows: row {bad} of a {}-row tensor", m.rows()));
        }
        let value = m.select_rows(idx);
        let rg = self.rg(a);
        self.push(value, Op::GatherRows(a, idx.into()), rg, "gather_rows")
    }

    /// Per-element binary cross-entropy of probabilities against 0/1 targets.
    pub fn bce_per_sample(&mut self, p: Var, targets: &[f64]) -> Result<Var> {
        let m = self.value(p);
        if m.len() != targets.len() {
            return Err(arg_err!("bce: {} probabilities vs {} targets", m.len(), targets.len()));
        }
        if targets.is_empty() {
            return Err(arg_err!("bce of an empty batch"));
        }
        let mut value = m.clone();
        for (v, &t) in value.as_mut_slice().iter_mut().zip(targets) {
            let pc = v.clamp(BCE_EPS, 1.0 - BCE_EPS);
            *v = -(t * libm::log(pc) + (1.0 - t) * libm::log(1.0 - pc));
        }
        let rg = self.rg(p);
        self.push(value, Op::BceElems(p, targets.into()), rg, "bce")
    }

    /// Per-row softmax cross-entropy of logits against class indices (r×1).
    pub fn cross_entropy_per_sample(&mut self, logits: Var, classes: &[usize]) -> Result<Var> {
        let m = self.value(logits);
        if m.rows() != classes.len() {
            return Err(arg_err!("cross_entropy: {} rows vs {} classes", m.rows(), classes.len()));
        }
        if classes.is_empty() {
            return Err(arg_err!("cross_entropy of an empty batch"));
        }
        if let Some(&bad) = classes.iter().find(|&&c| c >= m.cols()) {
            return Err(arg_err!("cross_entropy: class {bad} with {} logits", m.cols()));
        }
        let vals: Vec<f64> = classes
            .iter()
            .enumerate()
            .map(|(r, &c)| log_sum_exp(m.row(r)) - m.row(r)[c])
            .collect();
        let rg = self.rg(logits);
        self.push(Matrix::column(&vals), Op::CrossEntropyRows(logits, classes.into()), rg, "cross_entropy")
    }

    /// Mean binary cross-entropy; probabilities are clamped to `[ε, 1−ε]`.
    pub fn bce(&mut self, p: Var, targets: &[f64]) -> Result<Var> {
        let e = self.bce_per_sample(p, targets)?;
        self.mean(e)
    }

    pub fn cross_entropy(&mut self, logits: Var, classes: &[usize]) -> Result<Var> {
        let e = self.cross_entropy_per_sample(logits, classes)?;
        self.mean(e)
    }

    /// Elementwise `(pred − target)²`.
    pub fn squared_error(&mut self, pred: Var, target: Var) -> Result<Var> {
        if self.value(pred).shape() != self.value(target).shape() {
            return Err(arg_err!(
                "squared_error: {:?} vs {:?}",
                self.value(pred).shape(),
                self.value(target).shape()
            ));
        }
        if self.value(pred).is_empty() {
            return Err(arg_err!("mse of an empty batch"));
        }
        let d = self.sub(pred, target)?;
        self.mul(d, d)
    }

    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let e = self.squared_error(pred, target)?;
        self.mean(e)
    }

    /// Clears accumulated gradients so that another backward pass may run.
    pub fn reset_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.backward_done = false;
    }

    /// Accumulates `∂loss/∂t` into every gradient-requiring tensor `t`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::State("backward called twice without reset_grads".into()));
        }
        if self.value(loss).shape() != (1, 1) {
            return Err(arg_err!("backward needs a 1x1 loss, got {:?}", self.value(loss).shape()));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads)?;
            self.nodes[idx].grad = Some(g);
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.axpy(1.0, &g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, idx: usize, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    let ga = g.matmul_t(self.value(*b))?;
                    self.accumulate(grads, *a, ga);
                }
                if self.rg(*b) {
                    let gb = self.value(*a).t_matmul(g)?;
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                self.accumulate(grads, *a, g.clone());
                if self.rg(*b) {
                    let bm = self.value(*b);
                    let kind = broadcast_kind(self.value(*a), bm, "add")?;
                    let gb = reduce_to(g, kind, bm.shape()).map(|v| sign * v);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Mul(a, b) => {
                let (am, bm) = (self.value(*a), self.value(*b));
                let kind = broadcast_kind(am, bm, "mul")?;
                if self.rg(*a) {
                    let ga = broadcast_zip(g, bm, kind, |x, y| x * y);
                    self.accumulate(grads, *a, ga);
                }
                if self.rg(*b) {
                    let full = g.zip_map(am, |x, y| x * y);
                    self.accumulate(grads, *b, reduce_to(&full, kind, bm.shape()));
                }
            }
            Op::Abs(a) => {
                let ga = g.zip_map(self.value(*a), |gv, x| {
                    if x > 0.0 {
                        gv
                    } else if x < 0.0 {
                        -gv
                    } else {
                        0.0
                    }
                });
                self.accumulate(grads, *a, ga);
            }
            Op::Relu(a) => {
                let ga = g.zip_map(self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 });
                self.accumulate(grads, *a, ga);
            }
            Op::Sigmoid(a) => {
                let ga = g.zip_map(&node.value, |gv, s| gv * s * (1.0 - s));
                self.accumulate(grads, *a, ga);
            }
            Op::RowSoftmax(a) => {
                let s = &node.value;
                let mut ga = Matrix::zeros(s.rows(), s.cols());
                for r in 0..s.rows() {
                    let dotp: f64 = g.row(r).iter().zip(s.row(r)).map(|(x, y)| x * y).sum();
                    for ((o, &gv), &sv) in ga.row_mut(r).iter_mut().zip(g.row(r)).zip(s.row(r)) {
                        *o = sv * (gv - dotp);
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Mean(a) => {
                let am = self.value(*a);
                let ga = Matrix::filled(am.rows(), am.cols(), g.as_slice()[0] / am.len() as f64);
                self.accumulate(grads, *a, ga);
            }
            Op::Sum(a) => {
                let am = self.value(*a);
                self.accumulate(grads, *a, Matrix::filled(am.rows(), am.cols(), g.as_slice()[0]));
            }
            Op::Scale(a, s) => {
                let s = *s;
                self.accumulate(grads, *a, g.map(|v| v * s));
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts.iter() {
                    let (r, c) = self.value(p).shape();
                    let slice = g.as_slice()[offset * c..(offset + r) * c].to_vec();
                    self.accumulate(grads, p, Matrix::from_vec(r, c, slice)?);
                    offset += r;
                }
            }
            Op::GatherRows(a, idx) => {
                let am = self.value(*a);
                let mut ga = Matrix::zeros(am.rows(), am.cols());
                for (k, &i) in idx.iter().enumerate() {
                    for (o, &v) in ga.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::BceElems(p, targets) => {
                let pm = self.value(*p);
                let mut gp = pm.clone();
                for ((o, &gv), &t) in gp.as_mut_slice().iter_mut().zip(g.as_slice()).zip(targets.iter()) {
                    let pc = o.clamp(BCE_EPS, 1.0 - BCE_EPS);
                    *o = gv * (-t / pc + (1.0 - t) / (1.0 - pc));
                }
                self.accumulate(grads, *p, gp);
            }
            Op::CrossEntropyRows(logits, classes) => {
                let lm = self.value(*logits);
                let mut gl = row_softmax(lm);
                for (r, &c) in classes.iter().enumerate() {
                    gl[(r, c)] -= 1.0;
                    let gv = g.as_slice()[r];
                    for v in gl.row_mut(r) {
                        *v *= gv;
                    }
                }
                self.accumulate(grads, *logits, gl);
            }
        }
        Ok(())
    }
}
