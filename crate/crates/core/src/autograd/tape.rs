//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Every primitive appends one node holding its output value. Leaves can
//! borrow their value (model parameters shared across threads) or own it.
//! `backward` walks the node list once, from the loss towards the leaves,
//! accumulating gradients additively on fan-out.

use std::borrow::Cow;

use super::tensor::{Real, Tensor};
use super::AutogradError;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, T),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    LnClamp(Var, T),
    SoftmaxRows(Var),
    Transpose(Var),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SumRows(Var),
    MaxRows(Var),
    SumAll(Var),
    Select(Var, usize, usize),
    GatherRows(Var, Vec<usize>),
}

struct Node<'p, T: Real> {
    value: Cow<'p, Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Ordered record of primitive operations. Single owner; build one tape per
/// independent graph.
pub struct Tape<'p, T: Real> {
    nodes: Vec<Node<'p, T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

type Res = Result<Var, AutogradError>;

fn mismatch(op: &'static str, lhs: [usize; 2], rhs: [usize; 2]) -> AutogradError {
    AutogradError::ShapeMismatch { op, lhs, rhs }
}

impl<'p, T: Real> Tape<'p, T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new() }
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

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` loss with respect to `v`, if `v` was
    /// reachable and requires a gradient.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }

    fn push(&mut self, op_name: &'static str, value: Cow<'p, Tensor<T>>, op: Op<T>, requires_grad: bool) -> Res {
        if !value.is_finite() {
            return Err(AutogradError::NonFinite { op: op_name });
        }
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Leaf that borrows its value, typically a model parameter.
    pub fn param(&mut self, value: &'p Tensor<T>, requires_grad: bool) -> Res {
        self.push("leaf", Cow::Borrowed(value), Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Res {
        self.push("leaf", Cow::Owned(value), Op::Leaf, false)
    }

    pub fn variable(&mut self, value: Tensor<T>) -> Res {
        self.push("leaf", Cow::Owned(value), Op::Leaf, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Res {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.rows() {
            return Err(mismatch("matmul", x.shape(), y.shape()));
        }
        let out = x.matmul(y);
        let rg = self.rg(&[a, b]);
        self.push("matmul", Cow::Owned(out), Op::MatMul(a, b), rg)
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Res {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.cols() {
            return Err(mismatch("matmul_t", x.shape(), y.shape()));
        }
        let out = x.matmul_t(y);
        let rg = self.rg(&[a, b]);
        self.push("matmul_t", Cow::Owned(out), Op::MatMulT(a, b), rg)
    }

    fn zip_same(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Res {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(mismatch(name, x.shape(), y.shape()));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let out = Tensor::new(x.rows(), x.cols(), data);
        let rg = self.rg(&[a, b]);
        self.push(name, Cow::Owned(out), op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Res {
        self.zip_same("add", a, b, |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Res {
        self.zip_same("sub", a, b, |p, q| p - q, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Res {
        self.zip_same("mul", a, b, |p, q| p * q, Op::Mul(a, b))
    }

    /// Adds the `1 x c` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Res {
        let (x, y) = (self.value(a), self.value(b));
        if y.rows() != 1 || x.cols() != y.cols() {
            return Err(mismatch("add_row", x.shape(), y.shape()));
        }
        let c = x.cols();
        let data = x.data().iter().enumerate().map(|(i, &p)| p + y.data()[i % c]).collect();
        let out = Tensor::new(x.rows(), c, data);
        let rg = self.rg(&[a, b]);
        self.push("add_row", Cow::Owned(out), Op::AddRow(a, b), rg)
    }

    /// `scale * a + shift`, elementwise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Res {
        let (s, b) = (T::from_f64_lossy(scale), T::from_f64_lossy(shift));
        let out = self.value(a).map(|v| s * v + b);
        let rg = self.rg(&[a]);
        self.push("affine", Cow::Owned(out), Op::Affine(a, s), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Res {
        self.affine(a, s, 0.0)
    }

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Res {
        let out = self.value(a).map(f);
        let rg = self.rg(&[a]);
        self.push(name, Cow::Owned(out), op, rg)
    }

    pub fn tanh(&mut self, a: Var) -> Res {
        self.unary("tanh", a, |v| v.tanh(), Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Res {
        self.unary("sigmoid", a, sigmoid, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Res {
        self.unary("relu", a, |v| if v > T::zero() { v } else { T::zero() }, Op::Relu(a))
    }

    /// `ln(max(a, floor))`
    pub fn ln_clamped(&mut self, a: Var, floor: f64) -> Res {
        let fl = T::from_f64_lossy(floor);
        self.unary("ln_clamped", a, |v| v.max(fl).ln(), Op::LnClamp(a, fl))
    }

    /// Softmax along each row, with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Res {
        let out = softmax_rows(self.value(a));
        let rg = self.rg(&[a]);
        self.push("softmax", Cow::Owned(out), Op::SoftmaxRows(a), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Res {
        let out = self.value(a).transpose();
        let rg = self.rg(&[a]);
        self.push("transpose", Cow::Owned(out), Op::Transpose(a), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Res {
        let x = self.value(a);
        if len == 0 || start + len > x.cols() {
            return Err(mismatch("slice_cols", x.shape(), [x.rows(), start + len]));
        }
        let mut data = Vec::with_capacity(x.rows() * len);
        for r in 0..x.rows() {
            data.extend_from_slice(&x.row_slice(r)[start..start + len]);
        }
        let out = Tensor::new(x.rows(), len, data);
        let rg = self.rg(&[a]);
        self.push("slice_cols", Cow::Owned(out), Op::SliceCols(a, start), rg)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Res {
        let x = self.value(a);
        if len == 0 || start + len > x.rows() {
            return Err(mismatch("slice_rows", x.shape(), [start + len, x.cols()]));
        }
        let c = x.cols();
        let out = Tensor::new(len, c, x.data()[start * c..(start + len) * c].to_vec());
        let rg = self.rg(&[a]);
        self.push("slice_rows", Cow::Owned(out), Op::SliceRows(a, start), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Res {
        let first = parts.first().ok_or_else(|| AutogradError::Contract("concat_cols of nothing".into()))?;
        let rows = self.value(*first).rows();
        for p in parts {
            if self.value(*p).rows() != rows {
                return Err(mismatch("concat_cols", self.shape(*first), self.shape(*p)));
            }
        }
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row_slice(r));
            }
        }
        let out = Tensor::new(rows, cols, data);
        let rg = self.rg(parts);
        self.push("concat_cols", Cow::Owned(out), Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Res {
        let first = parts.first().ok_or_else(|| AutogradError::Contract("concat_rows of nothing".into()))?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let x = self.value(*p);
            if x.cols() != cols {
                return Err(mismatch("concat_rows", self.shape(*first), x.shape()));
            }
            rows += x.rows();
            data.extend_from_slice(x.data());
        }
        let out = Tensor::new(rows, cols, data);
        let rg = self.rg(parts);
        self.push("concat_rows", Cow::Owned(out), Op::ConcatRows(parts.to_vec()), rg)
    }

    /// Sum over each row, giving an `r x 1` column.
    pub fn sum_rows(&mut self, a: Var) -> Res {
        let x = self.value(a);
        let data = (0..x.rows()).map(|r| x.row_slice(r).iter().copied().sum()).collect();
        let out = Tensor::new(x.rows(), 1, data);
        let rg = self.rg(&[a]);
        self.push("sum_rows", Cow::Owned(out), Op::SumRows(a), rg)
    }

    /// Maximum over each row, giving an `r x 1` column. The gradient flows
    /// to the first maximal entry.
    pub fn max_rows(&mut self, a: Var) -> Res {
        let x = self.value(a);
        let data = (0..x.rows()).map(|r| x.row_slice(r)[argmax(x.row_slice(r))]).collect();
        let out = Tensor::new(x.rows(), 1, data);
        let rg = self.rg(&[a]);
        self.push("max_rows", Cow::Owned(out), Op::MaxRows(a), rg)
    }

    pub fn sum_all(&mut self, a: Var) -> Res {
        let s = self.value(a).data().iter().copied().sum();
        let rg = self.rg(&[a]);
        self.push("sum_all", Cow::Owned(Tensor::scalar(s)), Op::SumAll(a), rg)
    }

    pub fn select(&mut self, a: Var, r: usize, c: usize) -> Res {
        let x = self.value(a);
        if r >= x.rows() || c >= x.cols() {
            return Err(mismatch("select", x.shape(), [r + 1, c + 1]));
        }
        let out = Tensor::scalar(x.get(r, c));
        let rg = self.rg(&[a]);
        self.push("select", Cow::Owned(out), Op::Select(a, r, c), rg)
    }

    /// Rows `ids` of `table`, stacked in order.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Res {
        let x = self.value(table);
        if ids.is_empty() {
            return Err(AutogradError::Contract("gather_rows with no ids".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= x.rows()) {
            return Err(mismatch("gather_rows", x.shape(), [bad + 1, x.cols()]));
        }
        let mut data = Vec::with_capacity(ids.len() * x.cols());
        for &i in ids {
            data.extend_from_slice(x.row_slice(i));
        }
        let out = Tensor::new(ids.len(), x.cols(), data);
        let rg = self.rg(&[table]);
        self.push("gather_rows", Cow::Owned(out), Op::GatherRows(table, ids.to_vec()), rg)
    }

    /// Reverse pass from a scalar `loss`. Gradients of earlier calls are
    /// discarded.
    pub fn backward(&mut self, loss: Var) -> Result<(), AutogradError> {
        if self.nodes.is_empty() {
            return Err(AutogradError::Contract("backward on an empty tape".into()));
        }
        let shape = self.shape(loss);
        if shape != [1, 1] {
            return Err(AutogradError::Contract(format!("backward needs a scalar loss, got shape {shape:?}")));
        }
        self.grads = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(Tensor::scalar(T::one()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            for (input, contribution) in self.contributions(i, &g) {
                self.accumulate(input, contribution);
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                self.grads[i] = Some(g);
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    /// Gradient contributions of node `i` to its inputs, given the gradient
    /// `g` flowing into its output.
    fn contributions(&self, i: usize, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let y: &Tensor<T> = &self.nodes[i].value;
        let needs = |v: &Var| self.nodes[v.0].requires_grad;
        let mut out = Vec::with_capacity(2);
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if needs(a) {
                    out.push((*a, g.matmul_t(self.value(*b))));
                }
                if needs(b) {
                    out.push((*b, self.value(*a).t_matmul(g)));
                }
            }
            Op::MatMulT(a, b) => {
                if needs(a) {
                    out.push((*a, g.matmul(self.value(*b))));
                }
                if needs(b) {
                    out.push((*b, g.t_matmul(self.value(*a))));
                }
            }
            Op::Add(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.clone()));
            }
            Op::Sub(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.map(|v| -v)));
            }
            Op::Mul(a, b) => {
                if needs(a) {
                    out.push((*a, zip(g, self.value(*b), |p, q| p * q)));
                }
                if needs(b) {
                    out.push((*b, zip(g, self.value(*a), |p, q| p * q)));
                }
            }
            Op::AddRow(a, b) => {
                out.push((*a, g.clone()));
                let mut col = vec![T::zero(); g.cols()];
                for r in 0..g.rows() {
                    for (c, &v) in col.iter_mut().zip(g.row_slice(r)) {
                        *c = *c + v;
                    }
                }
                out.push((*b, Tensor::row(col)));
            }
            Op::Affine(a, s) => out.push((*a, g.map(|v| v * *s))),
            Op::Tanh(a) => out.push((*a, zip(g, y, |p, t| p * (T::one() - t * t)))),
            Op::Sigmoid(a) => out.push((*a, zip(g, y, |p, s| p * s * (T::one() - s)))),
            Op::Relu(a) => {
                out.push((*a, zip(g, self.value(*a), |p, x| if x > T::zero() { p } else { T::zero() })));
            }
            Op::LnClamp(a, floor) => {
                let fl = *floor;
                out.push((*a, zip(g, self.value(*a), |p, x| if x > fl { p / x } else { T::zero() })));
            }
            Op::SoftmaxRows(a) => {
                let mut data = Vec::with_capacity(y.len());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row_slice(r), g.row_slice(r));
                    let dot = yr.iter().zip(gr).fold(T::zero(), |acc, (&p, &q)| acc + p * q);
                    data.extend(yr.iter().zip(gr).map(|(&p, &q)| p * (q - dot)));
                }
                out.push((*a, Tensor::new(y.rows(), y.cols(), data)));
            }
            Op::Transpose(a) => out.push((*a, g.transpose())),
            Op::SliceCols(a, start) => {
                let [rows, cols] = self.shape(*a);
                let mut ga = Tensor::zeros(rows, cols);
                let len = g.cols();
                for r in 0..rows {
                    ga.data_mut()[r * cols + start..r * cols + start + len].copy_from_slice(g.row_slice(r));
                }
                out.push((*a, ga));
            }
            Op::SliceRows(a, start) => {
                let [rows, cols] = self.shape(*a);
                let mut ga = Tensor::zeros(rows, cols);
                ga.data_mut()[start * cols..start * cols + g.len()].copy_from_slice(g.data());
                out.push((*a, ga));
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let [rows, cols] = self.shape(*p);
                    let mut data = Vec::with_capacity(rows * cols);
                    for r in 0..rows {
                        data.extend_from_slice(&g.row_slice(r)[offset..offset + cols]);
                    }
                    offset += cols;
                    out.push((*p, Tensor::new(rows, cols, data)));
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let [rows, cols] = self.shape(*p);
                    let data = g.data()[offset..offset + rows * cols].to_vec();
                    offset += rows * cols;
                    out.push((*p, Tensor::new(rows, cols, data)));
                }
            }
            Op::SumRows(a) => {
                let [rows, cols] = self.shape(*a);
                let data = (0..rows).flat_map(|r| std::iter::repeat_n(g.data()[r], cols)).collect();
                out.push((*a, Tensor::new(rows, cols, data)));
            }
            Op::MaxRows(a) => {
                let x = self.value(*a);
                let [rows, cols] = x.shape();
                let mut ga = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    let j = argmax(x.row_slice(r));
                    ga.data_mut()[r * cols + j] = g.data()[r];
                }
                out.push((*a, ga));
            }
            Op::SumAll(a) => {
                let [rows, cols] = self.shape(*a);
                out.push((*a, Tensor::filled(rows, cols, g.data()[0])));
            }
            Op::Select(a, r, c) => {
                let [rows, cols] = self.shape(*a);
                let mut ga = Tensor::zeros(rows, cols);
                ga.data_mut()[r * cols + c] = g.data()[0];
                out.push((*a, ga));
            }
            Op::GatherRows(table, ids) => {
                let [rows, cols] = self.shape(*table);
                let mut ga = Tensor::zeros(rows, cols);
                for (k, &id) in ids.iter().enumerate() {
                    for (dst, &src) in ga.data_mut()[id * cols..(id + 1) * cols].iter_mut().zip(g.row_slice(k)) {
                        *dst = *dst + src;
                    }
                }
                out.push((*table, ga));
            }
        }
        out
    }
}

fn zip<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&p, &q)| f(p, q)).collect();
    Tensor::new(a.rows(), a.cols(), data)
}

pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Index of the first maximal entry.
pub fn argmax<T: PartialOrd + Copy>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = Vec::with_capacity(x.len());
    for r in 0..x.rows() {
        let row = x.row_slice(r);
        let m = row[argmax(row)];
        let start = out.len();
        out.extend(row.iter().map(|&v| (v - m).exp()));
        let z: T = out[start..].iter().copied().sum();
        for v in &mut out[start..] {
            *v = *v / z;
        }
    }
    Tensor::new(x.rows(), x.cols(), out)
}
