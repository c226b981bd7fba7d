//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! Every operation appends a node to the [`Tape`]; node indices are
//! assigned in creation order so parents always precede children and the
//! backward sweep is a single reverse pass over the node list.
//!
//! ```
//! use mmnmt::tape::Tape;
//! use mmnmt::tensor::Tensor;
//!
//! let tape = Tape::<f64>::new();
//! let w = tape.leaf(Tensor::row(vec![2.0, -1.0]));
//! let x = tape.constant(Tensor::from_f64(&[2, 1], &[3.0, 4.0]).unwrap());
//! let y = tape.matmul(w, x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(w).unwrap().data(), &[3.0, 4.0]);
//! ```

use std::cell::RefCell;
use std::sync::Arc;

use crate::error::TensorError;
use crate::params::{ParamId, ParamSet};
use crate::tensor::{Real, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise nonlinearities used throughout the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the forward output `y = f(x)`.
    fn derivative_from_output<T: Real>(self, y: T) -> T {
        match self {
            Activation::Tanh => T::one() - y * y,
            Activation::Sigmoid => y * (T::one() - y),
        }
    }
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddN(Vec<Var>),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowBroadcast(Var, Var),
    ScaleBy(Var, Var),
    Affine(Var, T),
    Unary(Var, Activation),
    Custom(Var, fn(T) -> T),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    StackRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Reshape(Var),
    Sum(Var),
    Pick(Var, usize),
}

struct Node<T> {
    value: Arc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Records operations for one forward pass. Single-threaded; build one
/// tape per sentence (or shard) and merge gradients afterwards.
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

type OpResult = Result<Var, TensorError>;

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.push_shared(Arc::new(value), op, requires_grad, None)
    }

    fn push_shared(
        &self,
        value: Arc<Tensor<T>>,
        op: Op<T>,
        requires_grad: bool,
        param: Option<ParamId>,
    ) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
            param,
        });
        Var(nodes.len() - 1)
    }

    fn checked(&self, name: &'static str, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> OpResult {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let rg = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| nodes[p.0].requires_grad)
        };
        Ok(self.push(value, op, rg))
    }

    pub fn value(&self, v: Var) -> Arc<Tensor<T>> {
        Arc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    /// First element of a node's value; intended for `1×1` results.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes.borrow()[v.0].value.data()[0]
    }

    /// A leaf that receives no gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn constant_shared(&self, value: Arc<Tensor<T>>) -> Var {
        self.push_shared(value, Op::Leaf, false, None)
    }

    /// A free leaf that receives a gradient.
    pub fn leaf(&self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Binds a stored parameter. The tensor is shared, not copied.
    pub fn param(&self, params: &ParamSet<T>, id: ParamId) -> Var {
        self.push_shared(params.shared(id), Op::Leaf, true, Some(id))
    }

    /// Binds a stored parameter without tracking its gradient.
    pub fn frozen_param(&self, params: &ParamSet<T>, id: ParamId) -> Var {
        self.push_shared(params.shared(id), Op::Leaf, false, None)
    }

    pub fn matmul(&self, a: Var, b: Var) -> OpResult {
        let out = self.value(a).matmul(&self.value(b))?;
        self.checked("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    fn zip_same(&self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>, TensorError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(TensorError::dims(name, va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.shape(), data)
    }

    pub fn add(&self, a: Var, b: Var) -> OpResult {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        self.checked("add", out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&self, a: Var, b: Var) -> OpResult {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        self.checked("sub", out, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, a: Var, b: Var) -> OpResult {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        self.checked("mul", out, Op::Mul(a, b), &[a, b])
    }

    /// Sum of several same-shape nodes.
    pub fn add_n(&self, terms: &[Var]) -> OpResult {
        let first = terms
            .first()
            .ok_or_else(|| TensorError::Contract("add_n of zero terms".into()))?;
        let mut acc = (*self.value(*first)).clone();
        for t in &terms[1..] {
            let v = self.value(*t);
            if v.shape() != acc.shape() {
                return Err(TensorError::dims("add_n", acc.shape(), v.shape()));
            }
            acc.add_assign(&v);
        }
        self.checked("add_n", acc, Op::AddN(terms.to_vec()), terms)
    }

    /// Adds a `1×c` row to every row of an `r×c` matrix.
    pub fn add_row_broadcast(&self, m: Var, row: Var) -> OpResult {
        let (vm, vr) = (self.value(m), self.value(row));
        if vm.shape().len() != 2 || vr.rows() != 1 || vr.cols() != vm.cols() {
            return Err(TensorError::dims("add_row_broadcast", vm.shape(), vr.shape()));
        }
        let c = vm.cols();
        let data = vm
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + vr.data()[i % c])
            .collect();
        let out = Tensor::new(vm.shape(), data)?;
        self.checked("add_row_broadcast", out, Op::AddRowBroadcast(m, row), &[m, row])
    }

    /// Multiplies every element of `x` by the `1×1` node `s`.
    pub fn scale_by(&self, x: Var, s: Var) -> OpResult {
        let (vx, vs) = (self.value(x), self.value(s));
        if vs.len() != 1 {
            return Err(TensorError::dims("scale_by", vx.shape(), vs.shape()));
        }
        let k = vs.data()[0];
        let out = vx.map(|v| v * k);
        self.checked("scale_by", out, Op::ScaleBy(x, s), &[x, s])
    }

    /// `scale · x + shift`, elementwise with constant coefficients.
    pub fn affine(&self, x: Var, scale: T, shift: T) -> OpResult {
        let out = self.value(x).map(|v| scale * v + shift);
        self.checked("affine", out, Op::Affine(x, scale), &[x])
    }

    pub fn apply_unary(&self, x: Var, f: Activation) -> OpResult {
        let out = self.value(x).map(|v| f.apply(v));
        self.checked("apply_unary", out, Op::Unary(x, f), &[x])
    }

    pub fn tanh(&self, x: Var) -> OpResult {
        self.apply_unary(x, Activation::Tanh)
    }

    pub fn sigmoid(&self, x: Var) -> OpResult {
        self.apply_unary(x, Activation::Sigmoid)
    }

    /// Elementwise map with a caller-supplied derivative (evaluated at the
    /// input). Useful for experimenting with new nonlinearities.
    pub fn custom_unary(&self, x: Var, forward: fn(T) -> T, derivative: fn(T) -> T) -> OpResult {
        let out = self.value(x).map(forward);
        self.checked("custom_unary", out, Op::Custom(x, derivative), &[x])
    }

    /// Row-wise softmax, stabilised by subtracting each row's maximum.
    pub fn softmax_rows(&self, x: Var) -> OpResult {
        let out = softmax_rows(&self.value(x));
        self.checked("softmax_rows", out, Op::SoftmaxRows(x), &[x])
    }

    pub fn log_softmax_rows(&self, x: Var) -> OpResult {
        let v = self.value(x);
        let c = v.cols();
        let mut out = (*v).clone();
        for row in out.data_mut().chunks_mut(c) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<T>().ln();
            for z in row.iter_mut() {
                *z = *z - lse;
            }
        }
        self.checked("log_softmax_rows", out, Op::LogSoftmaxRows(x), &[x])
    }

    /// Horizontal concatenation of nodes with equal row counts.
    pub fn concat_cols(&self, parts: &[Var]) -> OpResult {
        let vals: Vec<_> = parts.iter().map(|p| self.value(*p)).collect();
        let rows = vals.first().map_or(0, |v| v.rows());
        if vals.is_empty() || vals.iter().any(|v| v.rows() != rows || v.shape().len() != 2) {
            return Err(TensorError::Contract("concat_cols needs rank-2 parts with equal rows".into()));
        }
        let cols: usize = vals.iter().map(|v| v.cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for v in &vals {
                data.extend_from_slice(v.row_slice(r));
            }
        }
        let out = Tensor::new(&[rows, cols], data)?;
        self.checked("concat_cols", out, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Vertical stacking of nodes with equal column counts.
    pub fn stack_rows(&self, parts: &[Var]) -> OpResult {
        let vals: Vec<_> = parts.iter().map(|p| self.value(*p)).collect();
        let cols = vals.first().map_or(0, |v| v.cols());
        if vals.is_empty() || vals.iter().any(|v| v.cols() != cols || v.shape().len() != 2) {
            return Err(TensorError::Contract("stack_rows needs rank-2 parts with equal columns".into()));
        }
        let rows: usize = vals.iter().map(|v| v.rows()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for v in &vals {
            data.extend_from_slice(v.data());
        }
        let out = Tensor::new(&[rows, cols], data)?;
        self.checked("stack_rows", out, Op::StackRows(parts.to_vec()), parts)
    }

    /// Selects rows of a table, e.g. embedding lookup.
    pub fn gather_rows(&self, table: Var, ids: &[usize]) -> OpResult {
        let t = self.value(table);
        let n = t.rows();
        if let Some(&bad) = ids.iter().find(|&&i| i >= n) {
            return Err(TensorError::Contract(format!(
                "row index {bad} out of range for table with {n} rows"
            )));
        }
        let mut data = Vec::with_capacity(ids.len() * t.cols());
        for &i in ids {
            data.extend_from_slice(t.row_slice(i));
        }
        let out = Tensor::new(&[ids.len(), t.cols()], data)?;
        self.checked("gather_rows", out, Op::GatherRows(table, ids.to_vec()), &[table])
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> OpResult {
        let out = (*self.value(x)).clone().reshape(shape)?;
        self.checked("reshape", out, Op::Reshape(x), &[x])
    }

    /// Sum of all elements as a `1×1` node.
    pub fn sum(&self, x: Var) -> OpResult {
        let out = Tensor::scalar(self.value(x).sum());
        self.checked("sum", out, Op::Sum(x), &[x])
    }

    /// One element (flat row-major index) as a `1×1` node.
    pub fn pick(&self, x: Var, flat_index: usize) -> OpResult {
        let v = self.value(x);
        let value = *v.data().get(flat_index).ok_or_else(|| {
            TensorError::Contract(format!("pick index {flat_index} out of range for {:?}", v.shape()))
        })?;
        self.checked("pick", Tensor::scalar(value), Op::Pick(x, flat_index), &[x])
    }

    /// Runs the reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, TensorError> {
        let nodes = self.nodes.borrow();
        let root = nodes
            .get(loss.0)
            .ok_or_else(|| TensorError::Contract("loss is not on this tape".into()))?;
        if root.value.len() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(root.value.shape()));

        for idx in (0..=loss.0).rev() {
            let node = &nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            propagate(&nodes, node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let mut param_nodes = Vec::new();
        for (i, n) in nodes.iter().enumerate() {
            if let Some(p) = n.param {
                param_nodes.push((p, i));
            }
        }
        Ok(Gradients { grads, param_nodes })
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], nodes: &[Node<T>], target: Var, g: Tensor<T>) {
    if !nodes[target.0].requires_grad {
        return;
    }
    match &mut grads[target.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn grad_slot<'a, T: Real>(grads: &'a mut [Option<Tensor<T>>], nodes: &[Node<T>], target: Var) -> Option<&'a mut Tensor<T>> {
    if !nodes[target.0].requires_grad {
        return None;
    }
    Some(grads[target.0].get_or_insert_with(|| Tensor::zeros(nodes[target.0].value.shape())))
}

fn propagate<T: Real>(nodes: &[Node<T>], node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
    let val = |v: Var| -> &Tensor<T> { &nodes[v.0].value };
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            if nodes[a.0].requires_grad {
                accumulate(grads, nodes, *a, g.matmul_nt(val(*b)));
            }
            if nodes[b.0].requires_grad {
                accumulate(grads, nodes, *b, val(*a).matmul_tn(g));
            }
        }
        Op::Add(a, b) => {
            accumulate(grads, nodes, *a, g.clone());
            accumulate(grads, nodes, *b, g.clone());
        }
        Op::AddN(terms) => {
            for t in terms {
                accumulate(grads, nodes, *t, g.clone());
            }
        }
        Op::Sub(a, b) => {
            accumulate(grads, nodes, *a, g.clone());
            accumulate(grads, nodes, *b, g.map(|x| -x));
        }
        Op::Mul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            if nodes[a.0].requires_grad {
                let d = g.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
                accumulate(grads, nodes, *a, Tensor::new(g.shape(), d).unwrap());
            }
            if nodes[b.0].requires_grad {
                let d = g.data().iter().zip(va.data()).map(|(&x, &y)| x * y).collect();
                accumulate(grads, nodes, *b, Tensor::new(g.shape(), d).unwrap());
            }
        }
        Op::AddRowBroadcast(m, row) => {
            accumulate(grads, nodes, *m, g.clone());
            if nodes[row.0].requires_grad {
                let c = g.cols();
                let mut r = vec![T::zero(); c];
                for (i, &x) in g.data().iter().enumerate() {
                    r[i % c] = r[i % c] + x;
                }
                accumulate(grads, nodes, *row, Tensor::new(val(*row).shape(), r).unwrap());
            }
        }
        Op::ScaleBy(x, s) => {
            let k = val(*s).data()[0];
            accumulate(grads, nodes, *x, g.map(|v| v * k));
            if nodes[s.0].requires_grad {
                let d: T = g.data().iter().zip(val(*x).data()).map(|(&a, &b)| a * b).sum();
                accumulate(grads, nodes, *s, Tensor::new(val(*s).shape(), vec![d]).unwrap());
            }
        }
        Op::Affine(x, scale) => {
            let k = *scale;
            accumulate(grads, nodes, *x, g.map(|v| v * k));
        }
        Op::Unary(x, f) => {
            let y = &node.value;
            let d = g
                .data()
                .iter()
                .zip(y.data())
                .map(|(&gi, &yi)| gi * f.derivative_from_output(yi))
                .collect();
            accumulate(grads, nodes, *x, Tensor::new(g.shape(), d).unwrap());
        }
        Op::Custom(x, deriv) => {
            let d = g
                .data()
                .iter()
                .zip(val(*x).data())
                .map(|(&gi, &xi)| gi * deriv(xi))
                .collect();
            accumulate(grads, nodes, *x, Tensor::new(g.shape(), d).unwrap());
        }
        Op::SoftmaxRows(x) => {
            // dx = y ⊙ (g − Σ g⊙y) per row
            let y = &node.value;
            let c = y.cols();
            let mut d = Vec::with_capacity(y.len());
            for (yr, gr) in y.data().chunks(c).zip(g.data().chunks(c)) {
                let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                d.extend(yr.iter().zip(gr).map(|(&yi, &gi)| yi * (gi - dot)));
            }
            accumulate(grads, nodes, *x, Tensor::new(y.shape(), d).unwrap());
        }
        Op::LogSoftmaxRows(x) => {
            // dx = g − softmax(x) · Σ g per row
            let y = &node.value;
            let c = y.cols();
            let mut d = Vec::with_capacity(y.len());
            for (yr, gr) in y.data().chunks(c).zip(g.data().chunks(c)) {
                let total: T = gr.iter().copied().sum();
                d.extend(yr.iter().zip(gr).map(|(&yi, &gi)| gi - yi.exp() * total));
            }
            accumulate(grads, nodes, *x, Tensor::new(y.shape(), d).unwrap());
        }
        Op::ConcatCols(parts) => {
            let rows = g.rows();
            let mut offset = 0;
            for p in parts {
                let pc = val(*p).cols();
                if nodes[p.0].requires_grad {
                    let mut d = Vec::with_capacity(rows * pc);
                    for r in 0..rows {
                        d.extend_from_slice(&g.row_slice(r)[offset..offset + pc]);
                    }
                    accumulate(grads, nodes, *p, Tensor::new(val(*p).shape(), d).unwrap());
                }
                offset += pc;
            }
        }
        Op::StackRows(parts) => {
            let mut offset = 0;
            for p in parts {
                let n = val(*p).len();
                if nodes[p.0].requires_grad {
                    let d = g.data()[offset..offset + n].to_vec();
                    accumulate(grads, nodes, *p, Tensor::new(val(*p).shape(), d).unwrap());
                }
                offset += n;
            }
        }
        Op::GatherRows(table, ids) => {
            if let Some(acc) = grad_slot(grads, nodes, *table) {
                let c = acc.cols();
                for (k, &i) in ids.iter().enumerate() {
                    let src = g.row_slice(k);
                    let dst = &mut acc.data_mut()[i * c..(i + 1) * c];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d = *d + s;
                    }
                }
            }
        }
        Op::Reshape(x) => {
            let d = g.clone().reshape(val(*x).shape()).unwrap();
            accumulate(grads, nodes, *x, d);
        }
        Op::Sum(x) => {
            let k = g.data()[0];
            accumulate(grads, nodes, *x, Tensor::full(val(*x).shape(), k));
        }
        Op::Pick(x, i) => {
            if let Some(acc) = grad_slot(grads, nodes, *x) {
                acc.data_mut()[*i] = acc.data_mut()[*i] + g.data()[0];
            }
        }
    }
}

/// Row-wise stabilised softmax on a plain tensor.
pub fn softmax_rows<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let c = x.cols();
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(c) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for z in row.iter_mut() {
            *z = (*z - max).exp();
            total = total + *z;
        }
        for z in row.iter_mut() {
            *z = *z / total;
        }
    }
    out
}

/// Result of [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    param_nodes: Vec<(ParamId, usize)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of a node, or `None` if it was unreachable or constant.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for every parameter in `params`, zero where unreachable.
    /// A parameter bound several times receives the sum.
    pub fn for_params(&self, params: &ParamSet<T>) -> Vec<Tensor<T>> {
        let mut out = params.zeros_like();
        self.accumulate_into(&mut out);
        out
    }

    /// Adds parameter gradients into an existing per-parameter buffer.
    pub fn accumulate_into(&self, out: &mut [Tensor<T>]) {
        for &(pid, node) in &self.param_nodes {
            if let Some(g) = &self.grads[node] {
                out[pid.0].add_assign(g);
            }
        }
    }
}
