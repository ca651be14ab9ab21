use std::borrow::Cow;
use std::collections::HashMap;

use super::param::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Reduction axis of a matrix-shaped tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Reduce over rows; `[m, n]` becomes `[1, n]`.
    Rows,
    /// Reduce over columns; `[m, n]` becomes `[m, 1]`.
    Cols,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    Transpose(Var),
    Reshape(Var),
    Elu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Ln(Var),
    Softmax(Var, Axis),
    MeanOf(Vec<Var>),
    MeanPool(Var, Axis),
    MaxPool(Var, Vec<usize>),
    Sum(Var),
    Pick(Var, usize),
}

struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// A tape of recorded tensor operations.
///
/// Nodes are appended in execution order, which is already a topological
/// order, so the backward sweep is a single reverse pass. Parameters are read
/// from a borrowed [`ParamStore`]; each parameter enters the tape once no
/// matter how often it is used.
///
/// The graph also tallies the scalar arithmetic performed by forward ops
/// (one per multiply, one per add, one per elementwise transcendental). Data
/// movement such as concatenation or slicing is free.
pub struct Graph<'p> {
    store: Option<&'p ParamStore>,
    nodes: Vec<Node<'p>>,
    param_vars: HashMap<ParamId, Var>,
    flops: u64,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Self {
            store: None,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            flops: 0,
        }
    }

    pub fn with_params(store: &'p ParamStore) -> Self {
        Self {
            store: Some(store),
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Scalar arithmetic operations executed by forward ops so far.
    pub fn flops(&self) -> u64 {
        self.flops
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A constant that takes no part in differentiation.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf whose gradient is reported by [`Graph::backward`].
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// The node holding parameter `id`, recorded on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let store = self
            .store
            .expect("graph was built without a parameter store");
        self.nodes.push(Node {
            value: Cow::Borrowed(&store.get(id).value),
            op: Op::Param,
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(self.dim_err("matmul", a, b));
        }
        let mut out = vec![0.0; m * n];
        matmul_nn(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        self.flops += 2 * (m * k * n) as u64;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), rg))
    }

    /// Affine map along the last axis: `x W (+ b)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_row(y, b),
            None => Ok(y),
        }
    }

    fn zip(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rows() != tb.rows() || ta.cols() != tb.cols() {
            return Err(self.dim_err(name, a, b));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = vec![ta.rows(), ta.cols()];
        self.flops += ta.len() as u64;
        Ok(Tensor::from_parts(shape, data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    /// Elementwise product of equal shapes.
    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.dims(b).0 == 1 && self.dims(a).0 != 1 {
            return self.mul_row(a, b);
        }
        let t = self.zip(a, b, "hadamard", |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    fn row_broadcast(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (m, n) = self.dims(a);
        let (br, bn) = self.dims(b);
        if br != 1 || bn != n {
            return Err(self.dim_err(name, a, b));
        }
        let row = self.value(b).data();
        let data = self
            .value(a)
            .data()
            .chunks(n)
            .flat_map(|r| r.iter().zip(row).map(|(&x, &y)| f(x, y)))
            .collect();
        self.flops += (m * n) as u64;
        Ok(Tensor::from_parts(vec![m, n], data))
    }

    /// `[m, n] + [1, n]`, the row added to every row.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.row_broadcast(a, b, "add_row", |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::AddRow(a, b), rg))
    }

    /// `[m, n] ⊙ [1, n]`, the row multiplied into every row.
    pub fn mul_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.row_broadcast(a, b, "mul_row", |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::MulRow(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a).map(|x| x * s);
        self.flops += t.len() as u64;
        let rg = self.rg(&[a]);
        self.push(t, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a).map(|x| x + s);
        self.flops += t.len() as u64;
        let rg = self.rg(&[a]);
        self.push(t, Op::AddScalar(a), rg)
    }

    /// Concatenation along the last axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat of nothing".into()))?;
        let m = self.dims(first).0;
        if let Some(&bad) = parts.iter().find(|&&p| self.dims(p).0 != m) {
            return Err(self.dim_err("concat_cols", first, bad));
        }
        let n: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut data = Vec::with_capacity(m * n);
        for r in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(Tensor::from_parts(vec![m, n], data), Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Concatenation along the first (row) axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat of nothing".into()))?;
        let n = self.dims(first).1;
        if let Some(&bad) = parts.iter().find(|&&p| self.dims(p).1 != n) {
            return Err(self.dim_err("concat_rows", first, bad));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let m = data.len() / n;
        let rg = self.rg(parts);
        Ok(self.push(Tensor::from_parts(vec![m, n], data), Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.dims(a);
        if start >= end || end > n {
            return Err(Error::Dimension {
                op: "slice_cols",
                left: vec![m, n],
                right: vec![start, end],
            });
        }
        let data = self
            .value(a)
            .data()
            .chunks(n)
            .flat_map(|r| r[start..end].iter().copied())
            .collect();
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor::from_parts(vec![m, end - start], data),
            Op::SliceCols(a, start),
            rg,
        ))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.dims(a);
        if start >= end || end > m {
            return Err(Error::Dimension {
                op: "slice_rows",
                left: vec![m, n],
                right: vec![start, end],
            });
        }
        let data = self.value(a).data()[start * n..end * n].to_vec();
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor::from_parts(vec![end - start, n], data),
            Op::SliceRows(a, start),
            rg,
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let src = self.value(a).data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.rg(&[a]);
        self.push(Tensor::from_parts(vec![n, m], data), Op::Transpose(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let t = self.value(a).map(f);
        let (m, n) = (t.rows(), t.cols());
        let t = Tensor::from_parts(vec![m, n], t.into_data());
        self.flops += t.len() as u64;
        let rg = self.rg(&[a]);
        self.push(t, op, rg)
    }

    /// ELU with `alpha = 1`.
    pub fn elu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Elu(a), |x| if x >= 0.0 { x } else { x.exp_m1() })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, Op::Ln(a), f64::ln)
    }

    pub fn softmax(&mut self, a: Var, axis: Axis) -> Var {
        let (m, n) = self.dims(a);
        let src = self.value(a).data();
        let mut out = vec![0.0; m * n];
        let (outer, inner, stride_outer, stride_inner) = match axis {
            Axis::Cols => (m, n, n, 1),
            Axis::Rows => (n, m, 1, n),
        };
        for o in 0..outer {
            let idx = |i: usize| o * stride_outer + i * stride_inner;
            let max = (0..inner).map(|i| src[idx(i)]).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for i in 0..inner {
                let e = (src[idx(i)] - max).exp();
                out[idx(i)] = e;
                sum += e;
            }
            for i in 0..inner {
                out[idx(i)] /= sum;
            }
        }
        self.flops += 3 * (m * n) as u64;
        let rg = self.rg(&[a]);
        self.push(Tensor::from_parts(vec![m, n], out), Op::Softmax(a, axis), rg)
    }

    /// Elementwise mean of equally shaped tensors.
    pub fn mean_of(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("mean of nothing".into()))?;
        let shape = self.value(first).shape().to_vec();
        let mut acc = self.value(first).data().to_vec();
        for &p in &parts[1..] {
            if self.value(p).shape() != shape.as_slice() {
                return Err(self.dim_err("mean_of", first, p));
            }
            for (a, b) in acc.iter_mut().zip(self.value(p).data()) {
                *a += b;
            }
        }
        let inv = 1.0 / parts.len() as f64;
        for a in &mut acc {
            *a *= inv;
        }
        self.flops += (parts.len() * acc.len()) as u64;
        let rg = self.rg(parts);
        Ok(self.push(Tensor::from_parts(shape, acc), Op::MeanOf(parts.to_vec()), rg))
    }

    pub fn mean_pool(&mut self, a: Var, axis: Axis) -> Var {
        let (m, n) = self.dims(a);
        let src = self.value(a).data();
        let (shape, data) = match axis {
            Axis::Rows => {
                let mut acc = vec![0.0; n];
                for r in src.chunks(n) {
                    for (x, y) in acc.iter_mut().zip(r) {
                        *x += y;
                    }
                }
                acc.iter_mut().for_each(|x| *x /= m as f64);
                (vec![1, n], acc)
            }
            Axis::Cols => (
                vec![m, 1],
                src.chunks(n).map(|r| r.iter().sum::<f64>() / n as f64).collect(),
            ),
        };
        self.flops += (m * n) as u64;
        let rg = self.rg(&[a]);
        self.push(Tensor::from_parts(shape, data), Op::MeanPool(a, axis), rg)
    }

    /// Max over an axis. Ties resolve to the lowest index.
    pub fn max_pool(&mut self, a: Var, axis: Axis) -> Var {
        let (m, n) = self.dims(a);
        let src = self.value(a).data();
        let (outer, inner, so, si, shape) = match axis {
            Axis::Rows => (n, m, 1, n, vec![1, n]),
            Axis::Cols => (m, n, n, 1, vec![m, 1]),
        };
        let mut data = Vec::with_capacity(outer);
        let mut argmax = Vec::with_capacity(outer);
        for o in 0..outer {
            let mut best = o * so;
            for i in 1..inner {
                let idx = o * so + i * si;
                if src[idx] > src[best] {
                    best = idx;
                }
            }
            data.push(src[best]);
            argmax.push(best);
        }
        self.flops += (m * n) as u64;
        let rg = self.rg(&[a]);
        self.push(Tensor::from_parts(shape, data), Op::MaxPool(a, argmax), rg)
    }

    /// Sum of all elements as a `[1]` scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.flops += self.value(a).len() as u64;
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Element `index` of the flattened tensor as a scalar.
    pub fn pick(&mut self, a: Var, index: usize) -> Result<Var> {
        let len = self.value(a).len();
        if index >= len {
            return Err(Error::Index { index, len });
        }
        let v = self.value(a).data()[index];
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::scalar(v), Op::Pick(a, index), rg))
    }

    fn dim_err(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::Dimension {
            op,
            left: self.shape(a).to_vec(),
            right: self.shape(b).to_vec(),
        }
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::from_parts(
            self.value(loss).shape().to_vec(),
            vec![1.0],
        ));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let params = self
            .param_vars
            .iter()
            .filter(|(_, v)| v.0 <= loss.0)
            .map(|(&id, &v)| (id, v))
            .collect();
        Ok(Gradients { grads, params })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = &self.nodes[i].value;
        let gd = g.data();
        let mut send = |v: Var, data: Vec<f64>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let shape = self.nodes[v.0].value.shape().to_vec();
            accumulate(&mut grads[v.0], shape, data);
        };
        let val = |v: Var| self.nodes[v.0].value.data();
        match &self.nodes[i].op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).1;
                if self.requires_grad(*a) {
                    let mut da = vec![0.0; m * k];
                    matmul_nt(gd, val(*b), &mut da, m, n, k);
                    send(*a, da);
                }
                if self.requires_grad(*b) {
                    let mut db = vec![0.0; k * n];
                    matmul_tn(val(*a), gd, &mut db, m, k, n);
                    send(*b, db);
                }
            }
            Op::Add(a, b) => {
                send(*a, gd.to_vec());
                send(*b, gd.to_vec());
            }
            Op::Sub(a, b) => {
                send(*a, gd.to_vec());
                send(*b, gd.iter().map(|x| -x).collect());
            }
            Op::AddRow(a, b) => {
                send(*a, gd.to_vec());
                send(*b, col_sums(gd, self.dims(*b).1));
            }
            Op::Mul(a, b) => {
                send(*a, gd.iter().zip(val(*b)).map(|(g, y)| g * y).collect());
                send(*b, gd.iter().zip(val(*a)).map(|(g, x)| g * x).collect());
            }
            Op::MulRow(a, b) => {
                let n = self.dims(*b).1;
                let row = val(*b);
                if self.requires_grad(*a) {
                    let da = gd
                        .chunks(n)
                        .flat_map(|r| r.iter().zip(row).map(|(g, y)| g * y))
                        .collect();
                    send(*a, da);
                }
                if self.requires_grad(*b) {
                    let prod: Vec<f64> = gd.iter().zip(val(*a)).map(|(g, x)| g * x).collect();
                    send(*b, col_sums(&prod, n));
                }
            }
            Op::Scale(a, s) => send(*a, gd.iter().map(|x| x * s).collect()),
            Op::AddScalar(a) => send(*a, gd.to_vec()),
            Op::ConcatCols(parts) => {
                let n = out.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.dims(p).1;
                    if self.requires_grad(p) {
                        let d = gd
                            .chunks(n)
                            .flat_map(|r| r[offset..offset + w].iter().copied())
                            .collect();
                        send(p, d);
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if self.requires_grad(p) {
                        send(p, gd[offset..offset + len].to_vec());
                    }
                    offset += len;
                }
            }
            Op::SliceCols(a, start) => {
                let n = self.dims(*a).1;
                let w = out.cols();
                let mut d = vec![0.0; self.value(*a).len()];
                for (r, gr) in gd.chunks(w).enumerate() {
                    d[r * n + start..r * n + start + w].copy_from_slice(gr);
                }
                send(*a, d);
            }
            Op::SliceRows(a, start) => {
                let n = self.dims(*a).1;
                let mut d = vec![0.0; self.value(*a).len()];
                d[start * n..start * n + gd.len()].copy_from_slice(gd);
                send(*a, d);
            }
            Op::Transpose(a) => {
                let (m, n) = self.dims(*a);
                let mut d = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        d[i * n + j] = gd[j * m + i];
                    }
                }
                send(*a, d);
            }
            Op::Reshape(a) => send(*a, gd.to_vec()),
            Op::Elu(a) => send(
                *a,
                gd.iter()
                    .zip(val(*a))
                    .zip(out.data())
                    .map(|((g, &x), &y)| if x >= 0.0 { *g } else { g * (y + 1.0) })
                    .collect(),
            ),
            Op::Sigmoid(a) => send(
                *a,
                gd.iter().zip(out.data()).map(|(g, y)| g * y * (1.0 - y)).collect(),
            ),
            Op::Tanh(a) => send(
                *a,
                gd.iter().zip(out.data()).map(|(g, y)| g * (1.0 - y * y)).collect(),
            ),
            Op::Relu(a) => send(
                *a,
                gd.iter()
                    .zip(val(*a))
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect(),
            ),
            Op::Ln(a) => send(*a, gd.iter().zip(val(*a)).map(|(g, x)| g / x).collect()),
            Op::Softmax(a, axis) => {
                let (m, n) = self.dims(*a);
                let y = out.data();
                let mut d = vec![0.0; m * n];
                let (outer, inner, so, si) = match axis {
                    Axis::Cols => (m, n, n, 1),
                    Axis::Rows => (n, m, 1, n),
                };
                for o in 0..outer {
                    let idx = |i: usize| o * so + i * si;
                    let dot: f64 = (0..inner).map(|i| gd[idx(i)] * y[idx(i)]).sum();
                    for i in 0..inner {
                        d[idx(i)] = y[idx(i)] * (gd[idx(i)] - dot);
                    }
                }
                send(*a, d);
            }
            Op::MeanOf(parts) => {
                let inv = 1.0 / parts.len() as f64;
                for &p in parts {
                    send(p, gd.iter().map(|x| x * inv).collect());
                }
            }
            Op::MeanPool(a, axis) => {
                let (m, n) = self.dims(*a);
                let d = match axis {
                    Axis::Rows => (0..m * n).map(|i| gd[i % n] / m as f64).collect(),
                    Axis::Cols => (0..m * n).map(|i| gd[i / n] / n as f64).collect(),
                };
                send(*a, d);
            }
            Op::MaxPool(a, argmax) => {
                let mut d = vec![0.0; self.value(*a).len()];
                for (g, &idx) in gd.iter().zip(argmax) {
                    d[idx] += g;
                }
                send(*a, d);
            }
            Op::Sum(a) => send(*a, vec![gd[0]; self.value(*a).len()]),
            Op::Pick(a, idx) => {
                let mut d = vec![0.0; self.value(*a).len()];
                d[*idx] = gd[0];
                send(*a, d);
            }
        }
    }
}

fn accumulate(slot: &mut Option<Tensor>, shape: Vec<usize>, data: Vec<f64>) {
    match slot {
        Some(t) => {
            for (a, b) in t.data_mut().iter_mut().zip(&data) {
                *a += b;
            }
        }
        None => *slot = Some(Tensor::from_parts(shape, data)),
    }
}

fn col_sums(data: &[f64], n: usize) -> Vec<f64> {
    let mut acc = vec![0.0; n];
    for r in data.chunks(n) {
        for (a, b) in acc.iter_mut().zip(r) {
            *a += b;
        }
    }
    acc
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `c[m,n] += a[m,k] b[k,n]`
fn matmul_nn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let ci = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let bp = &b[p * n..(p + 1) * n];
            for (x, y) in ci.iter_mut().zip(bp) {
                *x += aip * y;
            }
        }
    }
}

/// `c[m,k] += g[m,n] b[k,n]^T`
fn matmul_nt(g: &[f64], b: &[f64], c: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let gi = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let bp = &b[p * n..(p + 1) * n];
            c[i * k + p] += gi.iter().zip(bp).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `c[k,n] += a[m,k]^T g[m,n]`
fn matmul_tn(a: &[f64], g: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let gi = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let cp = &mut c[p * n..(p + 1) * n];
            for (x, y) in cp.iter_mut().zip(gi) {
                *x += aip * y;
            }
        }
    }
}

/// Gradients produced by one backward sweep.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient with respect to any recorded node; `None` when the node does
    /// not influence the loss or does not participate in differentiation.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|(_, v)| self.wrt(*v))
    }

    /// Parameters that received a gradient, in store order.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        let mut ps: Vec<_> = self
            .params
            .iter()
            .filter_map(|&(id, v)| self.wrt(v).map(|g| (id, g)))
            .collect();
        ps.sort_by_key(|(id, _)| *id);
        ps.into_iter()
    }
}
