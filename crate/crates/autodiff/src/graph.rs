//! Define-by-run computation graph.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and the backward pass is a single reverse sweep. A graph
//! is built for one forward pass and dropped afterwards.

use std::cell::Cell;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LogSumExpRows(Var),
    Gather(Var, Vec<usize>),
    L2NormRows(Var),
    Reshape(Var),
    RepeatRows(Var, usize),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    SelectRows(Var, Vec<usize>),
    ExpandAdd(Var, Var, usize),
    PairReluScore(Var, Var, Var, usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Per-node gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    visits: Cell<usize>,
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::mismatch(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = t.data().iter().map(|&x| f(x)).collect();
    Tensor::new(t.shape().to_vec(), data).expect("same shape")
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

/// Shape of a per-row reduction: the last axis is dropped.
fn reduced_shape(shape: &[usize]) -> Vec<usize> {
    match shape.split_last() {
        Some((_, lead)) => lead.to_vec(),
        None => Vec::new(),
    }
}

fn need_rows(op: &'static str, t: &Tensor) -> Result<()> {
    if t.shape().is_empty() || t.row_len() == 0 {
        return Err(Error::invalid(op, format!("needs a non-empty last axis, got {:?}", t.shape())));
    }
    Ok(())
}

fn need_2d(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    t.dims2()
        .ok_or_else(|| Error::invalid(op, format!("expects a 2-D tensor, got {:?}", t.shape())))
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    // The arg-max term contributes exactly 1; the rest go through ln_1p.
    let top = row.iter().position(|&x| x == max).expect("max is an element");
    let rest: f64 = row
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != top)
        .map(|(_, &x)| (x - max).exp())
        .sum();
    max + rest.ln_1p()
}

/// `c = a · b` for row-major `a: m×k`, `b: k×n`.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    /// Number of nodes touched by the most recent backward pass.
    pub fn backward_visits(&self) -> usize {
        self.visits.get()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn param_nodes(&self) -> impl Iterator<Item = (Var, ParamId)> + '_ {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match n.op {
            Op::Param(id) => Some((Var(i), id)),
            _ => None,
        })
    }

    /// Constant input; receives a gradient but is not a parameter.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = need_2d("matmul", ta)?;
        let (k2, n) = need_2d("matmul", tb)?;
        if k != k2 {
            return Err(Error::mismatch("matmul", ta.shape(), tb.shape()));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(ta.data(), tb.data(), &mut out, m, k, n);
        let value = Tensor::matrix(m, n, out)?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("div", self.value(a), self.value(b))?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x / y);
        Ok(self.push(v, Op::Div(a, b)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = map(self.value(a), |x| k * x);
        self.push(v, Op::Scale(a, k))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = map(self.value(a), |x| x + c);
        self.push(v, Op::Offset(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = map(self.value(a), |x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = map(self.value(a), f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = map(self.value(a), f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = map(self.value(a), f64::ln);
        self.push(v, Op::Log(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = map(self.value(a), f64::abs);
        self.push(v, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = map(self.value(a), |x| x * x);
        self.push(v, Op::Square(a))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.numel() == 0 {
            return Err(Error::invalid("mean", "empty tensor"));
        }
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        Ok(self.push(Tensor::scalar(s), Op::Mean(a)))
    }

    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        need_rows("sum_rows", t)?;
        let data = (0..t.row_count()).map(|r| t.row(r).iter().sum()).collect();
        let v = Tensor::new(reduced_shape(t.shape()), data)?;
        Ok(self.push(v, Op::SumRows(a)))
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        need_rows("softmax", t)?;
        let mut out = Vec::with_capacity(t.numel());
        for r in 0..t.row_count() {
            let row = t.row(r);
            let lse = log_sum_exp(row);
            out.extend(row.iter().map(|&x| (x - lse).exp()));
        }
        let v = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(v, Op::Softmax(a)))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        need_rows("log_softmax", t)?;
        let mut out = Vec::with_capacity(t.numel());
        for r in 0..t.row_count() {
            let row = t.row(r);
            let lse = log_sum_exp(row);
            out.extend(row.iter().map(|&x| x - lse));
        }
        let v = Tensor::new(t.shape().to_vec(), out)?;
        Ok(self.push(v, Op::LogSoftmax(a)))
    }

    pub fn logsumexp_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        need_rows("logsumexp_rows", t)?;
        let data = (0..t.row_count()).map(|r| log_sum_exp(t.row(r))).collect();
        let v = Tensor::new(reduced_shape(t.shape()), data)?;
        Ok(self.push(v, Op::LogSumExpRows(a)))
    }

    /// Picks `indices[r]` from row `r`.
    pub fn gather(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(a);
        need_rows("gather", t)?;
        if indices.len() != t.row_count() {
            return Err(Error::mismatch("gather", t.shape(), &[indices.len()]));
        }
        let len = t.row_len();
        let mut data = Vec::with_capacity(indices.len());
        for (r, &i) in indices.iter().enumerate() {
            if i >= len {
                return Err(Error::invalid("gather", format!("index {i} out of range for row length {len}")));
            }
            data.push(t.row(r)[i]);
        }
        let v = Tensor::new(reduced_shape(t.shape()), data)?;
        Ok(self.push(v, Op::Gather(a, indices.to_vec())))
    }

    /// Euclidean norm of each row.
    pub fn l2norm(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        need_rows("l2norm", t)?;
        let data = (0..t.row_count())
            .map(|r| t.row(r).iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        let v = Tensor::new(reduced_shape(t.shape()), data)?;
        Ok(self.push(v, Op::L2NormRows(a)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshape(shape)?;
        Ok(self.push(v, Op::Reshape(a)))
    }

    /// Stacks `n` copies of a `1×c` row (or a length-`c` vector) into `n×c`.
    pub fn repeat_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let t = self.value(a);
        let c = match t.shape() {
            [c] => *c,
            [1, c] => *c,
            s => return Err(Error::invalid("repeat_rows", format!("expects a single row, got {s:?}"))),
        };
        let mut data = Vec::with_capacity(n * c);
        for _ in 0..n {
            data.extend_from_slice(t.data());
        }
        let v = Tensor::matrix(n, c, data)?;
        Ok(self.push(v, Op::RepeatRows(a, n)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat_cols", "no inputs"))?;
        let (rows, _) = need_2d("concat_cols", self.value(*first))?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (r, c) = need_2d("concat_cols", self.value(*p))?;
            if r != rows {
                return Err(Error::mismatch("concat_cols", self.value(*first).shape(), self.value(*p).shape()));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let v = Tensor::matrix(rows, total, data)?;
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    /// Columns `start..end` of a 2-D tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        let (rows, cols) = need_2d("slice_cols", t)?;
        if start >= end || end > cols {
            return Err(Error::invalid("slice_cols", format!("range {start}..{end} invalid for {cols} columns")));
        }
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&t.row(r)[start..end]);
        }
        let v = Tensor::matrix(rows, end - start, data)?;
        Ok(self.push(v, Op::SliceCols(a, start, end)))
    }

    /// Rows of a 2-D tensor in the given order (repeats allowed).
    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let (n, cols) = need_2d("select_rows", t)?;
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            if r >= n {
                return Err(Error::invalid("select_rows", format!("row {r} out of range for {n} rows")));
            }
            data.extend_from_slice(t.row(r));
        }
        let v = Tensor::matrix(rows.len(), cols, data)?;
        Ok(self.push(v, Op::SelectRows(a, rows.to_vec())))
    }

    /// Pairs every row of `z: b×h` with a group of `group` rows of `a` and adds them.
    ///
    /// `a` is either `group×h` (one candidate set shared by every row of `z`)
    /// or `(b·group)×h` (a private candidate set per row). The result is
    /// `(b·group)×h` with row `i·group + j` equal to `z[i] + a[j]` or
    /// `z[i] + a[i·group + j]` respectively.
    pub fn expand_add(&mut self, z: Var, a: Var, group: usize) -> Result<Var> {
        let (tz, ta) = (self.value(z), self.value(a));
        let (b, h) = need_2d("expand_add", tz)?;
        let (m, h2) = need_2d("expand_add", ta)?;
        if group == 0 || h != h2 || (m != group && m != b * group) {
            return Err(Error::mismatch("expand_add", tz.shape(), ta.shape()));
        }
        let shared = m == group;
        let mut data = Vec::with_capacity(b * group * h);
        for i in 0..b {
            let zr = tz.row(i);
            for j in 0..group {
                let ar = if shared { ta.row(j) } else { ta.row(i * group + j) };
                data.extend(zr.iter().zip(ar).map(|(x, y)| x + y));
            }
        }
        let v = Tensor::matrix(b * group, h, data)?;
        Ok(self.push(v, Op::ExpandAdd(z, a, group)))
    }

    /// `out[i, j] = Σ_k w[k] · relu(z[i, k] + a[r, k])` with `r` as in
    /// [`Graph::expand_add`]; `z` is `B×h`, `w` is `h×1`, the result `B×group`.
    /// Equivalent to `expand_add`, `relu`, `matmul` and `reshape` without the
    /// `B·group×h` intermediates.
    pub fn pair_relu_score(&mut self, z: Var, a: Var, w: Var, group: usize) -> Result<Var> {
        let (tz, ta, tw) = (self.value(z), self.value(a), self.value(w));
        let (b, h) = need_2d("pair_relu_score", tz)?;
        let (m, h2) = need_2d("pair_relu_score", ta)?;
        if group == 0 || h != h2 || (m != group && m != b * group) || tw.numel() != h {
            return Err(Error::mismatch("pair_relu_score", tz.shape(), ta.shape()));
        }
        let shared = m == group;
        let wv = tw.data();
        let mut data = Vec::with_capacity(b * group);
        for i in 0..b {
            let zr = tz.row(i);
            for j in 0..group {
                let ar = if shared { ta.row(j) } else { ta.row(i * group + j) };
                let mut e = 0.0;
                for ((&zk, &ak), &wk) in zr.iter().zip(ar).zip(wv) {
                    let p = zk + ak;
                    if p > 0.0 {
                        e += wk * p;
                    }
                }
                data.push(e);
            }
        }
        let v = Tensor::matrix(b, group, data)?;
        Ok(self.push(v, Op::PairReluScore(z, a, w, group)))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lt.shape(), 1.0));
        let mut visits = 0;
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            visits += 1;
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        self.visits.set(visits);
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k) = ta.dims2().unwrap();
                let (_, n) = tb.dims2().unwrap();
                let gd = g.data();
                // dA = dC · Bᵀ
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    let grow = &gd[i * n..(i + 1) * n];
                    for p in 0..k {
                        let brow = &tb.data()[p * n..(p + 1) * n];
                        da[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                    }
                }
                // dB = Aᵀ · dC
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    let grow = &gd[i * n..(i + 1) * n];
                    for p in 0..k {
                        let av = ta.data()[i * k + p];
                        if av == 0.0 {
                            continue;
                        }
                        let dbrow = &mut db[p * n..(p + 1) * n];
                        for (d, &gv) in dbrow.iter_mut().zip(grow) {
                            *d += av * gv;
                        }
                    }
                }
                accumulate(grads, *a, Tensor::matrix(m, k, da).unwrap());
                accumulate(grads, *b, Tensor::matrix(k, n, db).unwrap());
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, map(g, |x| -x));
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, zip_map(g, val(*b), |x, y| x * y));
                accumulate(grads, *b, zip_map(g, val(*a), |x, y| x * y));
            }
            Op::Div(a, b) => {
                let tb = val(*b);
                accumulate(grads, *a, zip_map(g, tb, |x, y| x / y));
                let gb = zip_map(&zip_map(g, out, |x, y| x * y), tb, |x, y| -x / y);
                accumulate(grads, *b, gb);
            }
            Op::Scale(a, k) => accumulate(grads, *a, map(g, |x| k * x)),
            Op::Offset(a) => accumulate(grads, *a, g.clone()),
            Op::Relu(a) => accumulate(grads, *a, zip_map(g, val(*a), |x, y| if y > 0.0 { x } else { 0.0 })),
            Op::Tanh(a) => accumulate(grads, *a, zip_map(g, out, |x, y| x * (1.0 - y * y))),
            Op::Exp(a) => accumulate(grads, *a, zip_map(g, out, |x, y| x * y)),
            Op::Log(a) => accumulate(grads, *a, zip_map(g, val(*a), |x, y| x / y)),
            Op::Abs(a) => accumulate(grads, *a, zip_map(g, val(*a), |x, y| x * sign(y))),
            Op::Square(a) => accumulate(grads, *a, zip_map(g, val(*a), |x, y| 2.0 * x * y)),
            Op::Sum(a) => {
                let s = g.item();
                accumulate(grads, *a, Tensor::full(val(*a).shape(), s));
            }
            Op::Mean(a) => {
                let t = val(*a);
                let s = g.item() / t.numel() as f64;
                accumulate(grads, *a, Tensor::full(t.shape(), s));
            }
            Op::SumRows(a) => {
                let t = val(*a);
                let len = t.row_len();
                let data = g.data().iter().flat_map(|&x| std::iter::repeat(x).take(len)).collect();
                accumulate(grads, *a, Tensor::new(t.shape().to_vec(), data).unwrap());
            }
            Op::Softmax(a) => {
                let len = out.row_len();
                let mut data = Vec::with_capacity(out.numel());
                for r in 0..out.row_count() {
                    let (y, gr) = (out.row(r), &g.data()[r * len..(r + 1) * len]);
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    data.extend(y.iter().zip(gr).map(|(yi, gi)| yi * (gi - dot)));
                }
                accumulate(grads, *a, Tensor::new(out.shape().to_vec(), data).unwrap());
            }
            Op::LogSoftmax(a) => {
                let len = out.row_len();
                let mut data = Vec::with_capacity(out.numel());
                for r in 0..out.row_count() {
                    let (y, gr) = (out.row(r), &g.data()[r * len..(r + 1) * len]);
                    let total: f64 = gr.iter().sum();
                    data.extend(y.iter().zip(gr).map(|(yi, gi)| gi - yi.exp() * total));
                }
                accumulate(grads, *a, Tensor::new(out.shape().to_vec(), data).unwrap());
            }
            Op::LogSumExpRows(a) => {
                let t = val(*a);
                let mut data = Vec::with_capacity(t.numel());
                for r in 0..t.row_count() {
                    let lse = out.data()[r];
                    let gr = g.data()[r];
                    data.extend(t.row(r).iter().map(|&x| gr * (x - lse).exp()));
                }
                accumulate(grads, *a, Tensor::new(t.shape().to_vec(), data).unwrap());
            }
            Op::Gather(a, indices) => {
                let t = val(*a);
                let len = t.row_len();
                let mut ga = Tensor::zeros(t.shape());
                for (r, &i) in indices.iter().enumerate() {
                    ga.data_mut()[r * len + i] = g.data()[r];
                }
                accumulate(grads, *a, ga);
            }
            Op::L2NormRows(a) => {
                let t = val(*a);
                let len = t.row_len();
                let mut data = Vec::with_capacity(t.numel());
                for r in 0..t.row_count() {
                    let norm = out.data()[r];
                    let gr = g.data()[r];
                    // Subgradient 0 at the origin.
                    let k = if norm > 0.0 { gr / norm } else { 0.0 };
                    data.extend(t.row(r).iter().map(|&x| k * x));
                }
                debug_assert_eq!(data.len(), t.row_count() * len);
                accumulate(grads, *a, Tensor::new(t.shape().to_vec(), data).unwrap());
            }
            Op::Reshape(a) => {
                let shape = val(*a).shape().to_vec();
                accumulate(grads, *a, g.clone().reshape(&shape).unwrap());
            }
            Op::RepeatRows(a, n) => {
                let t = val(*a);
                let c = t.numel();
                let mut data = vec![0.0; c];
                for r in 0..*n {
                    for (d, &x) in data.iter_mut().zip(&g.data()[r * c..(r + 1) * c]) {
                        *d += x;
                    }
                }
                accumulate(grads, *a, Tensor::new(t.shape().to_vec(), data).unwrap());
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = out.dims2().unwrap();
                let mut offset = 0;
                for p in parts {
                    let (_, c) = val(*p).dims2().unwrap();
                    let mut data = Vec::with_capacity(rows * c);
                    for r in 0..rows {
                        data.extend_from_slice(&g.data()[r * total + offset..r * total + offset + c]);
                    }
                    accumulate(grads, *p, Tensor::matrix(rows, c, data).unwrap());
                    offset += c;
                }
            }
            Op::SliceCols(a, start, end) => {
                let t = val(*a);
                let (rows, cols) = t.dims2().unwrap();
                let w = end - start;
                let mut ga = Tensor::zeros(t.shape());
                for r in 0..rows {
                    ga.data_mut()[r * cols + start..r * cols + end].copy_from_slice(&g.data()[r * w..(r + 1) * w]);
                }
                accumulate(grads, *a, ga);
            }
            Op::SelectRows(a, rows) => {
                let t = val(*a);
                let cols = t.row_len();
                let mut ga = Tensor::zeros(t.shape());
                for (k, &r) in rows.iter().enumerate() {
                    for (d, &x) in ga.data_mut()[r * cols..(r + 1) * cols]
                        .iter_mut()
                        .zip(&g.data()[k * cols..(k + 1) * cols])
                    {
                        *d += x;
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::ExpandAdd(z, a, group) => {
                let (tz, ta) = (val(*z), val(*a));
                let (b, h) = tz.dims2().unwrap();
                let (m, _) = ta.dims2().unwrap();
                let shared = m == *group;
                let mut gz = vec![0.0; b * h];
                let mut ga = vec![0.0; m * h];
                for i in 0..b {
                    for j in 0..*group {
                        let row = i * group + j;
                        let gr = &g.data()[row * h..(row + 1) * h];
                        for (d, &x) in gz[i * h..(i + 1) * h].iter_mut().zip(gr) {
                            *d += x;
                        }
                        let arow = if shared { j } else { row };
                        for (d, &x) in ga[arow * h..(arow + 1) * h].iter_mut().zip(gr) {
                            *d += x;
                        }
                    }
                }
                accumulate(grads, *z, Tensor::matrix(b, h, gz).unwrap());
                accumulate(grads, *a, Tensor::matrix(m, h, ga).unwrap());
            }
            Op::PairReluScore(z, a, w, group) => {
                let (tz, ta, tw) = (val(*z), val(*a), val(*w));
                let (b, h) = tz.dims2().unwrap();
                let (m, _) = ta.dims2().unwrap();
                let shared = m == *group;
                let wv = tw.data();
                let mut gz = vec![0.0; b * h];
                let mut ga = vec![0.0; m * h];
                let mut gw = vec![0.0; h];
                for i in 0..b {
                    let zr = tz.row(i);
                    for j in 0..*group {
                        let gij = g.data()[i * group + j];
                        if gij == 0.0 {
                            continue;
                        }
                        let arow = if shared { j } else { i * group + j };
                        let ar = ta.row(arow);
                        for k in 0..h {
                            let p = zr[k] + ar[k];
                            if p > 0.0 {
                                gw[k] += gij * p;
                                let d = gij * wv[k];
                                gz[i * h + k] += d;
                                ga[arow * h + k] += d;
                            }
                        }
                    }
                }
                accumulate(grads, *z, Tensor::matrix(b, h, gz).unwrap());
                accumulate(grads, *a, Tensor::matrix(m, h, ga).unwrap());
                accumulate(grads, *w, Tensor::new(tw.shape().to_vec(), gw).unwrap());
            }
        }
    }
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

fn accumulate(grads: &mut [Option<Tensor>], var: Var, g: Tensor) {
    match &mut grads[var.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
