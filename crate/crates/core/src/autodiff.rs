//! Reverse-mode automatic differentiation on a dynamic tape.
//!
//! A [`Tape`] records every operation of one forward pass as a node holding
//! its value. [`Tape::backward`] walks the nodes in reverse creation order,
//! which is a topological order because a node can only reference nodes
//! created before it. Gradients of leaf nodes (parameters and variables)
//! accumulate across `backward` calls until [`Tape::zero_grad`].
//!
//! A tape belongs to one thread. Several tapes may read the same
//! [`ParamStore`] concurrently; their [`Gradients`] are merged afterwards.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::params::{Gradients, ParamId, ParamStore};
use crate::tensor::{gemm, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryOp {
    Sigmoid,
    Tanh,
    Exp,
    Log,
    Relu,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Binary(BinaryOp, Var, Var),
    Scale(Var, f64),
    Unary(UnaryOp, Var),
    ClampMin(Var, f64),
    Softmax(Var),
    Transpose(Var),
    Reshape(Var),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Arc<Vec<usize>>),
    Sum(Var),
    Mean(Var),
    KlDiv(Arc<Tensor>, Var, f64),
}

#[derive(Debug)]
struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    leaf_grads: HashMap<usize, Tensor>,
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.push_shared(Arc::new(value), op, requires_grad)
    }

    fn push_shared(&mut self, value: Arc<Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn constant_shared(&mut self, t: Arc<Tensor>) -> Var {
        self.push_shared(t, Op::Leaf, false)
    }

    /// Free leaf that receives a gradient (used by gradient checks).
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Register a parameter; repeated calls on the same tape return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push_shared(store.shared(id), Op::Param, true);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2();
        let (k2, n) = self.value(b).dims2();
        if k != k2 {
            return Err(Error::shape("matmul", format!("[{m}×{k}]·[{k2}×{n}]")));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, 0.0);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_raw(vec![m, n], out), Op::MatMul(a, b), rg))
    }

    /// Elementwise binary op with broadcasting of unit rows/columns.
    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let out_shape = broadcast_shape(ta, tb).ok_or_else(|| {
            Error::shape("elementwise", format!("{:?} vs {:?}", ta.shape(), tb.shape()))
        })?;
        let f = match op {
            BinaryOp::Add => |x: f64, y: f64| x + y,
            BinaryOp::Sub => |x: f64, y: f64| x - y,
            BinaryOp::Mul => |x: f64, y: f64| x * y,
        };
        let out = broadcast_apply(ta, tb, &out_shape, f);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Binary(op, a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let t = self.value(a);
        let out = Tensor::from_raw(t.shape().to_vec(), t.data().iter().map(|x| x * k).collect());
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, k), rg)
    }

    pub fn unary(&mut self, op: UnaryOp, a: Var) -> Result<Var> {
        let t = self.value(a);
        let f: fn(f64) -> f64 = match op {
            UnaryOp::Sigmoid => sigmoid,
            UnaryOp::Tanh => f64::tanh,
            UnaryOp::Exp => f64::exp,
            UnaryOp::Relu => |x| x.max(0.0),
            UnaryOp::Log => {
                if let Some(x) = t.data().iter().find(|&&x| x <= 0.0) {
                    return Err(Error::Domain { op: "log", detail: format!("argument {x} ≤ 0") });
                }
                f64::ln
            }
        };
        let out = Tensor::from_raw(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect());
        let rg = self.rg(a);
        Ok(self.push(out, Op::Unary(op, a), rg))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Sigmoid, a).expect("sigmoid is total")
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Tanh, a).expect("tanh is total")
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Exp, a).expect("exp is total")
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Relu, a).expect("relu is total")
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryOp::Log, a)
    }

    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        let t = self.value(a);
        let out = Tensor::from_raw(t.shape().to_vec(), t.data().iter().map(|x| x.max(floor)).collect());
        let rg = self.rg(a);
        self.push(out, Op::ClampMin(a, floor), rg)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (r, c) = t.dims2();
        let mut out = t.data().to_vec();
        for i in 0..r {
            softmax_in_place(&mut out[i * c..(i + 1) * c], None);
        }
        let rg = self.rg(a);
        self.push(Tensor::from_raw(t.shape().to_vec(), out), Op::Softmax(a), rg)
    }

    /// Row-wise softmax where columns with `keep[j] == false` get weight exactly 0.
    pub fn masked_softmax(&mut self, a: Var, keep: &[bool]) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = t.dims2();
        if keep.len() != c || !keep.iter().any(|&k| k) {
            return Err(Error::shape("masked_softmax", "mask must match columns and keep one entry"));
        }
        let mut out = t.data().to_vec();
        for i in 0..r {
            softmax_in_place(&mut out[i * c..(i + 1) * c], Some(keep));
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_raw(t.shape().to_vec(), out), Op::Softmax(a), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (r, c) = t.dims2();
        let d = t.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = d[i * c + j];
            }
        }
        let rg = self.rg(a);
        self.push(Tensor::from_raw(vec![c, r], out), Op::Transpose(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(a).clone().reshaped(shape)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = t.dims2();
        if start + len > c {
            return Err(Error::shape("slice_cols", format!("{start}+{len} > {c}")));
        }
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&t.data()[i * c + start..i * c + start + len]);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_raw(vec![r, len], out), Op::SliceCols(a, start), rg))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = t.dims2();
        if start + len > r {
            return Err(Error::shape("slice_rows", format!("{start}+{len} > {r}")));
        }
        let out = t.data()[start * c..(start + len) * c].to_vec();
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_raw(vec![len, c], out), Op::SliceRows(a, start), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = parts.first().map(|&p| self.value(p).rows()).unwrap_or(0);
        if parts.is_empty() || parts.iter().any(|&p| self.value(p).rows() != r) {
            return Err(Error::shape("concat_cols", "row counts differ"));
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::from_raw(vec![r, total], out), Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = parts.first().map(|&p| self.value(p).cols()).unwrap_or(0);
        if parts.is_empty() || parts.iter().any(|&p| self.value(p).cols() != c) {
            return Err(Error::shape("concat_rows", "column counts differ"));
        }
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let r = out.len() / c.max(1);
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::from_raw(vec![r, c], out), Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn gather_rows(&mut self, a: Var, rows: Arc<Vec<usize>>) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = t.dims2();
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(Error::shape("gather_rows", format!("row {bad} of {r}")));
        }
        let mut out = Vec::with_capacity(rows.len() * c);
        for &i in rows.iter() {
            out.extend_from_slice(t.row(i));
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::from_raw(vec![rows.len(), c], out), Op::GatherRows(a, rows), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.sum() / t.numel().max(1) as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Mean over rows of `KL(target_row ‖ q_row)`, with `q` floored at `floor` and
    /// renormalised before the logarithm. Target entries equal to 0 contribute 0.
    pub fn kl_div(&mut self, target: Arc<Tensor>, q: Var, floor: f64) -> Result<Var> {
        let qt = self.value(q);
        if target.dims2() != qt.dims2() {
            return Err(Error::shape("kl_div", format!("{:?} vs {:?}", target.shape(), qt.shape())));
        }
        let (r, c) = qt.dims2();
        let mut total = 0.0;
        for i in 0..r {
            let p = target.row(i);
            check_distribution(p)?;
            total += kl_row(p, qt.row(i), floor);
        }
        let rg = self.rg(q);
        let _ = c;
        Ok(self.push(Tensor::scalar(total / r as f64), Op::KlDiv(target, q, floor), rg))
    }

    /// Accumulate `d loss / d leaf` into every reachable leaf that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            match &node.op {
                Op::Leaf | Op::Param => {
                    match self.leaf_grads.get_mut(&i) {
                        Some(acc) => acc.add_assign(&g),
                        None => {
                            self.leaf_grads.insert(i, g);
                        }
                    }
                }
                op => self.propagate(op, &node.value, &g, &mut adj),
            }
        }
        Ok(())
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &Tensor, adj: &mut [Option<Tensor>]) {
        match *op {
            Op::Leaf | Op::Param => unreachable!(),
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(a), self.value(b));
                let (m, k) = ta.dims2();
                let n = tb.cols();
                if self.rg(a) {
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, tb.data(), true, &mut ga, 0.0);
                    acc(adj, a, Tensor::from_raw(ta.shape().to_vec(), ga));
                }
                if self.rg(b) {
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, ta.data(), true, g.data(), false, &mut gb, 0.0);
                    acc(adj, b, Tensor::from_raw(tb.shape().to_vec(), gb));
                }
            }
            Op::Binary(bop, a, b) => {
                let (ta, tb) = (self.value(a), self.value(b));
                let (r, c) = out.dims2();
                if self.rg(a) {
                    let ga = match bop {
                        BinaryOp::Add | BinaryOp::Sub => g.clone(),
                        BinaryOp::Mul => elementwise_with(g, tb, r, c, |gv, y| gv * y),
                    };
                    acc(adj, a, reduce_to(&ga, ta));
                }
                if self.rg(b) {
                    let gb = match bop {
                        BinaryOp::Add => g.clone(),
                        BinaryOp::Sub => Tensor::from_raw(
                            g.shape().to_vec(),
                            g.data().iter().map(|v| -v).collect(),
                        ),
                        BinaryOp::Mul => elementwise_with(g, ta, r, c, |gv, x| gv * x),
                    };
                    acc(adj, b, reduce_to(&gb, tb));
                }
            }
            Op::Scale(a, k) => {
                let ga = g.data().iter().map(|v| v * k).collect();
                acc(adj, a, Tensor::from_raw(g.shape().to_vec(), ga));
            }
            Op::Unary(uop, a) => {
                let x = self.value(a).data();
                let y = out.data();
                let gd = g.data();
                let ga: Vec<f64> = match uop {
                    UnaryOp::Sigmoid => (0..gd.len()).map(|i| gd[i] * y[i] * (1.0 - y[i])).collect(),
                    UnaryOp::Tanh => (0..gd.len()).map(|i| gd[i] * (1.0 - y[i] * y[i])).collect(),
                    UnaryOp::Exp => (0..gd.len()).map(|i| gd[i] * y[i]).collect(),
                    UnaryOp::Log => (0..gd.len()).map(|i| gd[i] / x[i]).collect(),
                    UnaryOp::Relu => {
                        (0..gd.len()).map(|i| if x[i] > 0.0 { gd[i] } else { 0.0 }).collect()
                    }
                };
                acc(adj, a, Tensor::from_raw(g.shape().to_vec(), ga));
            }
            Op::ClampMin(a, floor) => {
                let x = self.value(a).data();
                let ga = g
                    .data()
                    .iter()
                    .zip(x)
                    .map(|(gv, &xv)| if xv > floor { *gv } else { 0.0 })
                    .collect();
                acc(adj, a, Tensor::from_raw(g.shape().to_vec(), ga));
            }
            Op::Softmax(a) => {
                let (r, c) = out.dims2();
                let (y, gd) = (out.data(), g.data());
                let mut ga = vec![0.0; r * c];
                for i in 0..r {
                    let row = i * c..(i + 1) * c;
                    let dot: f64 = y[row.clone()].iter().zip(&gd[row.clone()]).map(|(a, b)| a * b).sum();
                    for j in row {
                        ga[j] = y[j] * (gd[j] - dot);
                    }
                }
                acc(adj, a, Tensor::from_raw(out.shape().to_vec(), ga));
            }
            Op::Transpose(a) => {
                let (r, c) = out.dims2();
                let gd = g.data();
                let mut ga = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        ga[j * r + i] = gd[i * c + j];
                    }
                }
                acc(adj, a, Tensor::from_raw(self.value(a).shape().to_vec(), ga));
            }
            Op::Reshape(a) => {
                acc(adj, a, Tensor::from_raw(self.value(a).shape().to_vec(), g.data().to_vec()));
            }
            Op::SliceCols(a, start) => {
                let src = self.value(a);
                let (r, c) = src.dims2();
                let len = out.cols();
                let mut ga = vec![0.0; r * c];
                for i in 0..r {
                    ga[i * c + start..i * c + start + len].copy_from_slice(g.row(i));
                }
                acc(adj, a, Tensor::from_raw(src.shape().to_vec(), ga));
            }
            Op::SliceRows(a, start) => {
                let src = self.value(a);
                let (r, c) = src.dims2();
                let mut ga = vec![0.0; r * c];
                ga[start * c..start * c + g.numel()].copy_from_slice(g.data());
                acc(adj, a, Tensor::from_raw(src.shape().to_vec(), ga));
            }
            Op::ConcatCols(ref parts) => {
                let r = out.rows();
                let mut offset = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    if self.rg(p) {
                        let mut gp = Vec::with_capacity(r * pc);
                        for i in 0..r {
                            gp.extend_from_slice(&g.row(i)[offset..offset + pc]);
                        }
                        acc(adj, p, Tensor::from_raw(self.value(p).shape().to_vec(), gp));
                    }
                    offset += pc;
                }
            }
            Op::ConcatRows(ref parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    if self.rg(p) {
                        let gp = g.data()[offset..offset + n].to_vec();
                        acc(adj, p, Tensor::from_raw(self.value(p).shape().to_vec(), gp));
                    }
                    offset += n;
                }
            }
            Op::GatherRows(a, ref rows) => {
                let src = self.value(a);
                let (r, c) = src.dims2();
                let mut ga = vec![0.0; r * c];
                for (k, &i) in rows.iter().enumerate() {
                    for (dst, v) in ga[i * c..(i + 1) * c].iter_mut().zip(g.row(k)) {
                        *dst += v;
                    }
                }
                acc(adj, a, Tensor::from_raw(src.shape().to_vec(), ga));
            }
            Op::Sum(a) => {
                acc(adj, a, Tensor::full(self.value(a).shape(), g.item()));
            }
            Op::Mean(a) => {
                let t = self.value(a);
                acc(adj, a, Tensor::full(t.shape(), g.item() / t.numel() as f64));
            }
            Op::KlDiv(ref target, q, floor) => {
                let qt = self.value(q);
                let (r, c) = qt.dims2();
                let scale = g.item() / r as f64;
                let mut gq = vec![0.0; r * c];
                for i in 0..r {
                    let p = target.row(i);
                    let qr = qt.row(i);
                    let s = floored_mass(p, qr, floor);
                    let psum: f64 = p.iter().sum();
                    for j in 0..c {
                        let clamped = p[j] > 0.0 && qr[j] <= floor;
                        if !clamped {
                            let own = if p[j] > 0.0 { p[j] / qr[j] } else { 0.0 };
                            gq[i * c + j] = scale * (psum / s - own);
                        }
                    }
                }
                acc(adj, q, Tensor::from_raw(qt.shape().to_vec(), gq));
            }
        }
    }

    /// Accumulated gradient of a leaf (parameter or variable).
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.leaf_grads.get(&v.0)
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.clear();
    }

    /// Parameter gradients gathered into a buffer indexed by [`ParamId`].
    pub fn gradients(&self, n_params: usize) -> Gradients {
        let mut out = Gradients::new(n_params);
        for (&id, v) in &self.params {
            if let Some(g) = self.leaf_grads.get(&v.0) {
                out.add(id, g);
            }
        }
        out
    }
}

fn acc(adj: &mut [Option<Tensor>], v: Var, t: Tensor) {
    match &mut adj[v.0] {
        Some(a) => a.add_assign(&t),
        slot @ None => *slot = Some(t),
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

pub(crate) fn softmax_in_place(row: &mut [f64], keep: Option<&[bool]>) {
    let kept = |j: usize| keep.is_none_or(|k| k[j]);
    let max = (0..row.len())
        .filter(|&j| kept(j))
        .map(|j| row[j])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for j in 0..row.len() {
        row[j] = if kept(j) { (row[j] - max).exp() } else { 0.0 };
        s += row[j];
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

pub(crate) fn check_distribution(p: &[f64]) -> Result<()> {
    let s: f64 = p.iter().sum();
    if p.iter().any(|&x| !(0.0..=1.0 + 1e-12).contains(&x)) || (s - 1.0).abs() > 1e-6 {
        return Err(Error::Contract(format!("not a probability distribution: {p:?}")));
    }
    Ok(())
}

/// `Σ p·ln(p/q̃)` with `q̃ = max(q, floor) / Σ max(q, floor)`.
/// Mass of `q` after raising entries where `p > 0` to at least `floor`.
fn floored_mass(p: &[f64], q: &[f64], floor: f64) -> f64 {
    p.iter().zip(q).map(|(&pv, &qv)| if pv > 0.0 { qv.max(floor) } else { qv }).sum()
}

/// KL(p || q) with `q` floored where `p > 0` and renormalised.
pub(crate) fn kl_row(p: &[f64], q: &[f64], floor: f64) -> f64 {
    let s = floored_mass(p, q, floor);
    p.iter()
        .zip(q)
        .filter(|(&pv, _)| pv > 0.0)
        .map(|(&pv, &qv)| pv * (pv.ln() - (qv.max(floor) / s).ln()))
        .sum()
}

fn broadcast_shape(a: &Tensor, b: &Tensor) -> Option<Vec<usize>> {
    if a.shape() == b.shape() {
        return Some(a.shape().to_vec());
    }
    if b.numel() == 1 {
        return Some(a.shape().to_vec());
    }
    if a.numel() == 1 {
        return Some(b.shape().to_vec());
    }
    let ((ra, ca), (rb, cb)) = (a.dims2(), b.dims2());
    let r = ra.max(rb);
    let c = ca.max(cb);
    let ok = |x: usize, full: usize| x == full || x == 1;
    (ok(ra, r) && ok(rb, r) && ok(ca, c) && ok(cb, c)).then(|| vec![r, c])
}

#[inline]
fn bidx(i: usize, j: usize, r: usize, c: usize) -> usize {
    (if r == 1 { 0 } else { i }) * c + if c == 1 { 0 } else { j }
}

fn broadcast_apply(a: &Tensor, b: &Tensor, shape: &[usize], f: impl Fn(f64, f64) -> f64) -> Tensor {
    if a.numel() == b.numel() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::from_raw(shape.to_vec(), data);
    }
    let out = Tensor::zeros(shape);
    let (r, c) = out.dims2();
    let (ra, ca) = if a.numel() == 1 { (1, 1) } else { a.dims2() };
    let (rb, cb) = if b.numel() == 1 { (1, 1) } else { b.dims2() };
    let (ad, bd) = (a.data(), b.data());
    let mut data = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            data.push(f(ad[bidx(i, j, ra, ca)], bd[bidx(i, j, rb, cb)]));
        }
    }
    Tensor::from_raw(shape.to_vec(), data)
}

/// `g[i,j] ⊙ other broadcast to [r×c]`.
fn elementwise_with(g: &Tensor, other: &Tensor, r: usize, c: usize, f: impl Fn(f64, f64) -> f64) -> Tensor {
    if other.numel() == g.numel() {
        let data = g.data().iter().zip(other.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::from_raw(g.shape().to_vec(), data);
    }
    let (ro, co) = if other.numel() == 1 { (1, 1) } else { other.dims2() };
    let (gd, od) = (g.data(), other.data());
    let mut data = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            data.push(f(gd[i * c + j], od[bidx(i, j, ro, co)]));
        }
    }
    Tensor::from_raw(g.shape().to_vec(), data)
}

/// Sum a broadcast gradient back down to the operand's shape.
fn reduce_to(g: &Tensor, target: &Tensor) -> Tensor {
    if g.numel() == target.numel() {
        return Tensor::from_raw(target.shape().to_vec(), g.data().to_vec());
    }
    if target.numel() == 1 {
        return Tensor::from_raw(target.shape().to_vec(), vec![g.sum()]);
    }
    let (r, c) = g.dims2();
    let (rt, ct) = target.dims2();
    let mut out = vec![0.0; rt * ct];
    let gd = g.data();
    for i in 0..r {
        for j in 0..c {
            out[bidx(i, j, rt, ct)] += gd[i * c + j];
        }
    }
    Tensor::from_raw(target.shape().to_vec(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(r: usize, c: usize, d: &[f64]) -> Tensor {
        Tensor::matrix(r, c, d.to_vec()).unwrap()
    }

    #[test]
    fn matmul_hand_case() {
        let mut tape = Tape::new();
        let a = tape.constant(t(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.constant(t(2, 1, &[1.0, 1.0]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[3.0, 7.0]);
        assert_eq!(tape.value(c).shape(), &[2, 1]);
    }

    #[test]
    fn matmul_identity_and_mismatch() {
        let mut tape = Tape::new();
        let i = tape.constant(Tensor::identity(2));
        let x = tape.constant(t(2, 3, &[1.0, -2.0, 3.5, 0.0, 4.0, 9.0]));
        let y = tape.matmul(i, x).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
        let bad = tape.constant(t(3, 3, &[0.0; 9]));
        assert!(matches!(tape.matmul(i, bad), Err(Error::Shape { .. })));
    }

    #[test]
    fn unary_fixed_points() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::scalar(0.0));
        let s = tape.sigmoid(z);
        let th = tape.tanh(z);
        assert_eq!(tape.value(s).item(), 0.5);
        assert_eq!(tape.value(th).item(), 0.0);
        assert!(matches!(tape.log(z), Err(Error::Domain { .. })));
    }

    #[test]
    fn softmax_symmetry_and_stability() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.0, 0.0, 0.0]).unwrap());
        let y = tape.softmax(x);
        for v in tape.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let x = tape.constant(Tensor::vector(vec![1000.0, 0.0]).unwrap());
        let y = tape.softmax(x);
        let d = tape.value(y).data();
        assert!(d.iter().all(|v| v.is_finite()));
        assert!((d[0] - 1.0).abs() < 1e-15 && d[1] >= 0.0 && d[1] < 1e-300_f64.max(1e-400));
    }

    #[test]
    fn masked_softmax_zeroes_masked_columns() {
        let mut tape = Tape::new();
        let x = tape.constant(t(1, 3, &[1.0, 2.0, 50.0]));
        let y = tape.masked_softmax(x, &[true, true, false]).unwrap();
        let d = tape.value(y).data();
        assert_eq!(d[2], 0.0);
        assert!((d[0] + d[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn backward_simple_losses() {
        let mut tape = Tape::new();
        let p = tape.variable(Tensor::vector(vec![1.0, -2.0, 3.0]).unwrap());
        let s = tape.sum(p);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(p).unwrap().data(), &[1.0, 1.0, 1.0]);

        let mut tape = Tape::new();
        let p = tape.variable(Tensor::vector(vec![1.0, -2.0, 3.0]).unwrap());
        let sq = tape.mul(p, p).unwrap();
        let s = tape.sum(sq);
        let half = tape.scale(s, 0.5);
        tape.backward(half).unwrap();
        assert_eq!(tape.grad(p).unwrap().data(), &[1.0, -2.0, 3.0]);
    }

    #[test]
    fn backward_accumulates_until_zeroed() {
        let mut tape = Tape::new();
        let p = tape.variable(Tensor::vector(vec![2.0]).unwrap());
        let s = tape.sum(p);
        tape.backward(s).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(p).unwrap().data(), &[2.0]);
        tape.zero_grad();
        assert!(tape.grad(p).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let p = tape.variable(Tensor::vector(vec![1.0, 2.0]).unwrap());
        assert!(matches!(tape.backward(p), Err(Error::Contract(_))));
    }

    #[test]
    fn broadcast_bias_and_column_mask() {
        let mut tape = Tape::new();
        let x = tape.constant(t(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = tape.variable(Tensor::vector(vec![10.0, 20.0, 30.0]).unwrap());
        let m = tape.constant(t(2, 1, &[1.0, 0.0]));
        let y = tape.add(x, b).unwrap();
        let z = tape.mul(y, m).unwrap();
        assert_eq!(tape.value(z).data(), &[11.0, 22.0, 33.0, 0.0, 0.0, 0.0]);
        let s = tape.sum(z);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(b).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn kl_div_matches_row_formula() {
        let mut tape = Tape::new();
        let p = Arc::new(t(1, 2, &[1.0, 0.0]));
        let q = tape.variable(t(1, 2, &[0.5, 0.5]));
        let l = tape.kl_div(p, q, 1e-7).unwrap();
        assert!((tape.value(l).item() - 2f64.ln()).abs() < 1e-12);
        let bad = Arc::new(t(1, 2, &[0.7, 0.7]));
        assert!(tape.kl_div(bad, q, 1e-7).is_err());
    }
}
