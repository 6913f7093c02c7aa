use std::sync::Arc;

use super::tensor::{gemm, Tensor};
use super::ParamStore;
use crate::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Index of a parameter tensor in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

pub const LAYER_NORM_EPS: f64 = 1e-5;
const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad_scalar(x: f64) -> f64 {
    let t = (GELU_K * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

#[derive(Debug)]
enum Op {
    Constant,
    Input,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    DivCol(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    SumCols(Var),
    SumAll(Var),
    Gather(Var, Arc<[usize]>),
    Scatter(Var, Arc<[usize]>),
    Maximum(Var, Var),
    Sqrt(Var),
    Atan2(Var, Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    Cross(Var, Var),
    Concat(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Dynamically recorded computation. Nodes are appended in evaluation order,
/// so reverse insertion order is a valid reverse topological order.
pub struct Graph<'p> {
    store: Option<&'p ParamStore>,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Graph::new()
    }
}

fn shape_err(op: &'static str, lhs: (usize, usize), rhs: (usize, usize)) -> Error {
    Error::Shape { op, lhs, rhs }
}

impl<'p> Graph<'p> {
    pub fn new() -> Graph<'p> {
        Graph {
            store: None,
            nodes: Vec::new(),
            param_vars: Vec::new(),
        }
    }

    pub fn with_params(store: &'p ParamStore) -> Graph<'p> {
        Graph {
            store: Some(store),
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => self.store.expect("param nodes need a store").tensor(id),
            _ => &node.value,
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Constant,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf whose gradient is tracked.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Input,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf bound to a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: Tensor::default(),
            op: Op::Param(id),
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(op, sa, sb));
        }
        Ok(())
    }

    fn col_of(&self, op: &'static str, a: Var, col: Var) -> Result<()> {
        let (sa, sc) = (self.shape(a), self.shape(col));
        if sc != (sa.0, 1) {
            return Err(shape_err(op, sa, sc));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr != (1, sa.1) {
            return Err(shape_err("add_row", sa, sr));
        }
        let mut v = self.value(a).clone();
        let r = self.value(row).data().to_vec();
        for i in 0..sa.0 {
            for (x, y) in v.row_mut(i).iter_mut().zip(&r) {
                *x += y;
            }
        }
        Ok(self.push(v, Op::AddRow(a, row), &[a, row]))
    }

    /// Scales row `i` of `a` by `col[i]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        self.col_of("mul_col", a, col)?;
        let mut v = self.value(a).clone();
        let c = self.value(col).data().to_vec();
        for (i, s) in c.iter().enumerate() {
            v.row_mut(i).iter_mut().for_each(|x| *x *= s);
        }
        Ok(self.push(v, Op::MulCol(a, col), &[a, col]))
    }

    /// Divides row `i` of `a` by `col[i]`.
    pub fn div_col(&mut self, a: Var, col: Var) -> Result<Var> {
        self.col_of("div_col", a, col)?;
        let mut v = self.value(a).clone();
        let c = self.value(col).data().to_vec();
        for (i, s) in c.iter().enumerate() {
            v.row_mut(i).iter_mut().for_each(|x| *x /= s);
        }
        Ok(self.push(v, Op::DivCol(a, col), &[a, col]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s), &[a])
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(shape_err("matmul", sa, sb));
        }
        let mut out = Tensor::zeros(sa.0, sb.1);
        gemm(self.value(a), false, self.value(b), false, 0.0, &mut out);
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    /// `x w + b` with `w: in x out` and `b: 1 x out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_row(y, b)
    }

    /// Row sums, `n x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let v = Tensor::column((0..t.rows()).map(|i| t.row(i).iter().sum()).collect());
        self.push(v, Op::SumCols(a), &[a])
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::SumAll(a), &[a])
    }

    /// Row-wise dot product, `n x 1`.
    pub fn dot_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let p = self.mul(a, b)?;
        Ok(self.sum_cols(p))
    }

    /// Row-wise Euclidean norm, `n x 1`.
    pub fn norm_rows(&mut self, a: Var) -> Result<Var> {
        let d = self.dot_rows(a, a)?;
        Ok(self.sqrt(d))
    }

    /// Output row `k` is row `idx[k]` of `a`.
    pub fn gather_rows(&mut self, a: Var, idx: &Arc<[usize]>) -> Result<Var> {
        let t = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                len: t.rows(),
            });
        }
        let c = t.cols();
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx.iter() {
            out.extend_from_slice(t.row(i));
        }
        let v = Tensor::new(idx.len(), c, out)?;
        Ok(self.push(v, Op::Gather(a, idx.clone()), &[a]))
    }

    /// Output has `n_out` rows; row `k` of `a` is added to row `idx[k]`, in order of `k`.
    pub fn scatter_add_rows(&mut self, a: Var, idx: &Arc<[usize]>, n_out: usize) -> Result<Var> {
        let t = self.value(a);
        if idx.len() != t.rows() {
            return Err(shape_err("scatter_add_rows", t.shape(), (idx.len(), 1)));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= n_out) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                len: n_out,
            });
        }
        let mut out = Tensor::zeros(n_out, t.cols());
        for (k, &i) in idx.iter().enumerate() {
            for (o, x) in out.row_mut(i).iter_mut().zip(t.row(k)) {
                *o += x;
            }
        }
        Ok(self.push(out, Op::Scatter(a, idx.clone()), &[a]))
    }

    /// Elementwise maximum; ties go to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("maximum", a, b)?;
        let v = self
            .value(a)
            .zip_map(self.value(b), |x, y| if x >= y { x } else { y });
        Ok(self.push(v, Op::Maximum(a, b), &[a, b]))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::sqrt);
        self.push(v, Op::Sqrt(a), &[a])
    }

    /// Elementwise `atan2(y, x)`.
    pub fn atan2(&mut self, y: Var, x: Var) -> Result<Var> {
        self.same_shape("atan2", y, x)?;
        let v = self.value(y).zip_map(self.value(x), f64::atan2);
        Ok(self.push(v, Op::Atan2(y, x), &[y, x]))
    }

    /// Tanh-form GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(gelu_scalar);
        self.push(v, Op::Gelu(a), &[a])
    }

    /// Normalises each row to zero mean, unit variance, then applies `gain` and `bias` (`1 x c`).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let sx = self.shape(x);
        for p in [gain, bias] {
            if self.shape(p) != (1, sx.1) {
                return Err(shape_err("layer_norm", sx, self.shape(p)));
            }
        }
        let t = self.value(x);
        let c = sx.1 as f64;
        let mut xhat = Tensor::zeros(sx.0, sx.1);
        let mut inv_std = Vec::with_capacity(sx.0);
        for i in 0..sx.0 {
            let row = t.row(i);
            let mean = row.iter().sum::<f64>() / c;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (o, v) in xhat.row_mut(i).iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
            inv_std.push(is);
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let mut y = xhat.clone();
        for i in 0..sx.0 {
            for ((o, gk), bk) in y.row_mut(i).iter_mut().zip(g).zip(b) {
                *o = *o * gk + bk;
            }
        }
        Ok(self.push(
            y,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            &[x, gain, bias],
        ))
    }

    /// Row-wise cross product of two `n x 3` tensors.
    pub fn cross_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("cross_rows", a, b)?;
        if self.shape(a).1 != 3 {
            return Err(shape_err("cross_rows", self.shape(a), (self.shape(a).0, 3)));
        }
        let v = cross_tensor(self.value(a), self.value(b));
        Ok(self.push(v, Op::Cross(a, b), &[a, b]))
    }

    /// Column-wise concatenation.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map(|&p| self.shape(p).0).unwrap_or(0);
        for &p in parts {
            if self.shape(p).0 != rows {
                return Err(shape_err("concat_cols", (rows, 0), self.shape(p)));
            }
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let v = Tensor::new(rows, cols, out)?;
        Ok(self.push(v, Op::Concat(parts.to_vec()), parts))
    }

    /// Reverse pass seeded with `d out / d seed.0 = seed.1` for each seed.
    pub fn backward(&self, seeds: &[(Var, Tensor)]) -> Result<Gradients> {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            if g.shape() != self.shape(*v) {
                return Err(shape_err("backward seed", self.shape(*v), g.shape()));
            }
            accumulate(&mut grads, *v, g.clone());
        }
        for i in (0..self.nodes.len()).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(&node.op, Var(i), &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Backward from a scalar output with seed 1.
    pub fn backward_scalar(&self, out: Var) -> Result<Gradients> {
        self.backward(&[(out, Tensor::scalar(1.0))])
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, op: &Op, out: Var, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut send = |v: Var, t: Tensor| {
            if self.needs(v) {
                accumulate(grads, v, t);
            }
        };
        match op {
            Op::Constant | Op::Input | Op::Param(_) => {}
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                send(*a, g.zip_map(self.value(*b), |x, y| x * y));
                send(*b, g.zip_map(self.value(*a), |x, y| x * y));
            }
            Op::AddRow(a, row) => {
                send(*a, g.clone());
                if self.needs(*row) {
                    let mut r = Tensor::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (o, x) in r.data_mut().iter_mut().zip(g.row(i)) {
                            *o += x;
                        }
                    }
                    send(*row, r);
                }
            }
            Op::MulCol(a, col) => {
                let (ta, tc) = (self.value(*a), self.value(*col));
                if self.needs(*a) {
                    let mut da = g.clone();
                    for i in 0..g.rows() {
                        let s = tc.data()[i];
                        da.row_mut(i).iter_mut().for_each(|x| *x *= s);
                    }
                    send(*a, da);
                }
                if self.needs(*col) {
                    let dc = (0..g.rows())
                        .map(|i| g.row(i).iter().zip(ta.row(i)).map(|(x, y)| x * y).sum())
                        .collect();
                    send(*col, Tensor::column(dc));
                }
            }
            Op::DivCol(a, col) => {
                let (ta, tc) = (self.value(*a), self.value(*col));
                if self.needs(*a) {
                    let mut da = g.clone();
                    for i in 0..g.rows() {
                        let s = tc.data()[i];
                        da.row_mut(i).iter_mut().for_each(|x| *x /= s);
                    }
                    send(*a, da);
                }
                if self.needs(*col) {
                    let dc = (0..g.rows())
                        .map(|i| {
                            let c = tc.data()[i];
                            -g.row(i)
                                .iter()
                                .zip(ta.row(i))
                                .map(|(x, y)| x * y)
                                .sum::<f64>()
                                / (c * c)
                        })
                        .collect();
                    send(*col, Tensor::column(dc));
                }
            }
            Op::Scale(a, s) => send(*a, g.map(|x| x * s)),
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let mut da = Tensor::zeros(ta.rows(), ta.cols());
                    gemm(g, false, tb, true, 0.0, &mut da);
                    send(*a, da);
                }
                if self.needs(*b) {
                    let mut db = Tensor::zeros(tb.rows(), tb.cols());
                    gemm(ta, true, g, false, 0.0, &mut db);
                    send(*b, db);
                }
            }
            Op::SumCols(a) => {
                let ta = self.value(*a);
                send(
                    *a,
                    Tensor::from_fn(ta.rows(), ta.cols(), |i, _| g.data()[i]),
                );
            }
            Op::SumAll(a) => {
                let ta = self.value(*a);
                send(*a, Tensor::filled(ta.rows(), ta.cols(), g.item()));
            }
            Op::Gather(a, idx) => {
                let ta = self.value(*a);
                let mut da = Tensor::zeros(ta.rows(), ta.cols());
                for (k, &i) in idx.iter().enumerate() {
                    for (o, x) in da.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += x;
                    }
                }
                send(*a, da);
            }
            Op::Scatter(a, idx) => {
                let c = g.cols();
                let mut data = Vec::with_capacity(idx.len() * c);
                for &i in idx.iter() {
                    data.extend_from_slice(g.row(i));
                }
                send(*a, Tensor::new(idx.len(), c, data).expect("gather shape"));
            }
            Op::Maximum(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let pick_a = ta.zip_map(tb, |x, y| if x >= y { 1.0 } else { 0.0 });
                send(*a, g.zip_map(&pick_a, |x, m| x * m));
                send(*b, g.zip_map(&pick_a, |x, m| x * (1.0 - m)));
            }
            Op::Sqrt(a) => {
                let y = self.value(out);
                send(*a, g.zip_map(y, |x, s| 0.5 * x / s));
            }
            Op::Atan2(y, x) => {
                let (ty, tx) = (self.value(*y), self.value(*x));
                let r2 = ty.zip_map(tx, |a, b| a * a + b * b);
                let dy = Tensor::from_fn(g.rows(), g.cols(), |i, j| {
                    g.get(i, j) * tx.get(i, j) / r2.get(i, j)
                });
                let dx = Tensor::from_fn(g.rows(), g.cols(), |i, j| {
                    -g.get(i, j) * ty.get(i, j) / r2.get(i, j)
                });
                send(*y, dy);
                send(*x, dx);
            }
            Op::Gelu(a) => {
                send(
                    *a,
                    g.zip_map(self.value(*a), |x, v| x * gelu_grad_scalar(v)),
                );
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let (rows, cols) = g.shape();
                if self.needs(*x) {
                    let gain_v = self.value(*gain).data();
                    let mut dx = Tensor::zeros(rows, cols);
                    let c = cols as f64;
                    for (i, inv) in inv_std.iter().enumerate().take(rows) {
                        let (gr, xr) = (g.row(i), xhat.row(i));
                        let dxhat: Vec<f64> = gr.iter().zip(gain_v).map(|(a, b)| a * b).collect();
                        let m1 = dxhat.iter().sum::<f64>() / c;
                        let m2 = dxhat.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / c;
                        for ((o, d), xh) in dx.row_mut(i).iter_mut().zip(&dxhat).zip(xr) {
                            *o = inv * (d - m1 - xh * m2);
                        }
                    }
                    send(*x, dx);
                }
                if self.needs(*gain) || self.needs(*bias) {
                    let mut dg = Tensor::zeros(1, cols);
                    let mut db = Tensor::zeros(1, cols);
                    for i in 0..rows {
                        for k in 0..cols {
                            dg.data_mut()[k] += g.get(i, k) * xhat.get(i, k);
                            db.data_mut()[k] += g.get(i, k);
                        }
                    }
                    send(*gain, dg);
                    send(*bias, db);
                }
            }
            Op::Cross(a, b) => {
                // d(a x b): grad_a = b x g, grad_b = g x a
                let (ta, tb) = (self.value(*a), self.value(*b));
                send(*a, cross_tensor(tb, g));
                send(*b, cross_tensor(g, ta));
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let c = self.shape(p).1;
                    let part = Tensor::from_fn(g.rows(), c, |i, j| g.get(i, offset + j));
                    send(p, part);
                    offset += c;
                }
            }
        }
    }

    /// Gradients of every stored parameter, zero for parameters not used by this graph.
    pub fn param_gradients(&self, grads: &Gradients) -> Vec<Tensor> {
        let store = self.store.expect("graph has no parameter store");
        (0..store.len())
            .map(|k| {
                self.param_vars[k]
                    .and_then(|v| grads.get(v).cloned())
                    .unwrap_or_else(|| {
                        let (r, c) = store.tensor(ParamId(k)).shape();
                        Tensor::zeros(r, c)
                    })
            })
            .collect()
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, t: Tensor) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&t),
        slot => *slot = Some(t),
    }
}

fn cross_tensor(a: &Tensor, b: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(a.rows(), 3);
    for i in 0..a.rows() {
        let (x, y) = (a.row(i), b.row(i));
        out.row_mut(i).copy_from_slice(&[
            x[1] * y[2] - x[2] * y[1],
            x[2] * y[0] - x[0] * y[2],
            x[0] * y[1] - x[1] * y[0],
        ]);
    }
    out
}

/// Result of [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Compares reverse-mode gradients of `f` (reduced to a scalar by a fixed
    /// random projection) with central differences for every input entry.
    fn check(inputs: Vec<Tensor>, f: impl Fn(&mut Graph, &[Var]) -> Result<Var>) {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let eval = |ts: &[Tensor], w: Option<&Tensor>| -> (f64, Option<Vec<Tensor>>, Tensor) {
            let mut g = Graph::new();
            let vars: Vec<Var> = ts.iter().map(|t| g.input(t.clone())).collect();
            let out = f(&mut g, &vars).unwrap();
            let y = g.value(out).clone();
            match w {
                None => (0.0, None, y),
                Some(w) => {
                    let s = y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum();
                    let gr = g.backward(&[(out, w.clone())]).unwrap();
                    let gi = vars
                        .iter()
                        .map(|&v| {
                            gr.get(v)
                                .cloned()
                                .unwrap_or_else(|| Tensor::zeros(g.shape(v).0, g.shape(v).1))
                        })
                        .collect();
                    (s, Some(gi), y)
                }
            }
        };
        let (_, _, y) = eval(&inputs, None);
        let w = random(&mut rng, y.rows(), y.cols());
        let (_, grads, _) = eval(&inputs, Some(&w));
        let grads = grads.unwrap();
        let h = 1e-6;
        for (k, t) in inputs.iter().enumerate() {
            for j in 0..t.len() {
                let mut plus = inputs.clone();
                plus[k].data_mut()[j] += h;
                let mut minus = inputs.clone();
                minus[k].data_mut()[j] -= h;
                let fd = (eval(&plus, Some(&w)).0 - eval(&minus, Some(&w)).0) / (2.0 * h);
                let an = grads[k].data()[j];
                assert!(
                    (fd - an).abs() <= 1e-5 * fd.abs().max(an.abs()).max(1.0),
                    "input {k} entry {j}: fd {fd} vs {an}"
                );
            }
        }
    }

    #[test]
    fn product_rule_example() {
        let mut g = Graph::new();
        let x = g.input(Tensor::scalar(2.0));
        let y = g.input(Tensor::scalar(3.0));
        let z = g.mul(x, y).unwrap();
        let gr = g.backward_scalar(z).unwrap();
        assert_eq!(gr.get(x).unwrap().item(), 3.0);
        assert_eq!(gr.get(y).unwrap().item(), 2.0);
    }

    #[test]
    fn maximum_ties_go_first() {
        let mut g = Graph::new();
        let a = g.input(Tensor::row_vector(vec![1.0, 2.0, 0.0]));
        let b = g.input(Tensor::row_vector(vec![1.0, 1.0, 5.0]));
        let m = g.maximum(a, b).unwrap();
        let s = g.sum_all(m);
        let gr = g.backward_scalar(s).unwrap();
        assert_eq!(gr.get(a).unwrap().data(), &[1.0, 1.0, 0.0]);
        assert_eq!(gr.get(b).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let mut g = Graph::new();
        let a = g.input(Tensor::zeros(2, 3));
        let b = g.input(Tensor::zeros(3, 2));
        match g.add(a, b) {
            Err(Error::Shape { lhs, rhs, .. }) => assert_eq!((lhs, rhs), ((2, 3), (3, 2))),
            other => panic!("{other:?}"),
        }
        assert!(g.matmul(a, a).is_err());
    }

    #[test]
    fn gelu_values() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        assert!((gelu_scalar(10.0) - 10.0).abs() < 1e-6);
        for x in [-2.0, -0.5, 0.3, 4.0] {
            let fd = (gelu_scalar(x + 1e-6) - gelu_scalar(x - 1e-6)) / 2e-6;
            assert!((fd - gelu_grad_scalar(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn layer_norm_statistics() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(2, 5, |r, c| {
            (r * 5 + c) as f64 * 7.0 + 10.0 * (c as f64).sin()
        }));
        let gain = g.constant(Tensor::filled(1, 5, 1.0));
        let bias = g.constant(Tensor::row_vector(vec![0.1, 0.2, 0.3, 0.4, 0.5]));
        let zero = g.constant(Tensor::zeros(1, 5));
        let y = g.layer_norm(x, gain, zero).unwrap();
        for r in 0..2 {
            let row = g.value(y).row(r);
            let mean = row.iter().sum::<f64>() / 5.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 5.0;
            assert!(mean.abs() < 1e-12, "{mean}");
            assert!((var - 1.0).abs() < 1e-6, "{var}");
        }
        let c = g.constant(Tensor::filled(1, 5, 3.0));
        let y = g.layer_norm(c, gain, bias).unwrap();
        assert_eq!(g.value(y), g.value(bias));
    }

    #[test]
    fn fd_elementwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(&mut rng, 3, 4);
        let b = random(&mut rng, 3, 4);
        check(vec![a.clone(), b.clone()], |g, v| {
            let s = g.add(v[0], v[1])?;
            let d = g.sub(s, v[1])?;
            let m = g.mul(d, v[1])?;
            let x = g.maximum(m, v[0])?;
            Ok(g.scale(x, 1.5))
        });
        check(vec![a.clone(), b.clone()], |g, v| g.atan2(v[0], v[1]));
        check(vec![a.map(|x| x.abs() + 0.5)], |g, v| Ok(g.sqrt(v[0])));
        check(vec![a.map(|x| 3.0 * x)], |g, v| Ok(g.gelu(v[0])));
    }

    #[test]
    fn fd_broadcast_and_reduce() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random(&mut rng, 4, 3);
        let row = random(&mut rng, 1, 3);
        let col = random(&mut rng, 4, 1).map(|x| x + 2.0);
        check(vec![a.clone(), row, col.clone()], |g, v| {
            let r = g.add_row(v[0], v[1])?;
            let m = g.mul_col(r, v[2])?;
            let d = g.div_col(m, v[2])?;
            let d = g.div_col(d, v[2])?;
            let s = g.sum_cols(d);
            let n = g.norm_rows(v[0])?;
            let c = g.concat_cols(&[s, n, v[0]])?;
            Ok(c)
        });
        check(vec![a], |g, v| Ok(g.sum_all(v[0])));
    }

    #[test]
    fn fd_matmul_cross_gather_scatter() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&mut rng, 4, 3);
        let b = random(&mut rng, 3, 5);
        check(vec![a.clone(), b], |g, v| g.matmul(v[0], v[1]));
        let c = random(&mut rng, 4, 3);
        check(vec![a.clone(), c], |g, v| g.cross_rows(v[0], v[1]));
        let idx: Arc<[usize]> = vec![2, 0, 2, 3, 1, 1].into();
        check(vec![a.clone()], |g, v| {
            let x = g.gather_rows(v[0], &idx)?;
            let y = g.scatter_add_rows(x, &idx, 5)?;
            g.mul(y, y)
        });
    }

    #[test]
    fn fd_layer_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&mut rng, 3, 6);
        let gain = random(&mut rng, 1, 6);
        let bias = random(&mut rng, 1, 6);
        check(vec![x, gain, bias], |g, v| g.layer_norm(v[0], v[1], v[2]));
    }

    #[test]
    fn scatter_is_order_independent_in_value() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::from_fn(4, 2, |r, c| (r + c) as f64));
        let i1: Arc<[usize]> = vec![0, 1, 0, 1].into();
        let s1 = g.scatter_add_rows(a, &i1, 2).unwrap();
        let perm: Arc<[usize]> = vec![2, 1, 0, 3].into();
        let ap = g.gather_rows(a, &perm).unwrap();
        let s2 = g.scatter_add_rows(ap, &i1, 2).unwrap();
        assert_eq!(g.value(s1), g.value(s2));
    }
}
