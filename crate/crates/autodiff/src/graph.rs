//! Define-by-run tape. Every op evaluates eagerly when it is recorded; the
//! tape is then walked in reverse by [`Graph::backward`].

use std::collections::HashMap;

use crate::array::gemm;
use crate::{Array, AutodiffError, Gradients, ParamId, ParamStore, Result};

/// Epsilon added to the variance in [`Graph::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-5;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { src: Var, start: usize },
    GatherRows { src: Var, index: Vec<Option<usize>> },
    BroadcastRows(Var),
    Reshape(Var),
    Relu(Var),
    Gelu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Array,
        inv_std: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
    SqErr(Var, Var),
    WeightedSqErr { a: Var, b: Var, w: Vec<f64> },
    GroupMax { src: Var, argmax: Vec<usize> },
    Chamfer {
        pred: Var,
        target: Array,
        pred_nn: Vec<usize>,
        target_nn: Vec<usize>,
    },
}

struct Node {
    value: Array,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode differentiation tape over [`Array`] values.
///
/// A graph is single-threaded; build one per forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

fn mismatch(op: &'static str, detail: String) -> AutodiffError {
    AutodiffError::ShapeMismatch { op, detail }
}

fn gelu(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * x * (1.0 + t)
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
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

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Array, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a non-trainable input.
    pub fn constant(&mut self, value: Array) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Records (once per graph) the leaf for a trainable parameter.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param(id), true);
        self.params.insert(id, v);
        v
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(mismatch(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let va = &self.nodes[a.0].value;
        let vb = &self.nodes[b.0].value;
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Array::from_vec(va.rows(), va.cols(), data).expect("same shape");
        let rg = self.rg(a) || self.rg(b);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, s), rg)
    }

    /// Adds a `1 × c` row to every row of an `n × c` array.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (n, c) = self.shape(a);
        if self.shape(row) != (1, c) {
            return Err(mismatch("add_row", format!("{:?} onto {n}x{c}", self.shape(row))));
        }
        let mut value = self.value(a).clone();
        let r = self.value(row).data().to_vec();
        for i in 0..n {
            for (x, y) in value.row_mut(i).iter_mut().zip(&r) {
                *x += y;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(value, Op::AddRow(a, row), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(mismatch("matmul", format!("{sa:?} x {sb:?}")));
        }
        let value = gemm(self.value(a), false, self.value(b), false);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(value, Op::Transpose(a), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|&p| self.shape(p).0)
            .ok_or_else(|| mismatch("concat_cols", "no inputs".into()))?;
        if let Some(&p) = parts.iter().find(|&&p| self.shape(p).0 != rows) {
            return Err(mismatch("concat_cols", format!("{:?} among {rows} rows", self.shape(p))));
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut value = Array::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                value.row_mut(r)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts
            .first()
            .map(|&p| self.shape(p).1)
            .ok_or_else(|| mismatch("concat_rows", "no inputs".into()))?;
        if let Some(&p) = parts.iter().find(|&&p| self.shape(p).1 != cols) {
            return Err(mismatch("concat_rows", format!("{:?} among {cols} cols", self.shape(p))));
        }
        let rows: usize = parts.iter().map(|&p| self.shape(p).0).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let value = Array::from_vec(rows, cols, data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.shape(src);
        if start + len > cols {
            return Err(mismatch("slice_cols", format!("{start}+{len} > {cols}")));
        }
        let mut value = Array::zeros(rows, len);
        for r in 0..rows {
            value
                .row_mut(r)
                .copy_from_slice(&self.value(src).row(r)[start..start + len]);
        }
        let rg = self.rg(src);
        Ok(self.push(value, Op::SliceCols { src, start }, rg))
    }

    /// Row gather: output row `i` copies source row `index[i]`, or is exactly
    /// zero when `index[i]` is `None`. Repeated indices accumulate gradient.
    pub fn gather_rows(&mut self, src: Var, index: &[Option<usize>]) -> Result<Var> {
        let (rows, cols) = self.shape(src);
        if let Some(bad) = index.iter().flatten().find(|&&i| i >= rows) {
            return Err(mismatch("gather_rows", format!("row {bad} of {rows}")));
        }
        let mut value = Array::zeros(index.len(), cols);
        for (o, i) in index.iter().enumerate() {
            if let Some(i) = *i {
                value.row_mut(o).copy_from_slice(self.value(src).row(i));
            }
        }
        let rg = self.rg(src);
        Ok(self.push(
            value,
            Op::GatherRows {
                src,
                index: index.to_vec(),
            },
            rg,
        ))
    }

    /// Keeps rows where `keep` is true and writes exact zeros elsewhere.
    pub fn mask_rows(&mut self, src: Var, keep: &[bool]) -> Result<Var> {
        let rows = self.shape(src).0;
        if keep.len() != rows {
            return Err(mismatch("mask_rows", format!("mask {} for {rows} rows", keep.len())));
        }
        let index: Vec<Option<usize>> = keep
            .iter()
            .enumerate()
            .map(|(i, &k)| k.then_some(i))
            .collect();
        self.gather_rows(src, &index)
    }

    /// Repeats a `1 × c` row `n` times.
    pub fn broadcast_rows(&mut self, src: Var, n: usize) -> Result<Var> {
        let (r, c) = self.shape(src);
        if r != 1 {
            return Err(mismatch("broadcast_rows", format!("expected one row, got {r}x{c}")));
        }
        let row = self.value(src).data().to_vec();
        let data = row.iter().copied().cycle().take(n * c).collect();
        let value = Array::from_vec(n, c, data)?;
        let rg = self.rg(src);
        Ok(self.push(value, Op::BroadcastRows(src), rg))
    }

    pub fn reshape(&mut self, src: Var, rows: usize, cols: usize) -> Result<Var> {
        let value = Array::from_vec(rows, cols, self.value(src).data().to_vec())
            .map_err(|_| mismatch("reshape", format!("{:?} to {rows}x{cols}", self.shape(src))))?;
        let rg = self.rg(src);
        Ok(self.push(value, Op::Reshape(src), rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        let rg = self.rg(a);
        self.push(value, Op::Relu(a), rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(gelu);
        let rg = self.rg(a);
        self.push(value, Op::Gelu(a), rg)
    }

    /// Row-wise softmax of `a + mask`. Mask entries are `0` or `-inf`; a row
    /// that is masked everywhere yields all zeros.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<&Array>) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        if let Some(m) = mask {
            if m.shape() != (rows, cols) {
                return Err(mismatch("softmax_rows", format!("mask {:?} for {rows}x{cols}", m.shape())));
            }
        }
        let mut value = self.value(a).clone();
        for r in 0..rows {
            let row = value.row_mut(r);
            if let Some(m) = mask {
                for (x, &b) in row.iter_mut().zip(m.row(r)) {
                    *x += b;
                }
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                row.fill(0.0);
                continue;
            }
            let mut total = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                total += *x;
            }
            for x in row.iter_mut() {
                *x /= total;
            }
        }
        let rg = self.rg(a);
        Ok(self.push(value, Op::Softmax(a), rg))
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` (each `1 × c`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (rows, cols) = self.shape(x);
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != (1, cols) {
                return Err(mismatch("layer_norm", format!("{name} {:?} for {cols} features", self.shape(v))));
            }
        }
        let mut xhat = Array::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        let mut value = Array::zeros(rows, cols);
        let g = self.value(gamma).data().to_vec();
        let b = self.value(beta).data().to_vec();
        for r in 0..rows {
            let src = self.value(x).row(r);
            let mean = src.iter().sum::<f64>() / cols as f64;
            let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            for c in 0..cols {
                let h = (src[c] - mean) * is;
                xhat.set(r, c, h);
                value.set(r, c, g[c] * h + b[c]);
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Array::scalar(self.value(a).data().iter().sum());
        let rg = self.rg(a);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let value = Array::scalar(v.data().iter().sum::<f64>() / v.len().max(1) as f64);
        let rg = self.rg(a);
        self.push(value, Op::Mean(a), rg)
    }

    /// `Σ (a - b)²` as a scalar.
    pub fn sq_err(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sq_err", a, b)?;
        let s = sq_dist(self.value(a).data(), self.value(b).data());
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Array::scalar(s), Op::SqErr(a, b), rg))
    }

    /// `Σ w_j (a_j - b_j)²` as a scalar, with constant weights in row-major order.
    pub fn weighted_sq_err(&mut self, a: Var, b: Var, w: &[f64]) -> Result<Var> {
        self.same_shape("weighted_sq_err", a, b)?;
        if w.len() != self.value(a).len() {
            return Err(mismatch("weighted_sq_err", format!("{} weights for {} values", w.len(), self.value(a).len())));
        }
        let s = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .zip(w)
            .map(|((x, y), w)| w * (x - y) * (x - y))
            .sum();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Array::scalar(s),
            Op::WeightedSqErr {
                a,
                b,
                w: w.to_vec(),
            },
            rg,
        ))
    }

    /// Column-wise max over each group of rows. Output row `g` is the
    /// elementwise max of the rows listed in `groups[g]`; empty groups give zeros.
    pub fn group_max(&mut self, src: Var, groups: &[Vec<usize>]) -> Result<Var> {
        let (rows, cols) = self.shape(src);
        let mut value = Array::zeros(groups.len(), cols);
        let mut argmax = vec![usize::MAX; groups.len() * cols];
        for (g, members) in groups.iter().enumerate() {
            if let Some(bad) = members.iter().find(|&&i| i >= rows) {
                return Err(mismatch("group_max", format!("row {bad} of {rows}")));
            }
            for c in 0..cols {
                let mut best = f64::NEG_INFINITY;
                let mut arg = usize::MAX;
                for &i in members {
                    let x = self.value(src).get(i, c);
                    if x > best {
                        best = x;
                        arg = i;
                    }
                }
                if arg != usize::MAX {
                    value.set(g, c, best);
                    argmax[g * cols + c] = arg;
                }
            }
        }
        let rg = self.rg(src);
        Ok(self.push(value, Op::GroupMax { src, argmax }, rg))
    }

    /// Symmetric Chamfer distance between the rows of `pred` and a constant
    /// target set: mean nearest squared distance in both directions.
    pub fn chamfer(&mut self, pred: Var, target: &Array) -> Result<Var> {
        let p = self.value(pred);
        if p.rows() == 0 || target.rows() == 0 || p.cols() != target.cols() {
            return Err(mismatch("chamfer", format!("{:?} vs {:?}", p.shape(), target.shape())));
        }
        let nearest = |x: &[f64], set: &Array| -> (usize, f64) {
            (0..set.rows())
                .map(|j| (j, sq_dist(x, set.row(j))))
                .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
        };
        let mut pred_nn = Vec::with_capacity(p.rows());
        let mut forward = 0.0;
        for i in 0..p.rows() {
            let (j, d) = nearest(p.row(i), target);
            pred_nn.push(j);
            forward += d;
        }
        let mut target_nn = Vec::with_capacity(target.rows());
        let mut backward = 0.0;
        for j in 0..target.rows() {
            let (i, d) = nearest(target.row(j), p);
            target_nn.push(i);
            backward += d;
        }
        let value = forward / p.rows() as f64 + backward / target.rows() as f64;
        let rg = self.rg(pred);
        Ok(self.push(
            Array::scalar(value),
            Op::Chamfer {
                pred,
                target: target.clone(),
                pred_nn,
                target_nn,
            },
            rg,
        ))
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let (r, c) = self.shape(loss);
        if (r, c) != (1, 1) {
            return Err(AutodiffError::NotAScalarLoss { rows: r, cols: c });
        }
        self.backward_with(loss, Array::scalar(1.0))
    }

    /// Reverse pass from an arbitrary output with an explicit cotangent.
    pub fn backward_with(&self, out: Var, cotangent: Array) -> Result<Gradients> {
        if cotangent.shape() != self.shape(out) {
            return Err(mismatch("backward", format!("cotangent {:?} for {:?}", cotangent.shape(), self.shape(out))));
        }
        let mut grads: Vec<Option<Array>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(cotangent);
        let mut result = Gradients::default();
        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            if let Op::Param(id) = node.op {
                match result.by_param.get_mut(&id) {
                    Some(acc) => acc.add_assign(&g),
                    None => {
                        result.by_param.insert(id, g);
                    }
                }
            }
        }
        Ok(result)
    }

    fn propagate(&self, node: &Node, g: &Array, grads: &mut [Option<Array>]) {
        let mut send = |v: Var, d: Array| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&d),
                slot => *slot = Some(d),
            }
        };
        match &node.op {
            Op::Constant | Op::Param(_) => {}
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let zip = |u: &Array| {
                    let data = g.data().iter().zip(u.data()).map(|(x, y)| x * y).collect();
                    Array::from_vec(g.rows(), g.cols(), data).expect("same shape")
                };
                send(*a, zip(vb));
                send(*b, zip(va));
            }
            Op::Scale(a, s) => send(*a, g.map(|x| x * s)),
            Op::AddRow(a, row) => {
                send(*a, g.clone());
                let mut acc = vec![0.0; g.cols()];
                for r in 0..g.rows() {
                    for (s, x) in acc.iter_mut().zip(g.row(r)) {
                        *s += x;
                    }
                }
                send(*row, Array::row_vector(acc));
            }
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    send(*a, gemm(g, false, self.value(*b), true));
                }
                if self.rg(*b) {
                    send(*b, gemm(self.value(*a), true, g, false));
                }
            }
            Op::Transpose(a) => send(*a, g.transpose()),
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (rows, cols) = self.shape(p);
                    let mut d = Array::zeros(rows, cols);
                    for r in 0..rows {
                        d.row_mut(r).copy_from_slice(&g.row(r)[off..off + cols]);
                    }
                    off += cols;
                    send(p, d);
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (rows, cols) = self.shape(p);
                    let d = Array::from_vec(rows, cols, g.data()[off * cols..(off + rows) * cols].to_vec())
                        .expect("slice shape");
                    off += rows;
                    send(p, d);
                }
            }
            Op::SliceCols { src, start } => {
                let (rows, cols) = self.shape(*src);
                let mut d = Array::zeros(rows, cols);
                for r in 0..rows {
                    d.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                send(*src, d);
            }
            Op::GatherRows { src, index } => {
                let (rows, cols) = self.shape(*src);
                let mut d = Array::zeros(rows, cols);
                for (o, i) in index.iter().enumerate() {
                    if let Some(i) = *i {
                        for (x, y) in d.row_mut(i).iter_mut().zip(g.row(o)) {
                            *x += y;
                        }
                    }
                }
                send(*src, d);
            }
            Op::BroadcastRows(src) => {
                let mut acc = vec![0.0; g.cols()];
                for r in 0..g.rows() {
                    for (s, x) in acc.iter_mut().zip(g.row(r)) {
                        *s += x;
                    }
                }
                send(*src, Array::row_vector(acc));
            }
            Op::Reshape(src) => {
                let (rows, cols) = self.shape(*src);
                send(*src, Array::from_vec(rows, cols, g.data().to_vec()).expect("same size"));
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                let data = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(d, &x)| if x > 0.0 { *d } else { 0.0 })
                    .collect();
                send(*a, Array::from_vec(g.rows(), g.cols(), data).expect("same shape"));
            }
            Op::Gelu(a) => {
                let x = self.value(*a);
                let data = g.data().iter().zip(x.data()).map(|(d, &x)| d * gelu_grad(x)).collect();
                send(*a, Array::from_vec(g.rows(), g.cols(), data).expect("same shape"));
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let mut d = Array::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for (c, out) in d.row_mut(r).iter_mut().enumerate() {
                        *out = yr[c] * (gr[c] - dot);
                    }
                }
                send(*a, d);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (rows, cols) = xhat.shape();
                let gam = self.value(*gamma).data();
                let mut dx = Array::zeros(rows, cols);
                let mut dgamma = vec![0.0; cols];
                let mut dbeta = vec![0.0; cols];
                let n = cols as f64;
                for r in 0..rows {
                    let (gr, hr) = (g.row(r), xhat.row(r));
                    let mut sum_dh = 0.0;
                    let mut sum_dh_h = 0.0;
                    for c in 0..cols {
                        let dh = gr[c] * gam[c];
                        sum_dh += dh;
                        sum_dh_h += dh * hr[c];
                        dgamma[c] += gr[c] * hr[c];
                        dbeta[c] += gr[c];
                    }
                    let out = dx.row_mut(r);
                    for c in 0..cols {
                        let dh = gr[c] * gam[c];
                        out[c] = inv_std[r] * (dh - sum_dh / n - hr[c] * sum_dh_h / n);
                    }
                }
                send(*x, dx);
                send(*gamma, Array::row_vector(dgamma));
                send(*beta, Array::row_vector(dbeta));
            }
            Op::Sum(a) => {
                let (rows, cols) = self.shape(*a);
                send(*a, Array::filled(rows, cols, g.data()[0]));
            }
            Op::Mean(a) => {
                let (rows, cols) = self.shape(*a);
                let n = (rows * cols).max(1) as f64;
                send(*a, Array::filled(rows, cols, g.data()[0] / n));
            }
            Op::SqErr(a, b) => {
                let s = g.data()[0];
                let (va, vb) = (self.value(*a), self.value(*b));
                let data: Vec<f64> = va.data().iter().zip(vb.data()).map(|(x, y)| 2.0 * s * (x - y)).collect();
                let da = Array::from_vec(va.rows(), va.cols(), data).expect("same shape");
                send(*b, da.map(|x| -x));
                send(*a, da);
            }
            Op::WeightedSqErr { a, b, w } => {
                let s = g.data()[0];
                let (va, vb) = (self.value(*a), self.value(*b));
                let data: Vec<f64> = va
                    .data()
                    .iter()
                    .zip(vb.data())
                    .zip(w)
                    .map(|((x, y), w)| 2.0 * s * w * (x - y))
                    .collect();
                let da = Array::from_vec(va.rows(), va.cols(), data).expect("same shape");
                send(*b, da.map(|x| -x));
                send(*a, da);
            }
            Op::GroupMax { src, argmax } => {
                let (rows, cols) = self.shape(*src);
                let mut d = Array::zeros(rows, cols);
                for (k, &i) in argmax.iter().enumerate() {
                    if i != usize::MAX {
                        let c = k % cols;
                        let gv = g.data()[k];
                        d.data_mut()[i * cols + c] += gv;
                    }
                }
                send(*src, d);
            }
            Op::Chamfer {
                pred,
                target,
                pred_nn,
                target_nn,
            } => {
                let s = g.data()[0];
                let p = self.value(*pred);
                let (n, m) = (p.rows() as f64, target.rows() as f64);
                let mut d = Array::zeros(p.rows(), p.cols());
                for (i, &j) in pred_nn.iter().enumerate() {
                    for c in 0..p.cols() {
                        d.data_mut()[i * p.cols() + c] += 2.0 * s * (p.get(i, c) - target.get(j, c)) / n;
                    }
                }
                for (j, &i) in target_nn.iter().enumerate() {
                    for c in 0..p.cols() {
                        d.data_mut()[i * p.cols() + c] += 2.0 * s * (p.get(i, c) - target.get(j, c)) / m;
                    }
                }
                send(*pred, d);
            }
        }
    }
}
