//! Reverse-mode differentiation over a recorded tape of tensor operations.
//!
//! Every operation appends a node holding its forward value. `backward`
//! walks the tape once in reverse, so the cost of a gradient is a small
//! constant multiple of the forward cost. Constants never receive
//! gradients; their upstream work is skipped.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

/// ELU slope for negative inputs.
pub const ELU_ALPHA: f64 = 1.0;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Batch normalization statistics source.
#[derive(Debug, Clone, Copy)]
pub enum BnMode<'a> {
    /// Normalize with the statistics of the current batch.
    Train,
    /// Normalize with fixed running statistics.
    Eval { mean: &'a [f64], var: &'a [f64] },
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Elu(Var),
    Relu(Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_mean: Vec<f64>,
        batch_var: Vec<f64>,
        training: bool,
    },
    GatherRows(Var, Rc<[usize]>),
    ScatterAddRows(Var, Rc<[usize]>),
    ConcatCols(Var, Var),
    MulColumn(Var, Var),
    Column(Var, usize),
    Softmax(Var),
    LogSoftmax(Var),
    Sum(Var),
    Square(Var),
    Sqrt(Var),
    Abs(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// A tape of recorded operations.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that needs one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Result<&Tensor> {
        self.grads
            .get(var.0)
            .and_then(Option::as_ref)
            .ok_or(Error::AbsentGradient(var.0))
    }

    pub fn take(&mut self, var: Var) -> Result<Tensor> {
        self.grads
            .get_mut(var.0)
            .and_then(Option::take)
            .ok_or(Error::AbsentGradient(var.0))
    }
}

fn rows_cols(t: &Tensor) -> (usize, usize) {
    let s = t.shape();
    let cols = *s.last().unwrap_or(&1);
    (t.len() / cols.max(1), cols)
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn unary(&mut self, x: Var, value: Tensor, op: Op) -> Var {
        let ng = self.ng(x);
        self.push(value, op, ng)
    }

    fn binary(&mut self, a: Var, b: Var, value: Tensor, op: Op) -> Var {
        let ng = self.ng(a) || self.ng(b);
        self.push(value, op, ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.binary(a, b, value, Op::MatMul(a, b)))
    }

    /// `x[m×n] + bias[n]`, broadcast over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, n) = self.value(x).dims2()?;
        if self.value(bias).len() != n {
            return Err(Error::dim(format!(
                "bias of length {} for {} columns",
                self.value(bias).len(),
                n
            )));
        }
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, bv) in row.iter_mut().zip(&b) {
                *o += bv;
            }
        }
        Ok(self.binary(x, bias, out, Op::AddBias(x, bias)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.binary(a, b, v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.binary(a, b, v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.binary(a, b, v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x).map(|a| a * c);
        self.unary(x, v, Op::Scale(x, c))
    }

    pub fn elu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(elu);
        self.unary(x, v, Op::Elu(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a.max(0.0));
        self.unary(x, v, Op::Relu(x))
    }

    /// Per-column normalization of `x[m×n]` followed by `gamma·x̂ + beta`.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, mode: BnMode<'_>) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if self.value(gamma).len() != n || self.value(beta).len() != n {
            return Err(Error::dim("batch norm scale/shift width"));
        }
        if m == 0 {
            return Err(Error::dim("batch norm over an empty batch"));
        }
        let xs = self.value(x).data();
        let (mean, var, training) = match mode {
            BnMode::Train => {
                let mut mean = vec![0.0; n];
                for row in xs.chunks(n) {
                    for (acc, v) in mean.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                mean.iter_mut().for_each(|v| *v /= m as f64);
                let mut var = vec![0.0; n];
                for row in xs.chunks(n) {
                    for ((acc, v), mu) in var.iter_mut().zip(row).zip(&mean) {
                        *acc += (v - mu) * (v - mu);
                    }
                }
                var.iter_mut().for_each(|v| *v /= m as f64);
                (mean, var, true)
            }
            BnMode::Eval { mean, var } => {
                if mean.len() != n || var.len() != n {
                    return Err(Error::dim("running statistics width"));
                }
                (mean.to_vec(), var.to_vec(), false)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut xhat = vec![0.0; m * n];
        for (xr, hr) in xs.chunks(n).zip(xhat.chunks_mut(n)) {
            for c in 0..n {
                hr[c] = (xr[c] - mean[c]) * inv_std[c];
            }
        }
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut out = vec![0.0; m * n];
        for (hr, or) in xhat.chunks(n).zip(out.chunks_mut(n)) {
            for c in 0..n {
                or[c] = g[c] * hr[c] + b[c];
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        Ok(self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_mean: mean,
                batch_var: var,
                training,
            },
            ng,
        ))
    }

    /// Batch mean and (biased) variance used by a training-mode batch norm node.
    pub fn batch_stats(&self, v: Var) -> Option<(&[f64], &[f64])> {
        match &self.nodes[v.0].op {
            Op::BatchNorm {
                batch_mean,
                batch_var,
                training: true,
                ..
            } => Some((batch_mean, batch_var)),
            _ => None,
        }
    }

    /// Selects rows `index[r]` of `x`.
    pub fn gather_rows(&mut self, x: Var, index: Rc<[usize]>) -> Result<Var> {
        let (rows, n) = self.value(x).dims2()?;
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(Error::dim(format!("gather index {bad} out of {rows} rows")));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(index.len() * n);
        for &i in index.iter() {
            out.extend_from_slice(&src[i * n..(i + 1) * n]);
        }
        let value = Tensor::new(vec![index.len(), n], out)?;
        Ok(self.unary(x, value, Op::GatherRows(x, index)))
    }

    /// Sums row `r` of `x` into output row `index[r]`; output has `rows` rows.
    pub fn scatter_add_rows(&mut self, x: Var, index: Rc<[usize]>, rows: usize) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if index.len() != m {
            return Err(Error::dim("scatter index length"));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(Error::dim(format!("scatter index {bad} out of {rows} rows")));
        }
        let src = self.value(x).data();
        let mut out = vec![0.0; rows * n];
        for (r, &dst) in index.iter().enumerate() {
            for c in 0..n {
                out[dst * n + c] += src[r * n + c];
            }
        }
        let value = Tensor::new(vec![rows, n], out)?;
        Ok(self.unary(x, value, Op::ScatterAddRows(x, index)))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ma, na) = self.value(a).dims2()?;
        let (mb, nb) = self.value(b).dims2()?;
        if ma != mb {
            return Err(Error::dim("concat row counts"));
        }
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(ma * (na + nb));
        for r in 0..ma {
            out.extend_from_slice(&da[r * na..(r + 1) * na]);
            out.extend_from_slice(&db[r * nb..(r + 1) * nb]);
        }
        let value = Tensor::new(vec![ma, na + nb], out)?;
        Ok(self.binary(a, b, value, Op::ConcatCols(a, b)))
    }

    /// Scales row `r` of `x[m×n]` by `w[r]`, where `w` has `m` entries.
    pub fn mul_column(&mut self, x: Var, w: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if self.value(w).len() != m {
            return Err(Error::dim("row weight length"));
        }
        let wv = self.value(w).data();
        let mut out = self.value(x).clone();
        for (row, s) in out.data_mut().chunks_mut(n).zip(wv) {
            row.iter_mut().for_each(|v| *v *= s);
        }
        Ok(self.binary(x, w, out, Op::MulColumn(x, w)))
    }

    /// Column `col` of `x[m×n]` as `[m×1]`.
    pub fn column(&mut self, x: Var, col: usize) -> Result<Var> {
        let (m, n) = self.value(x).dims2()?;
        if col >= n {
            return Err(Error::dim(format!("column {col} of {n}")));
        }
        let d = self.value(x).data();
        let out = (0..m).map(|r| d[r * n + col]).collect();
        let value = Tensor::new(vec![m, 1], out)?;
        Ok(self.unary(x, value, Op::Column(x, col)))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let v = softmax_rows(self.value(x));
        self.unary(x, v, Op::Softmax(x))
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let (_, n) = rows_cols(src);
        let mut out = src.clone();
        for row in out.data_mut().chunks_mut(n) {
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|v| *v -= lse);
        }
        self.unary(x, out, Op::LogSoftmax(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        self.unary(x, v, Op::Sum(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a * a);
        self.unary(x, v, Op::Square(x))
    }

    /// Square root; the derivative at exactly zero is taken as 0.
    pub fn sqrt(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a.max(0.0).sqrt());
        self.unary(x, v, Op::Sqrt(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::abs);
        self.unary(x, v, Op::Abs(x))
    }

    /// Gradients of the scalar `loss` with respect to all upstream nodes.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::dim(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].needs_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &dy, &mut grads)?;
            grads[idx] = Some(dy);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, dy: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2()?;
                let (_, n) = self.value(*b).dims2()?;
                if self.ng(*a) {
                    let mut da = Tensor::zeros(&[m, k]);
                    gemm(m, n, k, dy.data(), false, self.value(*b).data(), true, da.data_mut(), 0.0);
                    self.accumulate(grads, *a, da);
                }
                if self.ng(*b) {
                    let mut db = Tensor::zeros(&[k, n]);
                    gemm(k, m, n, self.value(*a).data(), true, dy.data(), false, db.data_mut(), 0.0);
                    self.accumulate(grads, *b, db);
                }
            }
            Op::AddBias(x, bias) => {
                self.accumulate(grads, *x, dy.clone());
                if self.ng(*bias) {
                    let (_, n) = dy.dims2()?;
                    let mut db = vec![0.0; n];
                    for row in dy.data().chunks(n) {
                        for (acc, v) in db.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    let shape = self.value(*bias).shape().to_vec();
                    self.accumulate(grads, *bias, Tensor::new(shape, db)?);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, dy.clone());
                self.accumulate(grads, *b, dy.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, dy.clone());
                if self.ng(*b) {
                    self.accumulate(grads, *b, dy.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    self.accumulate(grads, *a, dy.zip_map(self.value(*b), |g, y| g * y)?);
                }
                if self.ng(*b) {
                    self.accumulate(grads, *b, dy.zip_map(self.value(*a), |g, x| g * x)?);
                }
            }
            Op::Scale(x, c) => {
                let c = *c;
                self.accumulate(grads, *x, dy.map(|v| v * c));
            }
            Op::Elu(x) => {
                let g = dy.zip_map(self.value(*x), |g, a| {
                    if a > 0.0 {
                        g
                    } else {
                        g * ELU_ALPHA * a.exp()
                    }
                })?;
                self.accumulate(grads, *x, g);
            }
            Op::Relu(x) => {
                let g = dy.zip_map(self.value(*x), |g, a| if a > 0.0 { g } else { 0.0 })?;
                self.accumulate(grads, *x, g);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                training,
                ..
            } => {
                let (m, n) = dy.dims2()?;
                let dyd = dy.data();
                if self.ng(*gamma) || self.ng(*beta) {
                    let mut dg = vec![0.0; n];
                    let mut dbt = vec![0.0; n];
                    for (gr, hr) in dyd.chunks(n).zip(xhat.chunks(n)) {
                        for c in 0..n {
                            dg[c] += gr[c] * hr[c];
                            dbt[c] += gr[c];
                        }
                    }
                    let gs = self.value(*gamma).shape().to_vec();
                    let bs = self.value(*beta).shape().to_vec();
                    self.accumulate(grads, *gamma, Tensor::new(gs, dg)?);
                    self.accumulate(grads, *beta, Tensor::new(bs, dbt)?);
                }
                if self.ng(*x) {
                    let g = self.value(*gamma).data();
                    let mut dx = vec![0.0; m * n];
                    if *training {
                        let mut s1 = vec![0.0; n];
                        let mut s2 = vec![0.0; n];
                        for (gr, hr) in dyd.chunks(n).zip(xhat.chunks(n)) {
                            for c in 0..n {
                                let dh = gr[c] * g[c];
                                s1[c] += dh;
                                s2[c] += dh * hr[c];
                            }
                        }
                        let mf = m as f64;
                        for ((dr, gr), hr) in dx.chunks_mut(n).zip(dyd.chunks(n)).zip(xhat.chunks(n)) {
                            for c in 0..n {
                                let dh = gr[c] * g[c];
                                dr[c] = inv_std[c] / mf * (mf * dh - s1[c] - hr[c] * s2[c]);
                            }
                        }
                    } else {
                        for (dr, gr) in dx.chunks_mut(n).zip(dyd.chunks(n)) {
                            for c in 0..n {
                                dr[c] = gr[c] * g[c] * inv_std[c];
                            }
                        }
                    }
                    self.accumulate(grads, *x, Tensor::new(vec![m, n], dx)?);
                }
            }
            Op::GatherRows(x, index) => {
                if self.ng(*x) {
                    let (rows, n) = self.value(*x).dims2()?;
                    let mut dx = vec![0.0; rows * n];
                    for (r, &src) in index.iter().enumerate() {
                        for c in 0..n {
                            dx[src * n + c] += dy.data()[r * n + c];
                        }
                    }
                    self.accumulate(grads, *x, Tensor::new(vec![rows, n], dx)?);
                }
            }
            Op::ScatterAddRows(x, index) => {
                if self.ng(*x) {
                    let (_, n) = dy.dims2()?;
                    let mut dx = Vec::with_capacity(index.len() * n);
                    for &dst in index.iter() {
                        dx.extend_from_slice(&dy.data()[dst * n..(dst + 1) * n]);
                    }
                    self.accumulate(grads, *x, Tensor::new(vec![index.len(), n], dx)?);
                }
            }
            Op::ConcatCols(a, b) => {
                let (m, na) = self.value(*a).dims2()?;
                let (_, nb) = self.value(*b).dims2()?;
                let d = dy.data();
                let w = na + nb;
                if self.ng(*a) {
                    let mut da = Vec::with_capacity(m * na);
                    for r in 0..m {
                        da.extend_from_slice(&d[r * w..r * w + na]);
                    }
                    self.accumulate(grads, *a, Tensor::new(vec![m, na], da)?);
                }
                if self.ng(*b) {
                    let mut db = Vec::with_capacity(m * nb);
                    for r in 0..m {
                        db.extend_from_slice(&d[r * w + na..(r + 1) * w]);
                    }
                    self.accumulate(grads, *b, Tensor::new(vec![m, nb], db)?);
                }
            }
            Op::MulColumn(x, w) => {
                let (m, n) = dy.dims2()?;
                if self.ng(*x) {
                    let wv = self.value(*w).data();
                    let mut dx = dy.clone();
                    for (row, s) in dx.data_mut().chunks_mut(n).zip(wv) {
                        row.iter_mut().for_each(|v| *v *= s);
                    }
                    self.accumulate(grads, *x, dx);
                }
                if self.ng(*w) {
                    let xv = self.value(*x).data();
                    let dw: Vec<f64> = (0..m)
                        .map(|r| {
                            dy.data()[r * n..(r + 1) * n]
                                .iter()
                                .zip(&xv[r * n..(r + 1) * n])
                                .map(|(g, a)| g * a)
                                .sum()
                        })
                        .collect();
                    let shape = self.value(*w).shape().to_vec();
                    self.accumulate(grads, *w, Tensor::new(shape, dw)?);
                }
            }
            Op::Column(x, col) => {
                if self.ng(*x) {
                    let (m, n) = self.value(*x).dims2()?;
                    let mut dx = vec![0.0; m * n];
                    for r in 0..m {
                        dx[r * n + col] = dy.data()[r];
                    }
                    self.accumulate(grads, *x, Tensor::new(vec![m, n], dx)?);
                }
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let (_, n) = rows_cols(y);
                let mut dx = dy.clone();
                for (dr, yr) in dx.data_mut().chunks_mut(n).zip(y.data().chunks(n)) {
                    let dot: f64 = dr.iter().zip(yr).map(|(g, p)| g * p).sum();
                    for (d, p) in dr.iter_mut().zip(yr) {
                        *d = p * (*d - dot);
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::LogSoftmax(x) => {
                let y = &node.value;
                let (_, n) = rows_cols(y);
                let mut dx = dy.clone();
                for (dr, yr) in dx.data_mut().chunks_mut(n).zip(y.data().chunks(n)) {
                    let total: f64 = dr.iter().sum();
                    for (d, ly) in dr.iter_mut().zip(yr) {
                        *d -= ly.exp() * total;
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Sum(x) => {
                let g = dy.data()[0];
                let shape = self.value(*x).shape().to_vec();
                self.accumulate(grads, *x, Tensor::full(&shape, g));
            }
            Op::Square(x) => {
                let g = dy.zip_map(self.value(*x), |g, a| 2.0 * a * g)?;
                self.accumulate(grads, *x, g);
            }
            Op::Sqrt(x) => {
                let g = dy.zip_map(&node.value, |g, y| if y > 0.0 { g / (2.0 * y) } else { 0.0 })?;
                self.accumulate(grads, *x, g);
            }
            Op::Abs(x) => {
                let g = dy.zip_map(self.value(*x), |g, a| {
                    if a > 0.0 {
                        g
                    } else if a < 0.0 {
                        -g
                    } else {
                        0.0
                    }
                })?;
                self.accumulate(grads, *x, g);
            }
        }
        Ok(())
    }
}

pub fn elu(a: f64) -> f64 {
    if a > 0.0 {
        a
    } else {
        ELU_ALPHA * (a.exp() - 1.0)
    }
}

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Row-wise softmax over the last axis of a plain tensor.
pub fn softmax_rows(t: &Tensor) -> Tensor {
    let (_, n) = rows_cols(t);
    let mut out = t.clone();
    for row in out.data_mut().chunks_mut(n) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    out
}
