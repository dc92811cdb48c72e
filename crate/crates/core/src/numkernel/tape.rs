//! Reverse-mode differentiation over dense tensors.
//!
//! A [`Tape`] records every operation of one forward pass. Parameter leaves
//! read their values straight from a borrowed [`ParamStore`]; gradients come
//! back as a [`Gradients`] value that the caller folds into the store once
//! the tape is dropped.

use std::collections::HashMap;

use super::linalg::{matmul, matmul_at, matmul_bt};
use super::ops::{self, BN_EPS};
use super::param::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{KgeError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param(ParamId),
    Gather {
        src: usize,
        ids: Vec<usize>,
    },
    MatMul(usize, usize),
    MatMulBt(usize, usize),
    Mul(usize, usize),
    Add(usize, usize),
    Scale(usize, f64),
    Mask(usize, Tensor),
    MeanRows(usize),
    SoftmaxRows(usize, f64),
    ComplexMul(usize, usize),
    BatchedVecMat {
        vecs: usize,
        mats: usize,
        out_dim: usize,
    },
    SumPool(usize, usize),
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Tensor,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    BceLogits {
        logits: usize,
        /// `σ(u) - y`
        residual: Tensor,
    },
    DistillKl {
        student: usize,
        log_ps: Vec<f64>,
        log_pt: Vec<f64>,
        temperature: f64,
        scale: f64,
    },
    Reshape(usize),
    Sum(usize),
    SumSquares(usize),
}

struct Node {
    value: Option<Tensor>,
    op: Op,
}

/// Parameter buffers (batchnorm running statistics) recomputed during a
/// training-mode forward pass, to be written back after the pass.
pub type PendingUpdates = Vec<(ParamId, Tensor)>;

pub struct Tape<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    pending: PendingUpdates,
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            params: HashMap::new(),
            pending: Vec::new(),
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.store.value(*id),
            (None, _) => unreachable!("node without a value"),
        }
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Leaf bound to a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    pub fn gather(&mut self, src: Var, ids: &[usize]) -> Result<Var> {
        let out = self.value(src).gather_rows(ids)?;
        Ok(self.push(
            out,
            Op::Gather {
                src: src.0,
                ids: ids.to_vec(),
            },
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a.0, b.0)))
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = matmul_bt(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMulBt(a.0, b.0)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a.0, b.0)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a.0, b.0)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|x| x * factor);
        self.push(out, Op::Scale(a.0, factor))
    }

    /// Elementwise product with a constant mask (dropout).
    pub fn mask(&mut self, a: Var, mask: Option<Tensor>) -> Result<Var> {
        match mask {
            None => Ok(a),
            Some(m) => {
                let out = self.value(a).zip_map(&m, |x, y| x * y)?;
                Ok(self.push(out, Op::Mask(a.0, m)))
            }
        }
    }

    /// Column means of a matrix, as a `1×d` row.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let (n, d) = (x.rows(), x.cols());
        if n == 0 {
            return Err(KgeError::dim("mean_rows", x.shape(), &[1, d]));
        }
        let mut out = vec![0.0; d];
        for i in 0..n {
            for (o, v) in out.iter_mut().zip(x.row(i)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= n as f64);
        let t = Tensor::new(vec![1, d], out)?;
        Ok(self.push(t, Op::MeanRows(a.0)))
    }

    /// Row-wise `softmax(x / temperature)`.
    pub fn softmax_rows(&mut self, a: Var, temperature: f64) -> Result<Var> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(KgeError::Parameter(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        let x = self.value(a);
        let mut out = Tensor::zeros(x.shape());
        for i in 0..x.rows() {
            ops::softmax_row(x.row(i), temperature, out.row_mut(i));
        }
        Ok(self.push(out, Op::SoftmaxRows(a.0, temperature)))
    }

    /// Complex Hadamard product of split-half (real block, imaginary block)
    /// matrices.
    pub fn complex_mul(&mut self, h: Var, r: Var) -> Result<Var> {
        let (hv, rv) = (self.value(h), self.value(r));
        if hv.shape() != rv.shape() || hv.cols() % 2 != 0 {
            return Err(KgeError::dim("complex_mul", hv.shape(), rv.shape()));
        }
        let half = hv.cols() / 2;
        let mut out = Tensor::zeros(hv.shape());
        for i in 0..hv.rows() {
            let (hr, hi) = hv.row(i).split_at(half);
            let (rr, ri) = rv.row(i).split_at(half);
            let o = out.row_mut(i);
            for j in 0..half {
                o[j] = hr[j] * rr[j] - hi[j] * ri[j];
                o[half + j] = hr[j] * ri[j] + hi[j] * rr[j];
            }
        }
        Ok(self.push(out, Op::ComplexMul(h.0, r.0)))
    }

    /// Per-row vector-matrix product: row `i` of `mats` is read as a
    /// `k×out_dim` matrix and contracted with row `i` of `vecs` (length `k`).
    pub fn batched_vec_mat(&mut self, vecs: Var, mats: Var, out_dim: usize) -> Result<Var> {
        let (v, m) = (self.value(vecs), self.value(mats));
        let k = v.cols();
        if v.rows() != m.rows() || m.cols() != k * out_dim {
            return Err(KgeError::dim("batched_vec_mat", v.shape(), m.shape()));
        }
        let mut out = Tensor::zeros(&[v.rows(), out_dim]);
        for i in 0..v.rows() {
            let (vrow, mrow) = (v.row(i), m.row(i));
            let o = out.row_mut(i);
            for (b, &vb) in vrow.iter().enumerate() {
                for (oc, &mc) in o.iter_mut().zip(&mrow[b * out_dim..(b + 1) * out_dim]) {
                    *oc += vb * mc;
                }
            }
        }
        Ok(self.push(
            out,
            Op::BatchedVecMat {
                vecs: vecs.0,
                mats: mats.0,
                out_dim,
            },
        ))
    }

    /// Sums consecutive groups of `k` columns.
    pub fn sum_pool(&mut self, a: Var, k: usize) -> Result<Var> {
        let x = self.value(a);
        if k == 0 || !x.cols().is_multiple_of(k) {
            return Err(KgeError::dim("sum_pool", x.shape(), &[k]));
        }
        let d = x.cols() / k;
        let mut out = Tensor::zeros(&[x.rows(), d]);
        for i in 0..x.rows() {
            let row = x.row(i);
            for (j, o) in out.row_mut(i).iter_mut().enumerate() {
                *o = row[j * k..(j + 1) * k].iter().sum();
            }
        }
        Ok(self.push(out, Op::SumPool(a.0, k)))
    }

    /// Batch normalization with learnable `gamma`/`beta` and running
    /// statistics. In training mode the running statistics are queued in
    /// [`Tape::take_pending`].
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: ParamId,
        beta: ParamId,
        running_mean: ParamId,
        running_var: ParamId,
        training: bool,
    ) -> Result<Var> {
        let xv = self.value(x).clone();
        let d = xv.cols();
        if self.store.value(gamma).len() != d || xv.rank() != 2 {
            return Err(KgeError::dim(
                "batchnorm",
                xv.shape(),
                self.store.value(gamma).shape(),
            ));
        }
        let (mean, var) = if training {
            if xv.rows() == 0 {
                return Err(KgeError::Parameter(
                    "batchnorm needs at least one row in training mode".into(),
                ));
            }
            let (m, v) = ops::column_stats(&xv);
            let mut rm = self.store.value(running_mean).clone();
            let mut rv = self.store.value(running_var).clone();
            ops::update_running(rm.data_mut(), rv.data_mut(), &m, &v, xv.rows());
            self.pending.push((running_mean, rm));
            self.pending.push((running_var, rv));
            (m, v)
        } else {
            (
                self.store.value(running_mean).data().to_vec(),
                self.store.value(running_var).data().to_vec(),
            )
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let g = self.store.value(gamma).data();
        let b = self.store.value(beta).data();
        let mut xhat = xv.clone();
        let mut out = xv.clone();
        for i in 0..xv.rows() {
            let xh = xhat.row_mut(i);
            for j in 0..d {
                xh[j] = (xh[j] - mean[j]) * inv_std[j];
            }
            let o = out.row_mut(i);
            for j in 0..d {
                o[j] = g[j] * xh[j] + b[j];
            }
        }
        let gamma_v = self.param(gamma);
        let beta_v = self.param(beta);
        Ok(self.push(
            out,
            Op::BatchNorm {
                x: x.0,
                gamma: gamma_v.0,
                beta: beta_v.0,
                xhat,
                inv_std,
                batch_stats: training,
            },
        ))
    }

    /// Mean sigmoid binary cross-entropy of logits against fixed targets.
    pub fn bce_logits(&mut self, logits: Var, targets: Tensor) -> Result<Var> {
        let (loss, residual) = ops::bce_with_residuals(self.value(logits), &targets)?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceLogits {
                logits: logits.0,
                residual,
            },
        ))
    }

    /// `scale · KL(softmax(student/T) ‖ softmax(teacher/T))`. The teacher is
    /// read as a constant: no gradient ever flows into it.
    pub fn distill_kl(
        &mut self,
        student: Var,
        teacher: Var,
        temperature: f64,
        scale: f64,
    ) -> Result<Var> {
        let (s, t) = (self.value(student), self.value(teacher));
        if s.len() != t.len() {
            return Err(KgeError::dim("distill_loss", s.shape(), t.shape()));
        }
        let log_ps =
            ops::log_softmax_temp(&Tensor::from_vec(s.data().to_vec()), temperature)?.into_data();
        let log_pt =
            ops::log_softmax_temp(&Tensor::from_vec(t.data().to_vec()), temperature)?.into_data();
        let kl: f64 = log_ps
            .iter()
            .zip(&log_pt)
            .map(|(ls, lt)| ls.exp() * (ls - lt))
            .sum::<f64>()
            // the divergence is non-negative; anything below is rounding
            .max(0.0);
        Ok(self.push(
            Tensor::scalar(scale * kl),
            Op::DistillKl {
                student: student.0,
                log_ps,
                log_pt,
                temperature,
                scale,
            },
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(a.0)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a.0))
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().map(|x| x * x).sum();
        self.push(Tensor::scalar(s), Op::SumSquares(a.0))
    }

    pub fn take_pending(&mut self) -> PendingUpdates {
        std::mem::take(&mut self.pending)
    }

    /// Back-propagates from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(KgeError::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }

        let params = self
            .params
            .iter()
            .map(|(&id, &v)| (id, v.0))
            .collect::<Vec<_>>();
        Ok(Gradients { grads, params })
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let val = |k: usize| self.value(Var(k));
        match &self.nodes[i].op {
            Op::Leaf | Op::Param(_) => {}
            Op::Gather { src, ids } => {
                let mut d = Tensor::zeros(val(*src).shape());
                for (k, &id) in ids.iter().enumerate() {
                    for (a, b) in d.row_mut(id).iter_mut().zip(g.row(k)) {
                        *a += b;
                    }
                }
                acc(grads, *src, d)?;
            }
            Op::MatMul(a, b) => {
                let da = matmul_bt(g, val(*b))?;
                let db = matmul_at(val(*a), g)?;
                acc(grads, *a, da)?;
                acc(grads, *b, db)?;
            }
            Op::MatMulBt(a, b) => {
                let da = matmul(g, val(*b))?;
                let db = matmul_at(g, val(*a))?;
                acc(grads, *a, da)?;
                acc(grads, *b, db)?;
            }
            Op::Mul(a, b) => {
                let da = g.zip_map(val(*b), |x, y| x * y)?;
                let db = g.zip_map(val(*a), |x, y| x * y)?;
                acc(grads, *a, da)?;
                acc(grads, *b, db)?;
            }
            Op::Add(a, b) => {
                acc(grads, *a, g.clone())?;
                acc(grads, *b, g.clone())?;
            }
            Op::Scale(a, f) => acc(grads, *a, g.map(|x| x * f))?,
            Op::Mask(a, m) => acc(grads, *a, g.zip_map(m, |x, y| x * y)?)?,
            Op::MeanRows(a) => {
                let x = val(*a);
                let n = x.rows() as f64;
                let mut d = Tensor::zeros(x.shape());
                for r in 0..x.rows() {
                    for (o, gv) in d.row_mut(r).iter_mut().zip(g.data()) {
                        *o = gv / n;
                    }
                }
                acc(grads, *a, d)?;
            }
            Op::SoftmaxRows(a, t) => {
                let y = self.value(Var(i));
                let mut d = Tensor::zeros(y.shape());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for ((o, &yv), &gv) in d.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *o = yv * (gv - dot) / t;
                    }
                }
                acc(grads, *a, d)?;
            }
            Op::ComplexMul(h, r) => {
                let (hv, rv) = (val(*h), val(*r));
                let half = hv.cols() / 2;
                let mut dh = Tensor::zeros(hv.shape());
                let mut dr = Tensor::zeros(rv.shape());
                for row in 0..hv.rows() {
                    let (hr, hi) = hv.row(row).split_at(half);
                    let (rr, ri) = rv.row(row).split_at(half);
                    let (gre, gim) = g.row(row).split_at(half);
                    let dhr = dh.row_mut(row);
                    for j in 0..half {
                        dhr[j] = gre[j] * rr[j] + gim[j] * ri[j];
                        dhr[half + j] = -gre[j] * ri[j] + gim[j] * rr[j];
                    }
                    let drr = dr.row_mut(row);
                    for j in 0..half {
                        drr[j] = gre[j] * hr[j] + gim[j] * hi[j];
                        drr[half + j] = -gre[j] * hi[j] + gim[j] * hr[j];
                    }
                }
                acc(grads, *h, dh)?;
                acc(grads, *r, dr)?;
            }
            Op::BatchedVecMat {
                vecs,
                mats,
                out_dim,
            } => {
                let (v, m) = (val(*vecs), val(*mats));
                let mut dv = Tensor::zeros(v.shape());
                let mut dm = Tensor::zeros(m.shape());
                for r in 0..v.rows() {
                    let (vrow, mrow, grow) = (v.row(r), m.row(r), g.row(r));
                    let dvrow = dv.row_mut(r);
                    for (b, dvb) in dvrow.iter_mut().enumerate() {
                        let block = &mrow[b * out_dim..(b + 1) * out_dim];
                        *dvb = block.iter().zip(grow).map(|(x, y)| x * y).sum();
                    }
                    let dmrow = dm.row_mut(r);
                    for (b, &vb) in vrow.iter().enumerate() {
                        for (o, &gc) in dmrow[b * out_dim..(b + 1) * out_dim].iter_mut().zip(grow) {
                            *o = vb * gc;
                        }
                    }
                }
                acc(grads, *vecs, dv)?;
                acc(grads, *mats, dm)?;
            }
            Op::SumPool(a, k) => {
                let x = val(*a);
                let mut d = Tensor::zeros(x.shape());
                for r in 0..x.rows() {
                    let grow = g.row(r);
                    for (c, o) in d.row_mut(r).iter_mut().enumerate() {
                        *o = grow[c / k];
                    }
                }
                acc(grads, *a, d)?;
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let (n, d) = (xhat.rows(), xhat.cols());
                let gam = val(*gamma).data();
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                for r in 0..n {
                    for j in 0..d {
                        dgamma[j] += g.row(r)[j] * xhat.row(r)[j];
                        dbeta[j] += g.row(r)[j];
                    }
                }
                let mut dx = Tensor::zeros(xhat.shape());
                if *batch_stats {
                    // dx = inv_std/n · (n·dxhat − Σdxhat − xhat·Σ(dxhat·xhat))
                    let mut sum_dxhat = vec![0.0; d];
                    let mut sum_dxhat_xhat = vec![0.0; d];
                    for r in 0..n {
                        for j in 0..d {
                            let dxh = g.row(r)[j] * gam[j];
                            sum_dxhat[j] += dxh;
                            sum_dxhat_xhat[j] += dxh * xhat.row(r)[j];
                        }
                    }
                    let nf = n as f64;
                    for r in 0..n {
                        let xr = xhat.row(r);
                        let gr = g.row(r);
                        let o = dx.row_mut(r);
                        for j in 0..d {
                            let dxh = gr[j] * gam[j];
                            o[j] = inv_std[j] / nf
                                * (nf * dxh - sum_dxhat[j] - xr[j] * sum_dxhat_xhat[j]);
                        }
                    }
                } else {
                    for r in 0..n {
                        let gr = g.row(r);
                        for (j, o) in dx.row_mut(r).iter_mut().enumerate() {
                            *o = gr[j] * gam[j] * inv_std[j];
                        }
                    }
                }
                acc(grads, *x, dx)?;
                let gshape = val(*gamma).shape().to_vec();
                acc(grads, *gamma, Tensor::new(gshape.clone(), dgamma)?)?;
                acc(grads, *beta, Tensor::new(gshape, dbeta)?)?;
            }
            Op::BceLogits { logits, residual } => {
                let scale = g.item() / residual.len() as f64;
                acc(grads, *logits, residual.map(|r| r * scale))?;
            }
            Op::DistillKl {
                student,
                log_ps,
                log_pt,
                temperature,
                scale,
            } => {
                let kl: f64 = log_ps
                    .iter()
                    .zip(log_pt)
                    .map(|(ls, lt)| ls.exp() * (ls - lt))
                    .sum();
                let f = g.item() * scale / temperature;
                let data: Vec<f64> = log_ps
                    .iter()
                    .zip(log_pt)
                    .map(|(ls, lt)| f * ls.exp() * ((ls - lt) - kl))
                    .collect();
                let shape = val(*student).shape().to_vec();
                acc(grads, *student, Tensor::new(shape, data)?)?;
            }
            Op::Reshape(a) => {
                let shape = val(*a).shape().to_vec();
                acc(grads, *a, g.clone().reshape(&shape)?)?;
            }
            Op::Sum(a) => acc(grads, *a, Tensor::full(val(*a).shape(), g.item()))?,
            Op::SumSquares(a) => {
                let gv = g.item();
                acc(grads, *a, val(*a).map(|x| 2.0 * x * gv))?;
            }
        }
        Ok(())
    }
}

fn acc(grads: &mut [Option<Tensor>], idx: usize, g: Tensor) -> Result<()> {
    match &mut grads[idx] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    /// Gradient with respect to any recorded node; `None` when the loss does
    /// not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|&(_, n)| self.grads[n].as_ref())
    }

    /// Adds every parameter gradient into the store's gradient buffers.
    pub fn accumulate_into(&self, store: &mut ParamStore) -> Result<()> {
        let mut params = self.params.clone();
        params.sort();
        for (id, node) in params {
            if let Some(g) = &self.grads[node] {
                store.accumulate_grad(id, g)?;
            }
        }
        Ok(())
    }
}

pub fn apply_pending(store: &mut ParamStore, updates: PendingUpdates) {
    for (id, value) in updates {
        *store.value_mut(id) = value;
    }
}
