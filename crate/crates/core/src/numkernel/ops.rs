//! Gradient-free numerical primitives. Their differentiable counterparts
//! live on [`Tape`](super::tape::Tape) and share these helpers.

use rayon::prelude::*;

use super::rng::RngState;
use super::tensor::Tensor;
use crate::error::{KgeError, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(KgeError::Parameter(format!(
            "temperature must be positive and finite, got {t}"
        )))
    }
}

/// `log softmax(u / t)` for one row, with max subtraction.
pub(crate) fn log_softmax_row(u: &[f64], t: f64, out: &mut [f64]) {
    let max = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &x) in out.iter_mut().zip(u) {
        *o = (x - max) / t;
        z += o.exp();
    }
    let lz = z.ln();
    out.iter_mut().for_each(|o| *o -= lz);
}

pub(crate) fn softmax_row(u: &[f64], t: f64, out: &mut [f64]) {
    let max = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &x) in out.iter_mut().zip(u) {
        *o = ((x - max) / t).exp();
        z += *o;
    }
    out.iter_mut().for_each(|o| *o /= z);
}

/// Temperature-softened softmax over a vector.
pub fn softmax_temp(u: &Tensor, t: f64) -> Result<Tensor> {
    check_temperature(t)?;
    if u.is_empty() {
        return Err(KgeError::Parameter("softmax of an empty vector".into()));
    }
    let mut out = Tensor::zeros(u.shape());
    softmax_row(u.data(), t, out.data_mut());
    Ok(out)
}

pub fn log_softmax_temp(u: &Tensor, t: f64) -> Result<Tensor> {
    check_temperature(t)?;
    if u.is_empty() {
        return Err(KgeError::Parameter("softmax of an empty vector".into()));
    }
    let mut out = Tensor::zeros(u.shape());
    log_softmax_row(u.data(), t, out.data_mut());
    Ok(out)
}

/// `KL(p ‖ q) = Σ p ln(p/q)` with `0 ln(0/q) = 0`.
pub fn kl_divergence(p: &Tensor, q: &Tensor) -> Result<f64> {
    if p.len() != q.len() {
        return Err(KgeError::dim("kl_divergence", p.shape(), q.shape()));
    }
    for (name, v) in [("p", p), ("q", q)] {
        let s = v.sum();
        if (s - 1.0).abs() > 1e-9 || v.data().iter().any(|&x| x < 0.0) {
            return Err(KgeError::Parameter(format!(
                "{name} is not a probability vector (sum {s})"
            )));
        }
    }
    let mut acc = 0.0;
    for (i, (&pi, &qi)) in p.data().iter().zip(q.data()).enumerate() {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(KgeError::Divergence { index: i });
        }
        acc += pi * (pi / qi).ln();
    }
    Ok(acc.max(0.0))
}

fn check_rate(rate: f64) -> Result<()> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(KgeError::Parameter(format!(
            "dropout rate must lie in [0, 1), got {rate}"
        )))
    }
}

/// Inverted-dropout multiplier mask: each entry is `0` with probability
/// `rate`, else `1/(1-rate)`. `None` means identity and draws nothing.
pub fn dropout_mask(
    shape: &[usize],
    rate: f64,
    rng: &mut RngState,
    training: bool,
) -> Result<Option<Tensor>> {
    check_rate(rate)?;
    if !training || rate == 0.0 {
        return Ok(None);
    }
    let keep = 1.0 / (1.0 - rate);
    let mut mask = Tensor::zeros(shape);
    for m in mask.data_mut() {
        *m = if rng.uniform() < rate { 0.0 } else { keep };
    }
    Ok(Some(mask))
}

pub fn dropout(x: &Tensor, rate: f64, rng: &mut RngState, training: bool) -> Result<Tensor> {
    match dropout_mask(x.shape(), rate, rng, training)? {
        None => Ok(x.clone()),
        Some(mask) => x.zip_map(&mask, |a, m| a * m),
    }
}

/// Per-column mean and population variance of a matrix.
pub(crate) fn column_stats(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = (x.rows(), x.cols());
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; d];
    for i in 0..n {
        for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|s| *s /= n as f64);
    (mean, var)
}

/// Exponential moving update of running statistics. The running variance
/// tracks the unbiased batch variance.
pub(crate) fn update_running(
    running_mean: &mut [f64],
    running_var: &mut [f64],
    mean: &[f64],
    var: &[f64],
    n: usize,
) {
    let unbias = if n > 1 {
        n as f64 / (n as f64 - 1.0)
    } else {
        1.0
    };
    for (r, m) in running_mean.iter_mut().zip(mean) {
        *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
    }
    for (r, v) in running_var.iter_mut().zip(var) {
        *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v * unbias;
    }
}

/// Standalone batch normalization layer over the columns of a `bs×d` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
        }
    }

    pub fn forward(&mut self, x: &Tensor, training: bool) -> Result<Tensor> {
        let d = self.gamma.len();
        if x.cols() != d || x.rank() != 2 {
            return Err(KgeError::dim("batchnorm", x.shape(), &[d]));
        }
        let (mean, var) = if training {
            if x.rows() == 0 {
                return Err(KgeError::Parameter(
                    "batchnorm needs at least one row in training mode".into(),
                ));
            }
            let (m, v) = column_stats(x);
            update_running(
                &mut self.running_mean,
                &mut self.running_var,
                &m,
                &v,
                x.rows(),
            );
            (m, v)
        } else {
            (self.running_mean.clone(), self.running_var.clone())
        };
        let mut out = x.clone();
        for i in 0..x.rows() {
            for (j, o) in out.row_mut(i).iter_mut().enumerate() {
                let xhat = (*o - mean[j]) / (var[j] + BN_EPS).sqrt();
                *o = self.gamma[j] * xhat + self.beta[j];
            }
        }
        Ok(out)
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

/// `-[y ln σ(u) + (1-y) ln(1-σ(u))]` in the overflow-free logits form.
pub(crate) fn bce_term(u: f64, y: f64) -> f64 {
    u.max(0.0) - u * y + (-u.abs()).exp().ln_1p()
}

/// Elements per partial sum. Partials are added in order, so the result does
/// not depend on how many threads computed them.
const BCE_CHUNK: usize = 4096;

fn check_bce(u: &Tensor, y: &Tensor) -> Result<()> {
    if u.shape() != y.shape() {
        return Err(KgeError::dim("bce_loss", u.shape(), y.shape()));
    }
    if u.is_empty() {
        return Err(KgeError::Parameter("bce_loss over an empty tensor".into()));
    }
    Ok(())
}

/// Mean binary cross-entropy between logits and targets in `[0, 1]`.
pub fn bce_with_logits(u: &Tensor, y: &Tensor) -> Result<f64> {
    check_bce(u, y)?;
    let partial = |(uc, yc): (&[f64], &[f64])| -> f64 {
        uc.iter().zip(yc).map(|(&a, &b)| bce_term(a, b)).sum()
    };
    let chunks = u
        .data()
        .par_chunks(BCE_CHUNK)
        .zip(y.data().par_chunks(BCE_CHUNK));
    let partials: Vec<f64> = chunks.map(partial).collect();
    Ok(partials.iter().sum::<f64>() / u.len() as f64)
}

/// [`bce_with_logits`] together with the residuals `σ(u) - y`, sharing one
/// exponential per element.
pub(crate) fn bce_with_residuals(u: &Tensor, y: &Tensor) -> Result<(f64, Tensor)> {
    check_bce(u, y)?;
    let mut residual = vec![0.0; u.len()];
    let partials: Vec<f64> = residual
        .par_chunks_mut(BCE_CHUNK)
        .zip(
            u.data()
                .par_chunks(BCE_CHUNK)
                .zip(y.data().par_chunks(BCE_CHUNK)),
        )
        .map(|(rc, (uc, yc))| {
            let mut total = 0.0;
            for ((r, &a), &b) in rc.iter_mut().zip(uc).zip(yc) {
                let e = (-a.abs()).exp();
                total += a.max(0.0) - a * b + e.ln_1p();
                let sig = if a >= 0.0 {
                    1.0 / (1.0 + e)
                } else {
                    e / (1.0 + e)
                };
                *r = sig - b;
            }
            total
        })
        .collect();
    let loss = partials.iter().sum::<f64>() / u.len() as f64;
    Ok((loss, Tensor::new(u.shape().to_vec(), residual)?))
}
