//! Direct (tape-free) evaluation of the four scoring functions. Each maps a
//! batch of head and relation embeddings to logits over every row of `E`.

use crate::error::{KgeError, Result};
use crate::numkernel::{matmul, matmul_bt, Tensor};

fn check_pair(op: &'static str, h: &Tensor, r: &Tensor) -> Result<()> {
    if h.rank() != 2 || r.rank() != 2 || h.rows() != r.rows() {
        return Err(KgeError::dim(op, h.shape(), r.shape()));
    }
    Ok(())
}

/// `u[i,t] = Σ_j h[i,j]·r[i,j]·E[t,j]`.
pub fn score_distmult(h: &Tensor, r: &Tensor, entities: &Tensor) -> Result<Tensor> {
    check_pair("score_distmult", h, r)?;
    if h.shape() != r.shape() {
        return Err(KgeError::dim("score_distmult", h.shape(), r.shape()));
    }
    let z = h.zip_map(r, |a, b| a * b)?;
    matmul_bt(&z, entities)
}

/// `u[i,t] = Re(Σ_j ĥ_j · r̂_j · conj(t̂_j))` with split-half layout: the
/// first `d/2` columns hold real parts, the last `d/2` imaginary parts.
pub fn score_complex(h: &Tensor, r: &Tensor, entities: &Tensor) -> Result<Tensor> {
    check_pair("score_complex", h, r)?;
    if h.shape() != r.shape() {
        return Err(KgeError::dim("score_complex", h.shape(), r.shape()));
    }
    if !h.cols().is_multiple_of(2) {
        return Err(KgeError::Config(format!(
            "ComplEx needs an even embedding dimension, got {}",
            h.cols()
        )));
    }
    let half = h.cols() / 2;
    let mut z = Tensor::zeros(h.shape());
    for i in 0..h.rows() {
        let (hr, hi) = h.row(i).split_at(half);
        let (rr, ri) = r.row(i).split_at(half);
        let out = z.row_mut(i);
        for j in 0..half {
            out[j] = hr[j] * rr[j] - hi[j] * ri[j];
            out[half + j] = hr[j] * ri[j] + hi[j] * rr[j];
        }
    }
    matmul_bt(&z, entities)
}

/// `u[i,t] = Σ_{a,b,c} W[a,b,c]·h[i,a]·r[i,b]·E[t,c]` for a core `W` of shape
/// `d_e × d_r × d_e`.
pub fn score_tucker(h: &Tensor, r: &Tensor, core: &Tensor, entities: &Tensor) -> Result<Tensor> {
    check_pair("score_tucker", h, r)?;
    let (de, dr) = (h.cols(), r.cols());
    if core.shape() != [de, dr, de] {
        return Err(KgeError::dim("score_tucker", core.shape(), &[de, dr, de]));
    }
    let w = core.clone().reshape(&[de, dr * de])?;
    let hw = matmul(h, &w)?;
    let mut z = Tensor::zeros(&[h.rows(), de]);
    for i in 0..h.rows() {
        let (hwi, ri) = (hw.row(i), r.row(i));
        let out = z.row_mut(i);
        for (b, &rb) in ri.iter().enumerate() {
            for (o, &x) in out.iter_mut().zip(&hwi[b * de..(b + 1) * de]) {
                *o += rb * x;
            }
        }
    }
    matmul_bt(&z, entities)
}

/// Low-rank factorized bilinear pooling:
/// `g = (h·U) ⊙ (r·V)`, `z_j = Σ_{m<k} g[j·k + m]`, `u = z·Eᵀ`, with
/// `U: d_e × k·d_e` and `V: d_r × k·d_e`.
pub fn score_lowfer(
    h: &Tensor,
    r: &Tensor,
    u_factor: &Tensor,
    v_factor: &Tensor,
    rank: usize,
    entities: &Tensor,
) -> Result<Tensor> {
    check_pair("score_lowfer", h, r)?;
    let (de, dr) = (h.cols(), r.cols());
    if rank == 0 || u_factor.shape() != [de, rank * de] {
        return Err(KgeError::dim(
            "score_lowfer",
            u_factor.shape(),
            &[de, rank * de],
        ));
    }
    if v_factor.shape() != [dr, rank * de] {
        return Err(KgeError::dim(
            "score_lowfer",
            v_factor.shape(),
            &[dr, rank * de],
        ));
    }
    let g = matmul(h, u_factor)?.zip_map(&matmul(r, v_factor)?, |a, b| a * b)?;
    let mut z = Tensor::zeros(&[h.rows(), de]);
    for i in 0..h.rows() {
        let gi = g.row(i);
        for (j, o) in z.row_mut(i).iter_mut().enumerate() {
            *o = gi[j * rank..(j + 1) * rank].iter().sum();
        }
    }
    matmul_bt(&z, entities)
}
