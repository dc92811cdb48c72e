//! Matrix products with a fixed per-element summation order.
//!
//! Every output element is accumulated left to right over the contracted
//! index, starting from `0.0`. Rows are distributed over rayon workers, but
//! no element is ever split across threads, so results are bit-identical
//! regardless of the thread count.

use rayon::prelude::*;

use super::tensor::Tensor;
use crate::error::{KgeError, Result};

const PAR_THRESHOLD: usize = 1 << 15;

fn as_matrix(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

/// `a[m×n] · b[n×p]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, n) = as_matrix(a);
    let (n2, p) = as_matrix(b);
    if n != n2 || a.rank() > 2 || b.rank() > 2 {
        return Err(KgeError::dim("matmul", a.shape(), b.shape()));
    }
    Tensor::new(vec![m, p], axpy_rows(a.data(), b.data(), m, n, p))
}

/// `a[m×n] · b[p×n]ᵀ`.
pub fn matmul_bt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, n) = as_matrix(a);
    let (p, n2) = as_matrix(b);
    if n != n2 || a.rank() > 2 || b.rank() > 2 {
        return Err(KgeError::dim("matmul_bt", a.shape(), b.shape()));
    }
    // axpy over a transposed copy keeps the per-element order and
    // vectorizes across the output row
    let bt = transpose_data(b.data(), p, n);
    Tensor::new(vec![m, p], axpy_rows(a.data(), &bt, m, n, p))
}

/// `a[m×n]ᵀ · b[m×p]`.
pub fn matmul_at(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, n) = as_matrix(a);
    let (m2, p) = as_matrix(b);
    if m != m2 || a.rank() > 2 || b.rank() > 2 {
        return Err(KgeError::dim("matmul_at", a.shape(), b.shape()));
    }
    // outer products of matching rows, accumulated over i in order, on
    // tiles of output rows
    const TILE: usize = 64;
    let mut out = vec![0.0; n * p];
    let (ad, bd) = (a.data(), b.data());
    if p > 0 {
        let kernel = |tile: usize, chunk: &mut [f64]| {
            let r0 = tile * TILE;
            let r1 = r0 + chunk.len() / p;
            for i in 0..m {
                let brow = &bd[i * p..(i + 1) * p];
                for (row, &air) in chunk.chunks_mut(p).zip(&ad[i * n + r0..i * n + r1]) {
                    for (o, &bij) in row.iter_mut().zip(brow) {
                        *o += air * bij;
                    }
                }
            }
        };
        if m * n * p >= PAR_THRESHOLD {
            out.par_chunks_mut(TILE * p)
                .enumerate()
                .for_each(|(t, c)| kernel(t, c));
        } else {
            out.chunks_mut(TILE * p)
                .enumerate()
                .for_each(|(t, c)| kernel(t, c));
        }
    }
    Tensor::new(vec![n, p], out)
}

/// Row-major `rows × cols` to `cols × rows`, in cache-sized tiles.
fn transpose_data(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    const TILE: usize = 32;
    let mut out = vec![0.0; x.len()];
    for i0 in (0..rows).step_by(TILE) {
        for j0 in (0..cols).step_by(TILE) {
            for i in i0..(i0 + TILE).min(rows) {
                for j in j0..(j0 + TILE).min(cols) {
                    out[j * rows + i] = x[i * cols + j];
                }
            }
        }
    }
    out
}

/// `a[m×n] · b[n×p]` as a sum of scaled rows of `b`. Four output rows share
/// each pass over a row of `b`, in column tiles that stay in cache.
fn axpy_rows(ad: &[f64], bd: &[f64], m: usize, n: usize, p: usize) -> Vec<f64> {
    const ROWS: usize = 4;
    const COLS: usize = 512;
    let mut out = vec![0.0; m * p];
    if p == 0 {
        return out;
    }
    let kernel = |block: usize, chunk: &mut [f64]| {
        let i0 = block * ROWS;
        let rows = chunk.len() / p;
        for j0 in (0..p).step_by(COLS) {
            let j1 = (j0 + COLS).min(p);
            if rows == ROWS {
                let (r01, r23) = chunk.split_at_mut(2 * p);
                let (r0, r1) = r01.split_at_mut(p);
                let (r2, r3) = r23.split_at_mut(p);
                let (r0, r1, r2, r3) = (
                    &mut r0[j0..j1],
                    &mut r1[j0..j1],
                    &mut r2[j0..j1],
                    &mut r3[j0..j1],
                );
                for k in 0..n {
                    let a = [
                        ad[i0 * n + k],
                        ad[(i0 + 1) * n + k],
                        ad[(i0 + 2) * n + k],
                        ad[(i0 + 3) * n + k],
                    ];
                    let brow = &bd[k * p + j0..k * p + j1];
                    let outs = r0
                        .iter_mut()
                        .zip(r1.iter_mut())
                        .zip(r2.iter_mut().zip(r3.iter_mut()));
                    for (((o0, o1), (o2, o3)), &b) in outs.zip(brow) {
                        *o0 += a[0] * b;
                        *o1 += a[1] * b;
                        *o2 += a[2] * b;
                        *o3 += a[3] * b;
                    }
                }
            } else {
                for (r, row) in chunk.chunks_mut(p).enumerate() {
                    let arow = &ad[(i0 + r) * n..(i0 + r + 1) * n];
                    for (k, &aik) in arow.iter().enumerate() {
                        let brow = &bd[k * p + j0..k * p + j1];
                        for (o, &bkj) in row[j0..j1].iter_mut().zip(brow) {
                            *o += aik * bkj;
                        }
                    }
                }
            }
        }
    };
    if m * n * p >= PAR_THRESHOLD {
        out.par_chunks_mut(ROWS * p)
            .enumerate()
            .for_each(|(b, c)| kernel(b, c));
    } else {
        out.chunks_mut(ROWS * p)
            .enumerate()
            .for_each(|(b, c)| kernel(b, c));
    }
    out
}
