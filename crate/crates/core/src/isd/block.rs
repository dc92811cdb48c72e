//! Semantic extraction block.
//!
//! From the embeddings `E_I` of the current batch's head entities:
//!
//! ```text
//! v = mean of the rows of E_I         (d)
//! c = v · W_C                         (k_b)
//! K = E_I · W_K                       (bs × k_b)
//! s = c · Kᵀ                          (bs)
//! q = softmax(s · W_P)                (N_e)
//! l = q · E                           (d)
//! ```

use crate::error::{KgeError, Result};
use crate::numkernel::{
    matmul, matmul_bt, softmax_temp, ParamId, ParamStore, RngState, Tape, Tensor, Var,
};

pub const W_C_PARAM: &str = "isd.w_c";
pub const W_K_PARAM: &str = "isd.w_k";
pub const W_P_PARAM: &str = "isd.w_p";
pub const PROJECTION_INIT_STD: f64 = 0.02;

/// Learned projections of the extraction block. `W_P` hard-wires the batch
/// size, so every batch fed to [`SemanticBlock::extract`] has exactly
/// `batch_size` rows.
#[derive(Clone, Debug)]
pub struct SemanticBlock {
    w_c: ParamId,
    w_k: ParamId,
    w_p: ParamId,
    dim: usize,
    k_b: usize,
    batch_size: usize,
    num_entities: usize,
}

impl SemanticBlock {
    pub fn new(
        store: &mut ParamStore,
        dim: usize,
        k_b: usize,
        batch_size: usize,
        num_entities: usize,
        rng: &mut RngState,
    ) -> Result<Self> {
        if dim == 0 || k_b == 0 || batch_size == 0 || num_entities == 0 {
            return Err(KgeError::Config(format!(
                "semantic block needs positive sizes, got d={dim} k_b={k_b} bs={batch_size} N_e={num_entities}"
            )));
        }
        let mut init = |rows: usize, cols: usize| {
            let mut t = Tensor::zeros(&[rows, cols]);
            for x in t.data_mut() {
                *x = rng.normal(0.0, PROJECTION_INIT_STD);
            }
            t
        };
        let wc = init(dim, k_b);
        let wk = init(dim, k_b);
        let wp = init(batch_size, num_entities);
        Ok(Self {
            w_c: store.insert(W_C_PARAM, wc, true)?,
            w_k: store.insert(W_K_PARAM, wk, true)?,
            w_p: store.insert(W_P_PARAM, wp, true)?,
            dim,
            k_b,
            batch_size,
            num_entities,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn k_b(&self) -> usize {
        self.k_b
    }

    pub fn params(&self) -> [ParamId; 3] {
        [self.w_c, self.w_k, self.w_p]
    }

    pub fn parameter_count(&self) -> usize {
        2 * self.dim * self.k_b + self.batch_size * self.num_entities
    }

    /// Records the block on `tape` and returns `l` as a `1 × d` row.
    pub fn extract(&self, tape: &mut Tape<'_>, entities: Var, heads: &[usize]) -> Result<Var> {
        if heads.len() != self.batch_size {
            return Err(KgeError::dim(
                "extract",
                &[heads.len(), self.dim],
                &[self.batch_size, self.num_entities],
            ));
        }
        let w_c = tape.param(self.w_c);
        let w_k = tape.param(self.w_k);
        let w_p = tape.param(self.w_p);
        let e_i = tape.gather(entities, heads)?;
        let v = tape.mean_rows(e_i)?;
        let c = tape.matmul(v, w_c)?;
        let k = tape.matmul(e_i, w_k)?;
        let s = tape.matmul_bt(c, k)?;
        let logits = tape.matmul(s, w_p)?;
        let q = tape.softmax_rows(logits, 1.0)?;
        tape.matmul(q, entities)
    }

    /// Gradient-free evaluation; the result is detached by construction.
    pub fn extract_detached(
        &self,
        store: &ParamStore,
        entity: ParamId,
        heads: &[usize],
    ) -> Result<Tensor> {
        let mut tape = Tape::new(store);
        let e = tape.param(entity);
        let l = self.extract(&mut tape, e, heads)?;
        Ok(Tensor::from_vec(tape.value(l).data().to_vec()))
    }
}

/// `c = mean_rows(E_I) · W_C`.
pub fn central_feature(e_i: &Tensor, w_c: &Tensor) -> Result<Tensor> {
    if e_i.rows() == 0 || e_i.rank() != 2 {
        return Err(KgeError::dim("central_feature", e_i.shape(), w_c.shape()));
    }
    let n = e_i.rows() as f64;
    let mut v = vec![0.0; e_i.cols()];
    for i in 0..e_i.rows() {
        for (a, b) in v.iter_mut().zip(e_i.row(i)) {
            *a += b;
        }
    }
    v.iter_mut().for_each(|x| *x /= n);
    let c = matmul(&Tensor::new(vec![1, v.len()], v)?, w_c)?;
    Ok(Tensor::from_vec(c.into_data()))
}

/// `K = E_I · W_K`.
pub fn semantic_features(e_i: &Tensor, w_k: &Tensor) -> Result<Tensor> {
    matmul(e_i, w_k)
}

/// `s_i = ⟨c, K_i⟩`.
pub fn partial_similarities(c: &Tensor, k: &Tensor) -> Result<Tensor> {
    let c_row = c.clone().reshape(&[1, c.len()])?;
    let s = matmul_bt(&c_row, k)
        .map_err(|_| KgeError::dim("partial_similarities", c.shape(), k.shape()))?;
    Ok(Tensor::from_vec(s.into_data()))
}

/// `q = softmax(s · W_P)`.
pub fn whole_similarities(s: &Tensor, w_p: &Tensor) -> Result<Tensor> {
    if w_p.rows() != s.len() {
        return Err(KgeError::dim("whole_similarities", s.shape(), w_p.shape()));
    }
    let logits = matmul(&s.clone().reshape(&[1, s.len()])?, w_p)?;
    softmax_temp(&Tensor::from_vec(logits.into_data()), 1.0)
}

/// `l = qᵀ · E`.
pub fn semantic_information(q: &Tensor, entities: &Tensor) -> Result<Tensor> {
    if q.len() != entities.rows() {
        return Err(KgeError::dim(
            "semantic_information",
            q.shape(),
            entities.shape(),
        ));
    }
    let l = matmul(&q.clone().reshape(&[1, q.len()])?, entities)?;
    Ok(Tensor::from_vec(l.into_data()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_feature_cases() {
        let zeros = Tensor::zeros(&[3, 2]);
        assert_eq!(
            central_feature(&zeros, &Tensor::eye(2)).unwrap().data(),
            &[0.0, 0.0]
        );

        let single = Tensor::from_rows(&[vec![4.0, -1.0]]);
        assert_eq!(
            central_feature(&single, &Tensor::eye(2)).unwrap().data(),
            &[4.0, -1.0]
        );

        let e_i = Tensor::from_rows(&[vec![1.0, 3.0], vec![3.0, 1.0]]);
        assert_eq!(
            central_feature(&e_i, &Tensor::eye(2)).unwrap().data(),
            &[2.0, 2.0]
        );
    }

    #[test]
    fn semantic_features_cases() {
        let e_i = Tensor::from_rows(&[vec![1.0, 2.0]]);
        assert_eq!(
            semantic_features(&e_i, &Tensor::zeros(&[2, 3])).unwrap(),
            Tensor::zeros(&[1, 3])
        );
        assert_eq!(semantic_features(&e_i, &Tensor::eye(2)).unwrap(), e_i);
        let k = semantic_features(&e_i, &Tensor::from_rows(&[vec![1.0], vec![1.0]])).unwrap();
        assert_eq!(k.data(), &[3.0]);
    }

    #[test]
    fn partial_similarity_cases() {
        let k = Tensor::from_rows(&[vec![2.0, 9.0], vec![3.0, 9.0]]);
        assert_eq!(
            partial_similarities(&Tensor::from_vec(vec![0.0, 0.0]), &k)
                .unwrap()
                .data(),
            &[0.0, 0.0]
        );
        assert_eq!(
            partial_similarities(&Tensor::from_vec(vec![1.0, 0.0]), &k)
                .unwrap()
                .data(),
            &[2.0, 3.0]
        );
        let dup = Tensor::from_rows(&[vec![0.3, -1.2], vec![0.3, -1.2]]);
        let s = partial_similarities(&Tensor::from_vec(vec![0.7, 0.1]), &dup).unwrap();
        assert_eq!(s.data()[0], s.data()[1]);
    }

    #[test]
    fn whole_similarity_cases() {
        let q = whole_similarities(
            &Tensor::from_vec(vec![0.0, 0.0]),
            &Tensor::full(&[2, 4], 0.3),
        )
        .unwrap();
        assert!(q.data().iter().all(|&x| (x - 0.25).abs() < 1e-15));

        let w_p = Tensor::from_rows(&[vec![2f64.ln(), 0.0, 0.0]]);
        let q = whole_similarities(&Tensor::from_vec(vec![1.0]), &w_p).unwrap();
        for (a, b) in q.data().iter().zip([0.5, 0.25, 0.25]) {
            assert!((a - b).abs() < 1e-15);
        }

        assert!(whole_similarities(&Tensor::from_vec(vec![1.0, 2.0]), &w_p).is_err());
    }

    #[test]
    fn semantic_information_cases() {
        let e = Tensor::from_rows(&[vec![0.0, 2.0], vec![4.0, 0.0]]);
        let l = semantic_information(&Tensor::from_vec(vec![0.5, 0.5]), &e).unwrap();
        assert_eq!(l.data(), &[2.0, 1.0]);

        let l = semantic_information(&Tensor::from_vec(vec![0.0, 1.0]), &e).unwrap();
        assert_eq!(l.data(), &[4.0, 0.0]);

        let same = Tensor::from_rows(&vec![vec![1.5, -2.0]; 3]);
        let l = semantic_information(&Tensor::from_vec(vec![0.2, 0.5, 0.3]), &same).unwrap();
        assert!((l.data()[0] - 1.5).abs() < 1e-15 && (l.data()[1] + 2.0).abs() < 1e-15);
    }
}
