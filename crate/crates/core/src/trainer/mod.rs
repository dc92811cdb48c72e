//! Adam with exponential learning-rate decay, the 1-N training loop with the
//! iteration-alternating teacher/student protocol, and checkpoints.

mod adam;
pub mod checkpoint;
mod config;
mod session;

pub use adam::{lr_at_epoch, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use checkpoint::{Checkpoint, EpochRecord, Manifest};
pub use config::TrainConfig;
pub use session::{
    check_compatible, check_vocabulary, entity_embeddings, restore_model, EpochReport,
    IterationRecord, Trainer, STREAM_BLOCK_INIT, STREAM_MODEL_INIT, STREAM_TRAINING,
};

use crate::error::Result;
use crate::numkernel::{bce_with_logits, Tensor};

/// Mean sigmoid cross-entropy between `bs × N_e` logits and soft targets.
pub fn bce_loss(logits: &Tensor, targets: &Tensor) -> Result<f64> {
    bce_with_logits(logits, targets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::sigmoid;

    #[test]
    fn bce_at_zero_logits() {
        let u = Tensor::zeros(&[2, 3]);
        let y = Tensor::full(&[2, 3], 0.5);
        assert!((bce_loss(&u, &y).unwrap() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn bce_saturates_without_overflow() {
        let u = Tensor::from_rows(&[vec![50.0, -50.0]]);
        let y = Tensor::from_rows(&[vec![1.0, 0.0]]);
        let l = bce_loss(&u, &y).unwrap();
        assert!(l.is_finite() && l <= 1e-20);
    }

    #[test]
    fn bce_minimized_at_matching_targets() {
        let u = Tensor::from_rows(&[vec![0.3, -1.2, 2.0]]);
        let y = u.map(sigmoid);
        let base = bce_loss(&u, &y).unwrap();
        for j in 0..3 {
            for step in [-1e-3, 1e-3] {
                let mut v = u.clone();
                v.data_mut()[j] += step;
                assert!(bce_loss(&v, &y).unwrap() >= base);
            }
        }
    }
}
