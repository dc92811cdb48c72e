use rayon::prelude::*;

use crate::error::{KgeError, Result};
use crate::numkernel::{ParamStore, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

// elementwise work below this size stays on the calling thread
const PAR_MIN: usize = 1 << 15;

/// First and second moments for every trainable parameter, in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    step: u64,
    /// `None` for non-trainable entries (batchnorm running statistics).
    moments: Vec<Option<(Tensor, Tensor)>>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let moments = store
            .iter()
            .map(|(_, _, p)| {
                p.trainable.then(|| {
                    (
                        Tensor::zeros(p.value.shape()),
                        Tensor::zeros(p.value.shape()),
                    )
                })
            })
            .collect();
        Self { step: 0, moments }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// `(m, v)` for the parameter at store position `index`.
    pub fn moments(&self, index: usize) -> Option<(&Tensor, &Tensor)> {
        self.moments.get(index)?.as_ref().map(|(m, v)| (m, v))
    }

    /// Rebuilds a state from saved moments. Shapes must agree with `store`.
    pub fn from_parts(
        store: &ParamStore,
        step: u64,
        moments: Vec<Option<(Tensor, Tensor)>>,
    ) -> Result<Self> {
        if moments.len() != store.len() {
            return Err(KgeError::Checkpoint(format!(
                "optimizer holds {} slots for {} parameters",
                moments.len(),
                store.len()
            )));
        }
        for ((_, name, p), slot) in store.iter().zip(&moments) {
            match slot {
                Some((m, v)) if p.trainable => {
                    if m.shape() != p.value.shape() || v.shape() != p.value.shape() {
                        return Err(KgeError::Checkpoint(format!(
                            "optimizer moments for {name} have the wrong shape"
                        )));
                    }
                }
                None if !p.trainable => {}
                _ => {
                    return Err(KgeError::Checkpoint(format!(
                        "optimizer slot for {name} disagrees with its trainable flag"
                    )))
                }
            }
        }
        Ok(Self { step, moments })
    }

    /// One bias-corrected Adam update of every trainable parameter from the
    /// gradients stored in `store`.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        for ((_, _, p), slot) in store.iter_mut().zip(self.moments.iter_mut()) {
            let Some((m, v)) = slot else { continue };
            let update = |((theta, g), (m, v)): ((&mut f64, &f64), (&mut f64, &mut f64))| {
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *theta -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            };
            let n = p.value.len();
            if n >= PAR_MIN {
                p.value
                    .data_mut()
                    .par_iter_mut()
                    .zip(p.grad.data().par_iter())
                    .zip(m.data_mut().par_iter_mut().zip(v.data_mut().par_iter_mut()))
                    .for_each(update);
            } else {
                p.value
                    .data_mut()
                    .iter_mut()
                    .zip(p.grad.data().iter())
                    .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
                    .for_each(update);
            }
        }
    }
}

/// `lr₀ · decay^ep`.
pub fn lr_at_epoch(epoch: usize, lr0: f64, decay: f64) -> f64 {
    lr0 * decay.powi(epoch as i32)
}
