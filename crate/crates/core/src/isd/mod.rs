//! Iterative self-semantic distillation: the semantic extraction block, the
//! temperature-softened distillation loss, the β schedule and the teacher
//! cache.

mod block;
mod loss;
mod schedule;

pub use block::{
    central_feature, partial_similarities, semantic_features, semantic_information,
    whole_similarities, SemanticBlock, PROJECTION_INIT_STD, W_C_PARAM, W_K_PARAM, W_P_PARAM,
};
pub use loss::{distill_loss, distill_loss_on_tape, total_loss, total_loss_on_tape};
pub use schedule::{beta_at_epoch, DistillConfig};

use crate::numkernel::Tensor;

/// Detached semantic vector from the previous iteration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TeacherCache {
    value: Option<Tensor>,
}

impl TeacherCache {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_present(&self) -> bool {
        self.value.is_some()
    }

    pub fn get(&self) -> Option<&Tensor> {
        self.value.as_ref()
    }

    pub fn store(&mut self, l: Tensor) {
        self.value = Some(l);
    }

    pub fn clear(&mut self) {
        self.value = None;
    }
}
