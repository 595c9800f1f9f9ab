//! Differentiation core: tensors, the recording tape, gradient checking,
//! Adam, and the recurrent cells the models are built from.

mod adam;
mod gradcheck;
mod gru;
mod layers;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckReport};
pub use gru::{bigru_encode, gru_cell, BiGruOutput, GruParams};
pub use layers::{Affine, Mlp};
pub use params::{Param, ParamId, ParamStore};
pub use tape::{sigmoid, softmax_in_place, softplus, Gradients, Tape, Var};
pub use tensor::Tensor;

/// Global-norm threshold applied to gradients before every optimizer step.
pub const CLIP_NORM: f64 = 5.0;
