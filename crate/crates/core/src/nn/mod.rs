//! Training machinery: a small tensor autodiff tape, the unoriented normal
//! losses, AdamW and the cosine learning-rate schedule.

pub mod loss;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use loss::{
    gaussian_weights, loss_gau, loss_gau_with, loss_half, loss_on_tape, loss_reg, loss_sin, loss_val,
    loss_weights, nearest_half, GaussNorm, LossBreakdown, LossKind,
};
pub use optim::{cosine_lr, AdamW};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
