//! Dense `f64` tensors, reverse-mode gradients and the handful of ops the
//! model is built from.

mod gradcheck;
mod ops;
mod param;
mod rng;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use ops::{
    batchnorm1d, conv1d, dropout, gelu, linear, maxpool1d, rmsnorm, rope_rotate, softmax,
};
pub use param::{ParamId, ParamSet, Parameter};
pub use rng::RngState;
pub use tape::{
    BatchNormStats, CustomBackward, Gradients, HeadLayout, Mode, RopeLayout, Tape, Var,
    BATCHNORM_EPS, BATCHNORM_MOMENTUM, PROB_FLOOR, RMSNORM_EPS,
};
pub use tensor::Tensor;
