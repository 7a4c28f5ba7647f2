//! Deterministic dense numerics: tensors, affine layers with manual
//! backprop, SGD, schedules and a finite-difference checker.

mod gradcheck;
mod layer;
mod ops;
mod optim;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use layer::{Activation, Layer, LayerCache, LayerGrad, LayerSpec};
pub(crate) use ops::row_entropy;
pub use ops::{
    argmax, entropy, l2_normalize, l2_normalize_backward, sigmoid, softmax, validate_prob_rows,
    PROB_ROW_TOL,
};
pub use optim::{poly_lr, sgd_step, OptimizerState, ParamTensors};
pub use tensor::{dot, Tensor};
