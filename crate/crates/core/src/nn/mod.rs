//! Minimal deterministic layer engine: tensors, (transpose) convolutions,
//! activations, switchable batch normalization, Adam and finite-difference
//! gradient checking. Every layer caches what its backward pass needs; there
//! is no general autodiff tape.

pub mod activation;
pub mod adam;
pub mod conv;
pub mod gradcheck;
pub mod rng;
pub mod sbn;
pub mod tensor;

pub use activation::Activation;
pub use adam::Adam;
pub use conv::{conv_backward, conv_forward, tconv_backward, tconv_forward, ConvLayer, ConvSpec};
pub use gradcheck::{gradcheck, gradcheck_with_step, GradCheckReport};
pub use rng::SeededRng;
pub use sbn::{BatchNormPath, Mode, SwitchableBatchNorm};
pub use tensor::{Param, Tensor};
