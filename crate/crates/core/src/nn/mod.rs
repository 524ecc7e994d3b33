//! Minimal dense neural-network substrate: tensors, linear layers, losses,
//! Adam, and finite-difference gradient verification.

pub mod adam;
pub mod gradcheck;
pub mod linear;
pub mod loss;
pub mod mlp;
pub mod scalar;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{grad_check, jitter_params, GradCheckReport};
pub use linear::{LinearLayer, Parameterized};
pub use loss::{bce_dual_loss, DualBceResult, PROB_CLAMP};
pub use mlp::Mlp;
pub use scalar::Scalar;
pub use tensor::{softmax_rows, Tensor2};
