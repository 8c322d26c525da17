//! Dense tensors and the differentiable kernels the SFE network is built from.
//!
//! Every op has an explicit backward function; the model composes them in
//! reverse order instead of recording a tape.

pub mod activation;
pub mod adam;
pub mod conv;
pub mod gradcheck;
pub mod linear;
pub mod pool;
pub mod tensor;

pub use activation::{leaky_rectify, leaky_rectify_backward};
pub use adam::{adam_step, AdamConfig, AdamState};
pub use conv::{conv2d, conv2d_backward, ConvSpec};
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use linear::{affine, affine_backward};
pub use pool::{global_pool, global_pool_backward, maxpool2d, maxpool2d_backward, Pooled};
pub use tensor::{Scalar, Tensor};
