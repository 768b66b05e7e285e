//! Dense tensors and a reverse-mode tape covering exactly the layers of a
//! small residual CNN: convolution, ReLU, max pooling, residual addition,
//! length-masked global average pooling, a fully connected head,
//! (block-)softmax cross-entropy and mean squared error.
//!
//! Everything is generic over [`Scalar`]; training runs in `f32` and
//! gradient checks instantiate the same code in `f64`.

mod error;
pub mod gradcheck;
mod graph;
mod layout;
pub mod ops;
pub mod optim;
mod scalar;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use graph::{Graph, Node, Var};
pub use layout::BlockLayout;
pub use ops::{block_softmax, pooled_extent, softmax};
pub use optim::sgd_nesterov_step;
pub use scalar::Scalar;
pub use tensor::Tensor;
