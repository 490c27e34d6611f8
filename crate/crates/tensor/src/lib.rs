//! Dense tensors with reverse-mode automatic differentiation.
//!
//! [`Tensor`] is a plain row-major array; [`Var`] wraps one into a
//! dynamically recorded graph. The op set is the one a small audio/video
//! CNN with attention needs: GEMM-backed matmul/linear and 2-D/3-D
//! convolution, pooling, batch norm, dropout, softmax and elementwise maps.

mod error;
mod graph;
pub mod io;
pub mod ops;
mod rng;
mod scalar;
mod tensor;

pub use error::{Result, TensorError};
pub use graph::Var;
pub use ops::conv::{conv2d, conv3d, conv_out_extent};
pub use ops::elementwise::stable_sigmoid;
pub use ops::linalg::{concat, linear, matmul, narrow, softmax, transpose};
pub use ops::norm::{batch_norm, dropout, Mode, RunningStats, BN_EPS, BN_MOMENTUM};
pub use ops::pool::{adaptive_avg_pool2d, adaptive_avg_pool3d, adaptive_bin, max_pool2d, max_pool3d};
pub use rng::Rng;
pub use scalar::{lit, Scalar};
pub use tensor::{numel, Tensor};
