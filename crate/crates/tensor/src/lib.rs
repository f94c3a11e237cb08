//! Dense `f64` tensors with tape-based reverse-mode differentiation,
//! covering the layers needed by the summary-statistic networks:
//! valid 1-D convolution, max and global-average pooling, dense layers,
//! bidirectional LSTM, and the Adam optimizer.

pub mod container;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod init;
pub mod kernels;
pub mod store;
pub mod tensor;

pub use error::{Result, TensorError};
pub use graph::{Gradients, Graph, LstmVars, Var};
pub use kernels::activation::Activation;
pub use store::{AdamConfig, ParameterStore};
pub use tensor::Tensor;
