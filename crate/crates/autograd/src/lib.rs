//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Every backward rule is itself written in terms of differentiable
//! operations, so gradients can be differentiated again. This is what the
//! Wasserstein gradient penalty needs: the critic loss depends on the norm of
//! an input gradient, and the critic parameters are trained through it.

pub mod archive;
pub mod functional;
mod graph;
mod kernels;
pub mod nn;
pub mod optim;
mod tensor;

pub use archive::{ArchiveError, TensorArchive};
pub use graph::{grad, is_grad_enabled, no_grad, NoGradGuard, Var};
pub use kernels::ConvGeometry;
pub use tensor::Tensor;
