//! Selective multi-scale feature-pyramid neck as a standalone differentiable
//! library.
//!
//! The crate is organized in four layers:
//!
//! - [`tensor`]: dense row-major tensors, the kernel set (matmul, pooling,
//!   activations, level softmax, layer norm, resize, concat/split, conv) and
//!   the `SMST` file format;
//! - [`backend`]: the execution trait the neck is written against, with an
//!   eager interpreter;
//! - [`autodiff`]: a recording tape implementing the same trait, reverse-mode
//!   gradients and a central-difference gradient checker;
//! - [`neck`]: the neck itself — channel rescaling, per-level selective
//!   fusion, a non-locally refined global feature, scatter with residuals —
//!   plus seeded initialization, parameter audit and the on-disk bundle.
//!
//! Everything is deterministic: fixed reduction orders, no ambient
//! randomness, bit-identical reruns.

pub mod autodiff;
pub mod backend;
pub mod error;
pub mod neck;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::kernels::Activation;
pub use tensor::{DType, Scalar, Shape3, Tensor};
