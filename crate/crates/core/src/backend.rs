//! Execution substrate for the neck's computation graph.
//!
//! The forward pass is written once against [`Backend`] and interpreted
//! either eagerly on plain tensors or by the differentiation tape, which
//! guarantees that the recorded forward and the plain forward are the same
//! computation bit for bit.

use crate::error::Result;
use crate::tensor::kernels::{self, Activation};
use crate::tensor::{relu_sign_bits, Scalar, Tensor};

pub trait Backend {
    type Elem: Scalar;
    type Value: Clone;

    /// Bring a tensor into the computation as an input.
    fn lift(&mut self, t: Tensor<Self::Elem>) -> Self::Value;

    fn matmul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn global_avg_pool(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn activation(&mut self, x: &Self::Value, kind: Activation) -> Result<Self::Value>;
    fn softmax_over_levels(&mut self, m: &Self::Value) -> Result<Self::Value>;
    fn layer_norm(
        &mut self,
        x: &Self::Value,
        gamma: &Self::Value,
        beta: &Self::Value,
        eps: f64,
    ) -> Result<Self::Value>;
    fn resize(&mut self, x: &Self::Value, target_h: usize, target_w: usize)
        -> Result<Self::Value>;
    fn concat_channels(&mut self, xs: &[Self::Value]) -> Result<Self::Value>;
    fn split_channels(&mut self, x: &Self::Value, groups: usize) -> Result<Vec<Self::Value>>;
    fn conv2d(
        &mut self,
        x: &Self::Value,
        weight: &Self::Value,
        stride: usize,
        pad: usize,
    ) -> Result<Self::Value>;
    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn scale_channels(&mut self, x: &Self::Value, s: &Self::Value) -> Result<Self::Value>;
    fn scale(&mut self, x: &Self::Value, factor: f64) -> Result<Self::Value>;
    fn transpose(&mut self, m: &Self::Value) -> Result<Self::Value>;
    fn select_row(&mut self, m: &Self::Value, row: usize) -> Result<Self::Value>;
    fn reshape(&mut self, x: &Self::Value, shape: &[usize]) -> Result<Self::Value>;
    fn sum_all(&mut self, x: &Self::Value) -> Result<Self::Value>;
}

/// Direct kernel evaluation.
///
/// When `relu_signs` is enabled, every ReLU input's sign is appended to the
/// trace; finite-difference probes compare traces from the two perturbed
/// evaluations to detect a kink crossing between them.
#[derive(Default)]
pub struct Eager<E: Scalar> {
    pub relu_signs: Option<Vec<bool>>,
    _marker: std::marker::PhantomData<E>,
}

impl<E: Scalar> Eager<E> {
    pub fn new() -> Self {
        Eager {
            relu_signs: None,
            _marker: std::marker::PhantomData,
        }
    }

    pub fn with_relu_trace() -> Self {
        Eager {
            relu_signs: Some(Vec::new()),
            _marker: std::marker::PhantomData,
        }
    }
}

impl<E: Scalar> Backend for Eager<E> {
    type Elem = E;
    type Value = Tensor<E>;

    fn lift(&mut self, t: Tensor<E>) -> Tensor<E> {
        t
    }

    fn matmul(&mut self, a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
        kernels::matmul(a, b)
    }

    fn global_avg_pool(&mut self, x: &Tensor<E>) -> Result<Tensor<E>> {
        kernels::global_avg_pool(x)
    }

    fn activation(&mut self, x: &Tensor<E>, kind: Activation) -> Result<Tensor<E>> {
        if kind == Activation::Relu {
            if let Some(trace) = &mut self.relu_signs {
                relu_sign_bits(x, trace);
            }
        }
        kernels::activation(x, kind)
    }

    fn softmax_over_levels(&mut self, m: &Tensor<E>) -> Result<Tensor<E>> {
        kernels::softmax_over_levels(m)
    }

    fn layer_norm(
        &mut self,
        x: &Tensor<E>,
        gamma: &Tensor<E>,
        beta: &Tensor<E>,
        eps: f64,
    ) -> Result<Tensor<E>> {
        kernels::layer_norm(x, gamma, beta, eps)
    }

    fn resize(&mut self, x: &Tensor<E>, target_h: usize, target_w: usize) -> Result<Tensor<E>> {
        kernels::resize(x, target_h, target_w)
    }

    fn concat_channels(&mut self, xs: &[Tensor<E>]) -> Result<Tensor<E>> {
        kernels::concat_channels(xs)
    }

    fn split_channels(&mut self, x: &Tensor<E>, groups: usize) -> Result<Vec<Tensor<E>>> {
        kernels::split_channels(x, groups)
    }

    fn conv2d(
        &mut self,
        x: &Tensor<E>,
        weight: &Tensor<E>,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor<E>> {
        kernels::conv2d(x, weight, stride, pad)
    }

    fn add(&mut self, a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
        kernels::add(a, b)
    }

    fn scale_channels(&mut self, x: &Tensor<E>, s: &Tensor<E>) -> Result<Tensor<E>> {
        kernels::scale_channels(x, s)
    }

    fn scale(&mut self, x: &Tensor<E>, factor: f64) -> Result<Tensor<E>> {
        kernels::scale(x, factor)
    }

    fn transpose(&mut self, m: &Tensor<E>) -> Result<Tensor<E>> {
        kernels::transpose(m)
    }

    fn select_row(&mut self, m: &Tensor<E>, row: usize) -> Result<Tensor<E>> {
        kernels::select_row(m, row)
    }

    fn reshape(&mut self, x: &Tensor<E>, shape: &[usize]) -> Result<Tensor<E>> {
        x.reshaped(shape)
    }

    fn sum_all(&mut self, x: &Tensor<E>) -> Result<Tensor<E>> {
        kernels::sum_all(x)
    }
}
