//! Dense row-major tensors and the kernel set the neck is built from.
//!
//! The canonical feature layout is `[channels, height, width]` with no batch
//! dimension. Tensors are immutable after construction and every kernel
//! checks its output for non-finite values, so NaN or infinity can never
//! propagate silently.

pub mod kernels;
pub mod smst;

use std::fmt;

use num_traits::Float;

use crate::error::{Error, Result};

/// Element type of a stored tensor file or a runtime tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 1,
            DType::F64 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(DType::F32),
            2 => Some(DType::F64),
            _ => None,
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DType::F32 => write!(f, "f32"),
            DType::F64 => write!(f, "f64"),
        }
    }
}

/// Real element types tensors can hold. Sealed to `f32` and `f64`.
pub trait Scalar:
    Float + fmt::Debug + fmt::Display + Default + Send + Sync + 'static + private::Sealed
{
    const DTYPE: DType;
    const BYTE_WIDTH: usize;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

mod private {
    pub trait Sealed {}
    impl Sealed for f32 {}
    impl Sealed for f64 {}
}

impl Scalar for f32 {
    const DTYPE: DType = DType::F32;
    const BYTE_WIDTH: usize = 4;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])
    }
}

impl Scalar for f64 {
    const DTYPE: DType = DType::F64;
    const BYTE_WIDTH: usize = 8;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes([
            bytes[0], bytes[1], bytes[2], bytes[3], bytes[4], bytes[5], bytes[6], bytes[7],
        ])
    }
}

/// Channels-first spatial shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape3 {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape3 {
    pub fn new(c: usize, h: usize, w: usize) -> Result<Self> {
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::dim("shape3", format!("zero extent in [{c},{h},{w}]")));
        }
        Ok(Shape3 { c, h, w })
    }

    pub fn numel(self) -> usize {
        self.c * self.h * self.w
    }
}

impl fmt::Display for Shape3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{},{}]", self.c, self.h, self.w)
    }
}

/// Dense n-dimensional array with row-major contiguous storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<E: Scalar = f64> {
    shape: Vec<usize>,
    data: Vec<E>,
}

impl<E: Scalar> Tensor<E> {
    /// Validating constructor: extents at least one, element count equal to
    /// the shape product, every value finite.
    pub fn new(shape: Vec<usize>, data: Vec<E>) -> Result<Self> {
        Self::checked("construct", shape, data)
    }

    pub(crate) fn checked(op: &'static str, shape: Vec<usize>, data: Vec<E>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::dim(op, format!("invalid extents {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::dim(
                op,
                format!("shape {shape:?} holds {numel} elements, got {}", data.len()),
            ));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        Self::new(shape.to_vec(), vec![E::zero(); numel])
    }

    pub fn filled(shape: &[usize], value: E) -> Result<Self> {
        let numel: usize = shape.iter().product();
        Self::new(shape.to_vec(), vec![value; numel])
    }

    pub fn scalar(value: E) -> Result<Self> {
        Self::new(vec![1], vec![value])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn dtype(&self) -> DType {
        E::DTYPE
    }

    /// Interpret as `[c, h, w]`.
    pub fn shape3(&self) -> Result<Shape3> {
        match self.shape.as_slice() {
            &[c, h, w] => Ok(Shape3 { c, h, w }),
            other => Err(Error::dim(
                "shape3",
                format!("expected 3 dims, got {other:?}"),
            )),
        }
    }

    /// Interpret as `[rows, cols]`.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            other => Err(Error::dim(
                "dims2",
                format!("expected 2 dims, got {other:?}"),
            )),
        }
    }

    /// Same storage under a new shape with equal element count.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.is_empty() || shape.iter().any(|&d| d == 0) || numel != self.data.len() {
            return Err(Error::dim(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    /// Bit-faithful cast between element types (f64 -> f32 rounds).
    pub fn cast<F: Scalar>(&self) -> Tensor<F> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| F::from_f64(v.as_f64())).collect(),
        }
    }

    /// Exact bit equality of shape and payload.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits())
    }

    pub(crate) fn at3(&self, s: Shape3, c: usize, y: usize, x: usize) -> E {
        self.data[(c * s.h + y) * s.w + x]
    }
}

/// Append the strict sign pattern of a ReLU input to a trace.
pub(crate) fn relu_sign_bits<E: Scalar>(x: &Tensor<E>, trace: &mut Vec<bool>) {
    trace.extend(x.data().iter().map(|&v| v > E::zero()));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constructor_rejects_bad_shapes_and_values() {
        assert!(Tensor::<f64>::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::<f64>::new(vec![3], vec![1.0, 2.0]).is_err());
        assert!(Tensor::<f64>::new(vec![2], vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::<f64>::new(vec![2], vec![1.0, f64::INFINITY]).is_err());
        assert!(Tensor::<f64>::new(vec![2], vec![1.0, 2.0]).is_ok());
    }

    #[test]
    fn reshape_preserves_data_and_checks_count() {
        let t = Tensor::new(vec![2, 3], (0..6).map(|v| v as f64).collect()).unwrap();
        let r = t.reshaped(&[3, 2]).unwrap();
        assert_eq!(r.shape(), &[3, 2]);
        assert_eq!(r.data(), t.data());
        assert!(t.reshaped(&[4, 2]).is_err());
    }

    #[test]
    fn dtype_codes_round_trip() {
        assert_eq!(DType::from_code(DType::F32.code()), Some(DType::F32));
        assert_eq!(DType::from_code(DType::F64.code()), Some(DType::F64));
        assert_eq!(DType::from_code(0), None);
    }
}
