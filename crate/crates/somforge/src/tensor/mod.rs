//! Dense tensors with reverse-mode automatic differentiation.
//!
//! The engine is deliberately small: up-to-4D row-major tensors in `f32` or
//! `f64`, a fixed primitive set sufficient for small convolutional GANs, a
//! linear tape ([`graph::Graph`]) recording forward applications, and Adam.
//! Tensors are immutable values; parameter updates produce new tensors.
//! All reductions accumulate in fixed row-major order, so forward and
//! backward passes are bit-reproducible regardless of thread count.

pub mod adam;
pub mod check;
pub mod graph;
pub(crate) mod kernels;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use graph::{Gradients, Graph, NodeId, Op};

use crate::scalar::Scalar;
use crate::{Error, Result};

/// Element type of a [`Tensor`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl std::fmt::Display for DType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DType::F32 => write!(f, "f32"),
            DType::F64 => write!(f, "f64"),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Storage {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

/// Dense row-major tensor of rank 0..=4.
#[derive(Debug, Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    storage: Storage,
}

impl Tensor {
    pub fn from_f32(shape: &[usize], data: Vec<f32>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match data length {}",
            data.len()
        );
        assert!(shape.len() <= 4, "rank > 4 unsupported");
        Tensor { shape: shape.to_vec(), storage: Storage::F32(data) }
    }

    pub fn from_f64(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        assert!(shape.len() <= 4, "rank > 4 unsupported");
        Tensor { shape: shape.to_vec(), storage: Storage::F64(data) }
    }

    pub fn zeros(shape: &[usize], dtype: DType) -> Self {
        let len = shape.iter().product();
        match dtype {
            DType::F32 => Tensor::from_f32(shape, vec![0.0; len]),
            DType::F64 => Tensor::from_f64(shape, vec![0.0; len]),
        }
    }

    pub fn full(shape: &[usize], value: f64, dtype: DType) -> Self {
        let len = shape.iter().product();
        match dtype {
            DType::F32 => Tensor::from_f32(shape, vec![value as f32; len]),
            DType::F64 => Tensor::from_f64(shape, vec![value; len]),
        }
    }

    pub fn scalar(value: f64, dtype: DType) -> Self {
        Tensor::full(&[1], value, dtype)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self.storage {
            Storage::F32(_) => DType::F32,
            Storage::F64(_) => DType::F64,
        }
    }

    /// Borrow the raw `f32` data. Panics on dtype mismatch; use only where
    /// the dtype is known by construction.
    pub fn f32_data(&self) -> &[f32] {
        match &self.storage {
            Storage::F32(v) => v,
            Storage::F64(_) => panic!("tensor is f64, expected f32"),
        }
    }

    pub fn f64_data(&self) -> &[f64] {
        match &self.storage {
            Storage::F64(v) => v,
            Storage::F32(_) => panic!("tensor is f32, expected f64"),
        }
    }

    pub fn f32_data_mut(&mut self) -> &mut [f32] {
        match &mut self.storage {
            Storage::F32(v) => v,
            Storage::F64(_) => panic!("tensor is f64, expected f32"),
        }
    }

    pub fn f64_data_mut(&mut self) -> &mut [f64] {
        match &mut self.storage {
            Storage::F64(v) => v,
            Storage::F32(_) => panic!("tensor is f32, expected f64"),
        }
    }

    /// All elements widened to `f64`, regardless of dtype.
    pub fn to_f64_vec(&self) -> Vec<f64> {
        match &self.storage {
            Storage::F32(v) => v.iter().map(|&x| x as f64).collect(),
            Storage::F64(v) => v.clone(),
        }
    }

    /// Cast to the requested dtype (no-op when it already matches).
    pub fn cast(&self, dtype: DType) -> Tensor {
        match (dtype, &self.storage) {
            (DType::F32, Storage::F64(v)) => {
                Tensor::from_f32(&self.shape, v.iter().map(|&x| x as f32).collect())
            }
            (DType::F64, Storage::F32(v)) => {
                Tensor::from_f64(&self.shape, v.iter().map(|&x| x as f64).collect())
            }
            _ => self.clone(),
        }
    }

    /// Extract the single element of a scalar tensor as `f64`.
    pub fn scalar_value(&self) -> Result<f64> {
        if self.len() != 1 {
            return Err(Error::Shape(format!(
                "expected scalar, got shape {:?}",
                self.shape
            )));
        }
        Ok(match &self.storage {
            Storage::F32(v) => v[0] as f64,
            Storage::F64(v) => v[0] as f64,
        })
    }

    pub fn all_finite(&self) -> bool {
        match &self.storage {
            Storage::F32(v) => v.iter().all(|x| x.is_finite()),
            Storage::F64(v) => v.iter().all(|x| x.is_finite()),
        }
    }

    /// Largest absolute element, 0 for empty tensors.
    pub fn max_abs(&self) -> f64 {
        match &self.storage {
            Storage::F32(v) => v.iter().fold(0.0f64, |m, &x| m.max((x as f64).abs())),
            Storage::F64(v) => v.iter().fold(0.0f64, |m, &x| m.max(x.abs())),
        }
    }

    /// Clamp every element into `[-c, c]` in place.
    pub fn clamp_inplace(&mut self, c: f64) {
        match &mut self.storage {
            Storage::F32(v) => {
                let c = c as f32;
                for x in v.iter_mut() {
                    *x = x.clamp(-c, c);
                }
            }
            Storage::F64(v) => {
                for x in v.iter_mut() {
                    *x = x.clamp(-c, c);
                }
            }
        }
    }

    pub(crate) fn same_dtype(&self, other: &Tensor, op: &str) -> Result<()> {
        if self.dtype() != other.dtype() {
            return Err(Error::Dtype(format!(
                "{op}: mixed dtypes {} and {}",
                self.dtype(),
                other.dtype()
            )));
        }
        Ok(())
    }
}

/// Dispatch a generic kernel over the dtype of one or more same-typed tensors.
/// The closure body is instantiated for both `f32` and `f64`.
macro_rules! with_scalar_type {
    ($dtype:expr, $t:ident, $body:block) => {
        match $dtype {
            DType::F32 => {
                type $t = f32;
                $body
            }
            DType::F64 => {
                type $t = f64;
                $body
            }
        }
    };
}
pub(crate) use with_scalar_type;

/// Bridges the generic kernels to the concrete [`Storage`] variants.
pub(crate) trait Element: Scalar {
    fn slice(t: &Tensor) -> &[Self];
    fn build(shape: &[usize], data: Vec<Self>) -> Tensor;
}

impl Element for f32 {
    fn slice(t: &Tensor) -> &[Self] {
        t.f32_data()
    }
    fn build(shape: &[usize], data: Vec<Self>) -> Tensor {
        Tensor::from_f32(shape, data)
    }
}

impl Element for f64 {
    fn slice(t: &Tensor) -> &[Self] {
        t.f64_data()
    }
    fn build(shape: &[usize], data: Vec<Self>) -> Tensor {
        Tensor::from_f64(shape, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_data_invariant_enforced() {
        let t = Tensor::from_f32(&[2, 3], vec![0.0; 6]);
        assert_eq!(t.len(), 6);
        assert_eq!(t.dtype(), DType::F32);
    }

    #[test]
    #[should_panic]
    fn mismatched_shape_panics() {
        let _ = Tensor::from_f32(&[2, 3], vec![0.0; 5]);
    }

    #[test]
    fn cast_round_trips_exactly_for_f32_values() {
        let t = Tensor::from_f32(&[3], vec![0.5, -1.25, 3.75]);
        let back = t.cast(DType::F64).cast(DType::F32);
        assert_eq!(t.f32_data(), back.f32_data());
    }
}
