//! Dense row-major tensors over f32 (training) or f64 (gradient oracles).

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::Float;

use crate::error::{Error, Result};

/// Element type for the engine: f32 for training, f64 for finite-difference
/// gradient checks.
pub trait Scalar: Float + Sum + Send + Sync + Debug + Default + 'static {}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Casts an f64 constant into the active scalar type.
#[inline]
pub fn scalar<T: Scalar>(x: f64) -> T {
    T::from(x).expect("constant representable in scalar type")
}

/// Row-major dense tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} wants {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Reinterprets the buffer under a new shape with the same element count.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Tensor<T>> {
        Tensor::from_vec(shape, self.data.clone())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Dimension helper with a structural error instead of a panic.
    pub fn dim(&self, i: usize) -> usize {
        self.shape[i]
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Row view for a rank-3 tensor laid out [batch, channel, length].
    #[inline]
    pub fn row3(&self, b: usize, c: usize) -> &[T] {
        let l = self.shape[2];
        let start = (b * self.shape[1] + c) * l;
        &self.data[start..start + l]
    }

    #[inline]
    pub fn row3_mut(&mut self, b: usize, c: usize) -> &mut [T] {
        let l = self.shape[2];
        let start = (b * self.shape[1] + c) * l;
        &mut self.data[start..start + l]
    }

    /// Row view for a rank-2 tensor laid out [batch, features].
    #[inline]
    pub fn row2(&self, b: usize) -> &[T] {
        let f = self.shape[1];
        &self.data[b * f..(b + 1) * f]
    }

    #[inline]
    pub fn row2_mut(&mut self, b: usize) -> &mut [T] {
        let f = self.shape[1];
        &mut self.data[b * f..(b + 1) * f]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_element_count() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0f32; 6]).is_ok());
        assert!(Tensor::from_vec(&[2, 3], vec![0.0f32; 5]).is_err());
    }

    #[test]
    fn row_views_address_expected_slices() {
        let t = Tensor::from_vec(&[2, 2, 3], (0..12).map(|i| i as f64).collect()).unwrap();
        assert_eq!(t.row3(0, 0), &[0.0, 1.0, 2.0]);
        assert_eq!(t.row3(0, 1), &[3.0, 4.0, 5.0]);
        assert_eq!(t.row3(1, 0), &[6.0, 7.0, 8.0]);

        let m = Tensor::from_vec(&[2, 3], (0..6).map(|i| i as f32).collect()).unwrap();
        assert_eq!(m.row2(1), &[3.0, 4.0, 5.0]);
    }

    #[test]
    fn finiteness_guard() {
        let mut t = Tensor::<f32>::zeros(&[4]);
        assert!(t.is_finite());
        t.data_mut()[2] = f32::NAN;
        assert!(!t.is_finite());
    }
}
