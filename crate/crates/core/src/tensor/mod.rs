//! Dense NCHW tensors and the numeric kernels the detector graph is built
//! from. Every kernel exists in forward form (`ops`), backward form (`grad`)
//! and as a node type of the recording [`Graph`].

mod grad;
mod ops;
mod tape;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};

use crate::error::{Error, Result};

pub use grad::{
    batch_norm_backward, batch_norm_infer_backward, concat_backward, conv2d_backward,
    relu_backward, sigmoid_backward, silu_backward, upsample_nearest_2x_backward, BatchNormGrads,
    ConvGrads,
};
pub use ops::{
    add, batch_norm, batch_norm_infer, batch_norm_train, concat_channels, conv2d,
    depthwise_conv2d, downsample_pick_2x, pointwise_conv2d, relu, sigmoid, sigmoid_scalar, silu,
    upsample_nearest_2x, BatchNormParams, BatchStats, BnMode, ConvGeometry, ConvParams,
};
pub use tape::{Gradients, Graph, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

/// Floating element type a [`Tensor`] can hold.
pub trait Scalar:
    Float + FromPrimitive + Default + Debug + Display + Send + Sync + Sum + 'static
{
    const DTYPE: DType;

    fn of(v: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    const DTYPE: DType = DType::F32;

    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const DTYPE: DType = DType::F64;

    #[inline]
    fn of(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Rank-4 `(N, C, H, W)` array stored contiguously, N outermost.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T: Scalar = f32> {
    dims: [usize; 4],
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(dims: [usize; 4], data: Vec<T>) -> Result<Self> {
        let expected = volume(dims);
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "dims {:?} need {} elements, got {}",
                dims,
                expected,
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        Self::full(dims, T::zero())
    }

    pub fn full(dims: [usize; 4], value: T) -> Self {
        Self {
            dims,
            data: vec![value; volume(dims)],
        }
    }

    pub fn from_fn(dims: [usize; 4], f: impl FnMut(usize) -> T) -> Self {
        Self {
            dims,
            data: (0..volume(dims)).map(f).collect(),
        }
    }

    /// Length-`C` vector stored as `(C, 1, 1, 1)`.
    pub fn vector(values: Vec<T>) -> Self {
        Self {
            dims: [values.len(), 1, 1, 1],
            data: values,
        }
    }

    #[inline]
    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    #[inline]
    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.dims[1]
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.dims[2]
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.dims[3]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dtype(&self) -> DType {
        T::DTYPE
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.dims[1] + c) * self.dims[2] + h) * self.dims[3] + w
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.index(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, value: T) {
        let i = self.index(n, c, h, w);
        self.data[i] = value;
    }

    /// The `H × W` plane of sample `n`, channel `c`.
    #[inline]
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let hw = self.dims[2] * self.dims[3];
        let start = (n * self.dims[1] + c) * hw;
        &self.data[start..start + hw]
    }

    #[inline]
    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [T] {
        let hw = self.dims[2] * self.dims[3];
        let start = (n * self.dims[1] + c) * hw;
        &mut self.data[start..start + hw]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            dims: self.dims,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims,
            data: self.data.iter().map(|&x| U::of(x.as_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|x| !x.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::Numeric(format!("{what} (element {i})"))),
        }
    }

    /// Sum of all elements, accumulated in f64.
    pub fn sum(&self) -> f64 {
        self.data.iter().map(|x| x.as_f64()).sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    /// Sample `n` as a batch of one.
    pub fn batch_item(&self, n: usize) -> Self {
        let per = self.dims[1] * self.dims[2] * self.dims[3];
        Self {
            dims: [1, self.dims[1], self.dims[2], self.dims[3]],
            data: self.data[n * per..(n + 1) * per].to_vec(),
        }
    }

    /// Concatenates tensors along the batch axis.
    pub fn stack(items: &[Self]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Shape("cannot stack an empty list".into()))?;
        let [_, c, h, w] = first.dims;
        let mut n = 0;
        let mut data = Vec::with_capacity(items.iter().map(|t| t.len()).sum());
        for t in items {
            if t.dims[1..] != [c, h, w] {
                return Err(Error::Shape(format!(
                    "cannot stack {:?} with {:?}",
                    t.dims, first.dims
                )));
            }
            n += t.dims[0];
            data.extend_from_slice(&t.data);
        }
        Ok(Self {
            dims: [n, c, h, w],
            data,
        })
    }

    pub(crate) fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.dims, other.dims);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }
}

pub(crate) fn volume(dims: [usize; 4]) -> usize {
    dims.iter().product()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_length() {
        assert!(matches!(
            Tensor::<f32>::new([1, 2, 2, 2], vec![0.0; 7]),
            Err(Error::Shape(_))
        ));
        assert!(Tensor::<f32>::new([0, 3, 4, 4], vec![]).is_ok());
    }

    #[test]
    fn index_is_row_major_n_outermost() {
        let t = Tensor::<f64>::from_fn([2, 3, 4, 5], |i| i as f64);
        assert_eq!(t.get(1, 2, 3, 4), 119.0);
        assert_eq!(t.get(0, 1, 0, 0), 20.0);
        assert_eq!(t.plane(1, 0)[0], 60.0);
    }

    #[test]
    fn finiteness_is_reported() {
        let mut t = Tensor::<f32>::zeros([1, 1, 2, 2]);
        assert!(t.ensure_finite("x").is_ok());
        t.data_mut()[3] = f32::NAN;
        let err = t.ensure_finite("x").unwrap_err();
        assert!(matches!(err, Error::Numeric(ref m) if m.contains("element 3")));
    }

    #[test]
    fn stack_and_split_batch() {
        let a = Tensor::<f32>::full([1, 2, 2, 2], 1.0);
        let b = Tensor::<f32>::full([1, 2, 2, 2], 2.0);
        let s = Tensor::stack(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.dims(), [2, 2, 2, 2]);
        assert_eq!(s.batch_item(1), b);
        assert!(Tensor::stack(&[a, Tensor::zeros([1, 1, 2, 2])]).is_err());
    }
}
