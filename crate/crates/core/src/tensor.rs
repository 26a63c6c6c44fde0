//! Dense row-major tensors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![T::zero(); n] }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; n] }
    }

    /// Builds a tensor, rejecting length mismatches and non-finite values.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "tensor of shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("element {i} of tensor {shape:?}")));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    /// Constructor for internal use where the shape is known to agree.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::Shape(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        self.map(|v| U::from_f64(v.to_f64_lossy()).unwrap_or_else(U::nan))
    }

    pub fn sum_sq(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    /// Number of elements in one hyper-row along `axis`, and the outer/inner
    /// strides used to walk it.
    fn axis_layout(&self, axis: usize) -> (usize, usize, usize) {
        let outer = self.shape[..axis].iter().product();
        let inner = self.shape[axis + 1..].iter().product();
        (outer, self.shape[axis], inner)
    }

    /// Squared L2 norm of the slice at `index` along `axis`.
    pub fn slice_sum_sq(&self, axis: usize, index: usize) -> T {
        let (outer, dim, inner) = self.axis_layout(axis);
        debug_assert!(index < dim);
        let mut acc = T::zero();
        for o in 0..outer {
            let base = (o * dim + index) * inner;
            for v in &self.data[base..base + inner] {
                acc += *v * *v;
            }
        }
        acc
    }

    /// Applies `f` to every element of the slice at `index` along `axis`.
    pub fn slice_for_each(&mut self, axis: usize, index: usize, mut f: impl FnMut(&mut T)) {
        let (outer, dim, inner) = self.axis_layout(axis);
        debug_assert!(index < dim);
        for o in 0..outer {
            let base = (o * dim + index) * inner;
            for v in &mut self.data[base..base + inner] {
                f(v);
            }
        }
    }

    /// `self[slice] += c * src[slice]` at `index` along `axis`.
    pub fn slice_axpy(&mut self, src: &Tensor<T>, axis: usize, index: usize, c: T) {
        debug_assert_eq!(self.shape, src.shape);
        let (outer, dim, inner) = self.axis_layout(axis);
        for o in 0..outer {
            let base = (o * dim + index) * inner;
            for i in base..base + inner {
                self.data[i] += c * src.data[i];
            }
        }
    }

    /// Returns a copy with the given indices along `axis` removed.
    pub fn remove_indices(&self, axis: usize, remove: &[usize]) -> Tensor<T> {
        if remove.is_empty() {
            return self.clone();
        }
        let (outer, dim, inner) = self.axis_layout(axis);
        let mut keep = vec![true; dim];
        for &r in remove {
            keep[r] = false;
        }
        let kept = keep.iter().filter(|k| **k).count();
        let mut data = Vec::with_capacity(outer * kept * inner);
        for o in 0..outer {
            for (d, &k) in keep.iter().enumerate() {
                if k {
                    let base = (o * dim + d) * inner;
                    data.extend_from_slice(&self.data[base..base + inner]);
                }
            }
        }
        let mut shape = self.shape.clone();
        shape[axis] = kept;
        Tensor { shape, data }
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b).abs())
            .fold(T::zero(), T::max)
    }
}

impl<T: Scalar> std::ops::Index<usize> for Tensor<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        &self.data[i]
    }
}

impl<T: Scalar> std::ops::IndexMut<usize> for Tensor<T> {
    fn index_mut(&mut self, i: usize) -> &mut T {
        &mut self.data[i]
    }
}
