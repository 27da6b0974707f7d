use std::fmt;

use super::NumericsError;

/// Dense row-major array of `f64` values.
///
/// Spatial maps use channels-last layout (`H × W × C`).
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self, NumericsError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(NumericsError::Shape(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![1], data: vec![value] }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Self { shape: shape.to_vec(), data: (0..n).map(&mut f).collect() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Size of the last dimension.
    pub fn last_dim(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    /// Number of rows when the tensor is viewed as `[len / last_dim, last_dim]`.
    pub fn rows(&self) -> usize {
        let c = self.last_dim();
        if c == 0 {
            0
        } else {
            self.data.len() / c
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self, NumericsError> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(NumericsError::Shape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let o = self.offset(index);
        self.data[o] = value;
    }

    fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut o = 0;
        for (i, (&ix, &dim)) in index.iter().zip(&self.shape).enumerate() {
            assert!(ix < dim, "index {ix} out of range for dim {i} of size {dim}");
            o = o * dim + ix;
        }
        o
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.shape, other.shape);
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum() / self.data.len() as f64
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Euclidean norm of all entries.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)
        } else {
            write!(f, " [{:.4}, {:.4}, .. {} values]", self.data[0], self.data[1], self.data.len())
        }
    }
}

/// Per-element validity flags paired with a sampled map.
///
/// An element is `false` when its sample location fell outside the source
/// domain or behind the camera.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidityMask {
    shape: Vec<usize>,
    flags: Vec<bool>,
}

impl ValidityMask {
    pub fn new(shape: &[usize], flags: Vec<bool>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), flags.len());
        Self { shape: shape.to_vec(), flags }
    }

    pub fn all(shape: &[usize], value: bool) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), flags: vec![value; n] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn get(&self, i: usize) -> bool {
        self.flags[i]
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    pub fn all_true(&self) -> bool {
        self.flags.iter().all(|&f| f)
    }

    pub fn and(&self, other: &ValidityMask) -> ValidityMask {
        assert_eq!(self.flags.len(), other.flags.len());
        ValidityMask {
            shape: self.shape.clone(),
            flags: self.flags.iter().zip(&other.flags).map(|(&a, &b)| a && b).collect(),
        }
    }

    pub fn as_tensor(&self) -> Tensor {
        Tensor::from_parts(
            self.shape.clone(),
            self.flags.iter().map(|&f| if f { 1.0 } else { 0.0 }).collect(),
        )
    }
}
