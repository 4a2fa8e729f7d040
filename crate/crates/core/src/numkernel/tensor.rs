use std::fmt::{self, Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;
use rand::Rng;

use crate::error::{Error, Result};

/// Floating point element type used by every tensor.
///
/// Implemented for `f32` (training) and `f64` (verification). The byte
/// conversions are little-endian and are what checkpoints store.
pub trait Real:
    Float + Debug + Display + Default + Sum + AddAssign + SubAssign + MulAssign + DivAssign + Send + Sync + 'static
{
    /// Tag written into checkpoint manifests.
    const NAME: &'static str;
    const BYTES: usize;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Real for f32 {
    const NAME: &'static str = "f32";
    const BYTES: usize = 4;

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
        f32::from_le_bytes(bytes[..4].try_into().expect("4 bytes"))
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";
    const BYTES: usize = 8;

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
        f64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
    }
}

/// Shorthand for `T::from_f64`.
#[inline]
pub fn lit<T: Real>(v: f64) -> T {
    T::from_f64(v)
}

/// Dense row-major array with explicit shape.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("zero-sized dimension in shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} holds {n} elements but {} were given",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape.to_vec(), data.iter().map(|&v| T::from_f64(v)).collect())
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::Empty("from_rows"));
        };
        let cols = first.len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    /// Uniform entries in `[-bound, bound]`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| T::from_f64(rng.random_range(-bound..=bound)))
            .collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
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

    /// `(rows, cols)` for a 2-D tensor; a 1-D tensor is a single row.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [c] => Ok((1, *c)),
            [r, c] => Ok((*r, *c)),
            s => Err(Error::Shape(format!("expected a matrix, got shape {s:?}"))),
        }
    }

    pub fn rows(&self) -> usize {
        self.dims2().map(|(r, _)| r).unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[T] {
        let (_, c) = self.dims2().expect("row() on a matrix");
        &self.data[i * c..(i + 1) * c]
    }

    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data.clone())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn sq_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    /// Single value of a one-element tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    /// Converts the element type, e.g. to re-run a trained model in 64-bit.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    /// Stacks equally sized 1-D vectors (or single-row matrices) into a matrix.
    pub fn stack_rows(rows: &[&Tensor<T>]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::Empty("stack_rows"));
        };
        let cols = first.len();
        let mut data = Vec::with_capacity(cols * rows.len());
        for r in rows {
            if r.len() != cols {
                return Err(Error::Shape(format!(
                    "stack_rows: row of {} elements, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(&r.data);
        }
        Self::new(vec![rows.len(), cols], data)
    }

    /// Copies the selected rows into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        let (r, c) = self.dims2()?;
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= r {
                return Err(Error::Index(format!("row {i} out of range for {r} rows")));
            }
            data.extend_from_slice(&self.data[i * c..(i + 1) * c]);
        }
        Self::new(vec![idx.len(), c], data)
    }
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, "{:?}", self.data)?;
        }
        Ok(())
    }
}
