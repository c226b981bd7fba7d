//! Dense row-major arrays and the scalar types they can hold.

use std::fmt::{self, Debug, Display};
use std::iter::Sum;

use num_traits::Float;

use crate::error::TensorError;

/// Floating-point element type. Implemented for `f32` (training default)
/// and `f64` (gradient checks and tests).
pub trait Real: Float + Debug + Display + Default + Sum + Send + Sync + 'static {
    /// Width of one element on disk, in bytes.
    const BYTES: usize;
    const NAME: &'static str;

    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Real for f32 {
    const BYTES: usize = 4;
    const NAME: &'static str = "f32";

    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
}

impl Real for f64 {
    const BYTES: usize = 8;
    const NAME: &'static str = "f64";

    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}

/// Numeric precision selected at run time; the generic code is
/// instantiated for the matching [`Real`] type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn bytes(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }
}

impl std::str::FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "f32" | "32" | "single" => Ok(Precision::F32),
            "f64" | "64" | "double" => Ok(Precision::F64),
            other => Err(format!("unknown precision `{other}` (expected f32 or f64)")),
        }
    }
}

impl Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

/// A dense array of rank 1 to 3, stored row-major.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self, TensorError> {
        if shape.is_empty() || shape.len() > 3 {
            return Err(TensorError::Contract(format!(
                "tensor rank must be 1..=3, got shape {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::Contract(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// A `1×n` row vector.
    pub fn row(values: Vec<T>) -> Self {
        Self {
            shape: vec![1, values.len()],
            data: values,
        }
    }

    /// A `1×1` scalar.
    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1, 1],
            data: vec![value],
        }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self, TensorError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(TensorError::Contract("ragged rows".into()));
        }
        Self::new(&[rows.len(), cols], rows.concat())
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self, TensorError> {
        Self::new(shape, data.iter().map(|&x| T::of(x)).collect())
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
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

    /// Rows of a rank-2 tensor (1 for rank 1).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            _ => self.shape[0],
        }
    }

    /// Columns of a rank-2 tensor (length for rank 1).
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap()
    }

    pub fn at(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols() + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }

    pub fn row_slice(&self, r: usize) -> &[T] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self, TensorError> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(TensorError::Contract(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn norm_sq(&self) -> T {
        self.data.iter().map(|&x| x * x).sum()
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn scale(&mut self, s: T) {
        for a in &mut self.data {
            *a = *a * s;
        }
    }

    pub fn transpose(&self) -> Self {
        let (r, c) = (self.rows(), self.cols());
        let mut out = Self::zeros(&[c, r]);
        for i in 0..r {
            for j in 0..c {
                out.data[j * r + i] = self.data[i * c + j];
            }
        }
        out
    }

    /// Standard matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: &Self) -> Result<Self, TensorError> {
        if self.shape.len() != 2 || other.shape.len() != 2 || self.shape[1] != other.shape[0] {
            return Err(TensorError::dims("matmul", &self.shape, &other.shape));
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let out_row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == T::zero() {
                    continue;
                }
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o = *o + a * b;
                }
            }
        }
        Ok(Self {
            shape: vec![m, n],
            data: out,
        })
    }

    /// `self · otherᵀ` without materialising the transpose.
    pub fn matmul_nt(&self, other: &Self) -> Self {
        let (m, k) = (self.rows(), self.cols());
        let n = other.rows();
        debug_assert_eq!(k, other.cols());
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let a = &self.data[i * k..(i + 1) * k];
            for j in 0..n {
                let b = &other.data[j * k..(j + 1) * k];
                out[i * n + j] = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
            }
        }
        Self {
            shape: vec![m, n],
            data: out,
        }
    }

    /// `selfᵀ · other` without materialising the transpose.
    pub fn matmul_tn(&self, other: &Self) -> Self {
        let (k, m) = (self.rows(), self.cols());
        let n = other.cols();
        debug_assert_eq!(k, other.rows());
        let mut out = vec![T::zero(); m * n];
        for p in 0..k {
            let a_row = &self.data[p * m..(p + 1) * m];
            let b_row = &other.data[p * n..(p + 1) * n];
            for (i, &a) in a_row.iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                let out_row = &mut out[i * n..(i + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o = *o + a * b;
                }
            }
        }
        Self {
            shape: vec![m, n],
            data: out,
        }
    }

    /// Converts element type, e.g. to load `f32` features into an `f64` model.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::of(x.as_f64())).collect(),
        }
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &x) in self.data.iter().enumerate() {
            if x > self.data[best] {
                best = i;
            }
        }
        best
    }
}
