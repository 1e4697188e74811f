//! Dense vectors and row-major matrices, plus the norms and quantiles the rest
//! of the toolkit is built on.
//!
//! Summation order is part of the contract: `dot`, `matvec`, and `l2_norm`
//! accumulate strictly left to right in the stored element order. Downstream
//! code relies on this to make "sum of per-neuron outputs" bit-identical to
//! the corresponding matrix-vector product.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::real::Real;

/// Dense vector with at least one finite element.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector<T> {
    data: Vec<T>,
}

impl<T: Real> Vector<T> {
    pub fn new(data: Vec<T>) -> Result<Self> {
        if data.is_empty() {
            return Err(CoreError::EmptyInput("vector".into()));
        }
        if !data.iter().all(|x| x.is_finite()) {
            return Err(CoreError::NonFinite("vector".into()));
        }
        Ok(Self { data })
    }

    /// Construction without the finiteness scan; for values produced by this
    /// crate's own arithmetic.
    pub(crate) fn from_raw(data: Vec<T>) -> Self {
        debug_assert!(!data.is_empty());
        Self { data }
    }

    pub fn zeros(len: usize) -> Self {
        debug_assert!(len >= 1);
        Self {
            data: vec![T::ZERO; len],
        }
    }

    pub fn from_fn(len: usize, f: impl FnMut(usize) -> T) -> Self {
        Self {
            data: (0..len).map(f).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    /// Mutable access for optimizer updates; callers keep entries finite.
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn iter(&self) -> core::slice::Iter<'_, T> {
        self.data.iter()
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(CoreError::EmptyInput("matrix".into()));
        }
        if data.len() != rows * cols {
            return Err(CoreError::ShapeMismatch(format!(
                "matrix data length {} != {rows}x{cols}",
                data.len()
            )));
        }
        if !data.iter().all(|x| x.is_finite()) {
            return Err(CoreError::NonFinite("matrix".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::ONE;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        debug_assert!(row < self.rows && col < self.cols);
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[T] {
        debug_assert!(row < self.rows);
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    /// Mutable access for optimizer updates; callers keep entries finite.
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }
}

/// Inner product accumulated left to right.
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::ZERO;
    for (&x, &y) in a.iter().zip(b.iter()) {
        acc += x * y;
    }
    acc
}

/// `m * v`; each output component accumulates over columns left to right.
pub fn matvec<T: Real>(m: &Matrix<T>, v: &Vector<T>) -> Result<Vector<T>> {
    if m.cols != v.len() {
        return Err(CoreError::ShapeMismatch(format!(
            "matvec: matrix is {}x{}, vector has len {}",
            m.rows,
            m.cols,
            v.len()
        )));
    }
    let out = (0..m.rows).map(|i| dot(m.row(i), v.as_slice())).collect();
    Ok(Vector::from_raw(out))
}

/// `m^T * v`; component `j` accumulates over rows `i` in ascending order.
pub fn matvec_transposed<T: Real>(m: &Matrix<T>, v: &Vector<T>) -> Result<Vector<T>> {
    if m.rows != v.len() {
        return Err(CoreError::ShapeMismatch(format!(
            "matvec_transposed: matrix is {}x{}, vector has len {}",
            m.rows,
            m.cols,
            v.len()
        )));
    }
    let mut out = vec![T::ZERO; m.cols];
    for i in 0..m.rows {
        let vi = v.as_slice()[i];
        for (j, &mij) in m.row(i).iter().enumerate() {
            out[j] += mij * vi;
        }
    }
    Ok(Vector::from_raw(out))
}

/// L2 norm of a slice: squares accumulated left to right, then `sqrt`.
#[inline]
pub fn l2_norm_slice<T: Real>(v: &[T]) -> T {
    let mut acc = T::ZERO;
    for &x in v {
        acc += x * x;
    }
    acc.sqrt()
}

/// L2 norm of a vector; zero exactly when the vector is all zeros.
pub fn l2_norm<T: Real>(v: &Vector<T>) -> T {
    l2_norm_slice(v.as_slice())
}

/// Evenly spaced sample quantiles of `values` at probabilities
/// `p_k = k / (count + 1)`, `k = 1..=count`, with linear interpolation
/// between order statistics (`h = p * (n - 1)` on the sorted data).
///
/// The output is non-decreasing and bounded by the min/max of the input.
pub fn quantiles<T: Real>(values: &[T], count: usize) -> Result<Vec<T>> {
    if values.is_empty() {
        return Err(CoreError::EmptyInput("quantiles".into()));
    }
    if count == 0 {
        return Err(CoreError::InvalidArgument(
            "quantile count must be >= 1".into(),
        ));
    }
    let mut sorted: Vec<T> = values.to_vec();
    sorted.sort_unstable_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    let out = (1..=count)
        .map(|k| {
            let p = k as f64 / (count + 1) as f64;
            interpolate_sorted(&sorted, p, n)
        })
        .collect();
    Ok(out)
}

#[inline]
fn interpolate_sorted<T: Real>(sorted: &[T], p: f64, n: usize) -> T {
    let h = p * (n - 1) as f64;
    let lo = h as usize; // h >= 0, truncation == floor
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    let frac = T::from_f64(h - lo as f64);
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}
