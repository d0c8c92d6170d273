//! Fixed-order reductions and a small row-major matrix.
//!
//! All sums in the crate go through [`pairwise_sum_by`], which visits terms
//! in ascending index order with a fixed recursion split, so a reduction is
//! bit-identical no matter which thread produced the terms.

use std::ops::{Index, IndexMut};

use crate::scalar::Scalar;

const PAIRWISE_BLOCK: usize = 8;

/// Pairwise sum of `term(0) .. term(len - 1)`.
pub fn pairwise_sum_by<T: Scalar>(len: usize, term: impl Fn(usize) -> T) -> T {
    fn go<T: Scalar>(lo: usize, hi: usize, term: &impl Fn(usize) -> T) -> T {
        if hi - lo <= PAIRWISE_BLOCK {
            let mut acc = T::zero();
            for k in lo..hi {
                acc += term(k);
            }
            acc
        } else {
            let mid = lo + (hi - lo) / 2;
            go(lo, mid, term) + go(mid, hi, term)
        }
    }
    go(0, len, &term)
}

pub fn pairwise_sum<T: Scalar>(values: &[T]) -> T {
    pairwise_sum_by(values.len(), |k| values[k])
}

/// Mean of `term(0) .. term(len - 1)` computed as `x0 + mean(x_k - x0)`.
///
/// A constant sequence returns its value exactly. Returns zero for `len == 0`.
pub fn shifted_mean_by<T: Scalar>(len: usize, term: impl Fn(usize) -> T) -> T {
    if len == 0 {
        return T::zero();
    }
    let anchor = term(0);
    anchor + pairwise_sum_by(len, |k| term(k) - anchor) / T::of_usize(len)
}

pub fn shifted_mean<T: Scalar>(values: &[T]) -> T {
    shifted_mean_by(values.len(), |k| values[k])
}

/// Same as [`shifted_mean_by`] over all indices except `skip`.
///
/// The skipped term is never evaluated, so the result cannot depend on it.
pub fn mean_excluding<T: Scalar>(len: usize, skip: usize, term: impl Fn(usize) -> T) -> T {
    debug_assert!(skip < len);
    shifted_mean_by(len - 1, |k| term(if k < skip { k } else { k + 1 }))
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, T::zero())
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
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

    /// Builds from rows of equal length. Returns `None` on ragged input.
    pub fn from_rows(rows: &[Vec<T>]) -> Option<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return None;
        }
        Some(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(self.shape(), other.shape());
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }
}

impl<T> Matrix<T> {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}
