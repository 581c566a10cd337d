//! Dense symmetric matrix storage shared by all bound, count and estimate
//! matrices.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MatrixError {
    #[error("lower triangle has {got} entries, expected {expected} for n={n}")]
    BadTriangleLength { n: usize, expected: usize, got: usize },
    #[error("matrix dimension must be positive")]
    EmptyMatrix,
}

/// Dense row-major `n x n` symmetric matrix of `f64`.
///
/// Every write sets both `(i, j)` and `(j, i)`, so reads through either
/// index order always agree. The diagonal is fixed at construction: zero
/// for distance/count matrices, `+inf` / `-inf` for upper / lower bound
/// matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetricMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymmetricMatrix {
    /// New matrix with every entry (including the diagonal) set to `fill`.
    pub fn new(n: usize, fill: f64) -> Self {
        SymmetricMatrix { n, data: vec![fill; n * n] }
    }

    /// New matrix with off-diagonal entries `fill` and diagonal `diag`.
    pub fn with_diagonal(n: usize, fill: f64, diag: f64) -> Self {
        let mut m = Self::new(n, fill);
        for i in 0..n {
            m.data[i * n + i] = diag;
        }
        m
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// Sets both `(i, j)` and `(j, i)`.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.n + j] = value;
        self.data[j * self.n + i] = value;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    /// Strict lower triangle (`j < i`), row by row. The diagonal is implied
    /// by the matrix role and is not serialized.
    pub fn lower_triangle(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n * (self.n - 1) / 2);
        for i in 1..self.n {
            for j in 0..i {
                out.push(self.get(i, j));
            }
        }
        out
    }

    /// Rebuilds a symmetric matrix from its strict lower triangle and a
    /// fixed diagonal value.
    pub fn from_lower_triangle(n: usize, entries: &[f64], diag: f64) -> Result<Self, MatrixError> {
        if n == 0 {
            return Err(MatrixError::EmptyMatrix);
        }
        let expected = n * (n - 1) / 2;
        if entries.len() != expected {
            return Err(MatrixError::BadTriangleLength { n, expected, got: entries.len() });
        }
        let mut m = Self::with_diagonal(n, 0.0, diag);
        let mut idx = 0;
        for i in 1..n {
            for j in 0..i {
                m.set(i, j, entries[idx]);
                idx += 1;
            }
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn writes_are_symmetric() {
        let mut m = SymmetricMatrix::new(4, 0.0);
        m.set(1, 3, 2.5);
        assert_eq!(m.get(1, 3), 2.5);
        assert_eq!(m.get(3, 1), 2.5);
        m.set(3, 1, -1.0);
        assert_eq!(m.get(1, 3), -1.0);
    }

    #[test]
    fn diagonal_fill() {
        let m = SymmetricMatrix::with_diagonal(3, f64::NEG_INFINITY, f64::INFINITY);
        assert_eq!(m.get(0, 0), f64::INFINITY);
        assert_eq!(m.get(0, 1), f64::NEG_INFINITY);
    }

    #[test]
    fn triangle_round_trip() {
        let mut m = SymmetricMatrix::with_diagonal(4, 0.0, 0.0);
        let mut v = 1.0;
        for i in 1..4 {
            for j in 0..i {
                m.set(i, j, v);
                v += 1.0;
            }
        }
        let tri = m.lower_triangle();
        assert_eq!(tri, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let back = SymmetricMatrix::from_lower_triangle(4, &tri, 0.0).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn triangle_length_mismatch_is_error() {
        assert!(SymmetricMatrix::from_lower_triangle(4, &[1.0, 2.0], 0.0).is_err());
    }

    proptest! {
        #[test]
        fn symmetry_holds_after_any_write_sequence(
            writes in proptest::collection::vec((0usize..6, 0usize..6, -10.0f64..10.0), 0..40)
        ) {
            let mut m = SymmetricMatrix::new(6, 0.0);
            for (i, j, v) in writes {
                m.set(i, j, v);
            }
            for i in 0..6 {
                for j in 0..6 {
                    prop_assert_eq!(m.get(i, j), m.get(j, i));
                }
            }
        }
    }
}
