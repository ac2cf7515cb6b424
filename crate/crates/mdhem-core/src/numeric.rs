//! Dense real linear-system layer.
//!
//! The embedding matrix is fixed across orders, so it is factorized once
//! and reused for every right-hand-side column of every order.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{Error, Result};

/// Dense row-major real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RealMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RealMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.cols + col] = value;
    }

    pub fn add_to(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.cols + col] += value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, col)).collect()
    }

    pub fn set_column(&mut self, col: usize, values: &[f64]) {
        for (r, &v) in values.iter().enumerate() {
            self.set(r, col, v);
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.rows];
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            y[r] = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
        y
    }
}

/// Stamp the real expansion of `c * z` into the Re/Im row pair starting
/// at `row`, where the complex unknown `z` occupies columns
/// `(col, col + 1)`.
pub(crate) fn stamp_mul(a: &mut RealMatrix, row: usize, col: usize, c: num_complex::Complex64) {
    a.add_to(row, col, c.re);
    a.add_to(row, col + 1, -c.im);
    a.add_to(row + 1, col, c.im);
    a.add_to(row + 1, col + 1, c.re);
}

/// Stamp the real expansion of `c * conj(z)`.
pub(crate) fn stamp_mul_conj(a: &mut RealMatrix, row: usize, col: usize, c: num_complex::Complex64) {
    a.add_to(row, col, c.re);
    a.add_to(row, col + 1, c.im);
    a.add_to(row + 1, col, c.im);
    a.add_to(row + 1, col + 1, -c.re);
}

/// LU factors with partial-pivot permutation.
#[derive(Debug, Clone)]
pub struct Factorization {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
    condition: f64,
}

impl Factorization {
    /// Crude condition estimate: ratio of the largest to the smallest
    /// pivot magnitude. Exact (1.0) for the identity.
    pub fn condition_estimate(&self) -> f64 {
        self.condition
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solve `A x = b` for one right-hand side.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, got: b.len() });
        }
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        // Forward substitution with unit lower triangle.
        for i in 1..n {
            let mut acc = x[i];
            for k in 0..i {
                acc -= self.lu[i * n + k] * x[k];
            }
            x[i] = acc;
        }
        // Back substitution.
        for i in (0..n).rev() {
            let mut acc = x[i];
            for k in i + 1..n {
                acc -= self.lu[i * n + k] * x[k];
            }
            x[i] = acc / self.lu[i * n + i];
        }
        Ok(x)
    }

    /// Solve for every column of `b`; column count is arbitrary.
    pub fn solve_many(&self, b: &RealMatrix) -> Result<RealMatrix> {
        if b.rows() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, got: b.rows() });
        }
        let mut out = RealMatrix::zeros(self.n, b.cols());
        for col in 0..b.cols() {
            let x = self.solve(&b.column(col))?;
            out.set_column(col, &x);
        }
        Ok(out)
    }
}

/// Factor a square matrix as `PA = LU` with partial pivoting.
///
/// An exact zero pivot is reported with the elimination step at which it
/// occurred; callers that know the unknown layout map the step back to
/// the offending bus.
pub fn factorize(a: &RealMatrix) -> Result<Factorization> {
    if a.rows() != a.cols() {
        return Err(Error::DimensionMismatch { expected: a.rows(), got: a.cols() });
    }
    let n = a.rows();
    let mut lu = a.data().to_vec();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut max_pivot = 0.0f64;
    let mut min_pivot = f64::infinity();
    for k in 0..n {
        let mut pivot_row = k;
        let mut pivot_mag = lu[k * n + k].abs();
        for r in k + 1..n {
            let mag = lu[r * n + k].abs();
            if mag > pivot_mag {
                pivot_mag = mag;
                pivot_row = r;
            }
        }
        if pivot_mag == 0.0 {
            return Err(Error::SingularSystem { pivot_step: k });
        }
        if pivot_row != k {
            for c in 0..n {
                lu.swap(k * n + c, pivot_row * n + c);
            }
            perm.swap(k, pivot_row);
        }
        let pivot = lu[k * n + k];
        max_pivot = max_pivot.max(pivot.abs());
        min_pivot = min_pivot.min(pivot.abs());
        for r in k + 1..n {
            let factor = lu[r * n + k] / pivot;
            lu[r * n + k] = factor;
            if factor != 0.0 {
                for c in k + 1..n {
                    lu[r * n + c] -= factor * lu[k * n + c];
                }
            }
        }
    }
    let condition = if n == 0 { 1.0 } else { max_pivot / min_pivot };
    Ok(Factorization { n, lu, perm, condition })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_factorization() {
        let a = RealMatrix::identity(4);
        let f = factorize(&a).unwrap();
        assert_eq!(f.condition_estimate(), 1.0);
        let x = f.solve(&[1.0, -2.0, 3.0, 0.5]).unwrap();
        assert_eq!(x, vec![1.0, -2.0, 3.0, 0.5]);
    }

    #[test]
    fn pivoting_handles_zero_diagonal() {
        let mut a = RealMatrix::zeros(2, 2);
        a.set(0, 1, 1.0);
        a.set(1, 0, 1.0);
        let f = factorize(&a).unwrap();
        let x = f.solve(&[3.0, 7.0]).unwrap();
        assert!((x[0] - 7.0).abs() < 1e-15);
        assert!((x[1] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn singular_matrix_names_step() {
        let mut a = RealMatrix::zeros(3, 3);
        a.set(0, 0, 1.0);
        a.set(1, 1, 1.0);
        // Third column/row all zero.
        assert_eq!(factorize(&a).unwrap_err(), Error::SingularSystem { pivot_step: 2 });
    }

    fn lcg_matrix(n: usize, seed: u64) -> RealMatrix {
        let mut state = seed;
        let mut a = RealMatrix::zeros(n, n);
        for r in 0..n {
            for c in 0..n {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let v = ((state >> 33) as f64 / (1u64 << 31) as f64) - 1.0;
                a.set(r, c, v + if r == c { 4.0 } else { 0.0 });
            }
        }
        a
    }

    #[test]
    fn random_50x50_residual() {
        let a = lcg_matrix(50, 42);
        let f = factorize(&a).unwrap();
        let b: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = f.solve(&b).unwrap();
        let ax = a.mul_vec(&x);
        let b_inf = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let res = ax.iter().zip(&b).fold(0.0f64, |m, (l, r)| m.max((l - r).abs()));
        assert!(res <= 1e-10 * b_inf, "residual {res}");
    }

    #[test]
    fn solve_many_reproduces_identity_columns() {
        let a = lcg_matrix(8, 7);
        let f = factorize(&a).unwrap();
        let sol = f.solve_many(&a).unwrap();
        for r in 0..8 {
            for c in 0..8 {
                let want = if r == c { 1.0 } else { 0.0 };
                assert!((sol.get(r, c) - want).abs() <= 1e-10);
            }
        }
        let zero = RealMatrix::zeros(8, 3);
        assert_eq!(f.solve_many(&zero).unwrap(), RealMatrix::zeros(8, 3));
        let wrong = RealMatrix::zeros(7, 2);
        assert!(f.solve_many(&wrong).is_err());
    }

    proptest! {
        #[test]
        fn solve_recovers_vector(
            seed in 0u64..1u64 << 48,
            x in proptest::collection::vec(-10.0f64..10.0, 12),
        ) {
            let a = lcg_matrix(12, seed);
            let f = factorize(&a).unwrap();
            prop_assume!(f.condition_estimate() <= 1e6);
            let b = a.mul_vec(&x);
            let got = f.solve(&b).unwrap();
            let scale = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            for (g, w) in got.iter().zip(&x) {
                prop_assert!((g - w).abs() <= 1e-9 * scale);
            }
        }

        #[test]
        fn determinism(seed in 0u64..1u64 << 48) {
            let a = lcg_matrix(10, seed);
            let f1 = factorize(&a).unwrap();
            let f2 = factorize(&a).unwrap();
            let b: Vec<f64> = (0..10).map(|i| i as f64 - 4.5).collect();
            prop_assert_eq!(f1.solve(&b).unwrap(), f2.solve(&b).unwrap());
        }
    }
}
