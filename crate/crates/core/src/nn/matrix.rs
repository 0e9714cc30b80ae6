use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("matrix buffer", rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    /// Stacks equally sized rows. An empty iterator yields a `0 x cols` matrix.
    pub fn from_rows<'a, I>(cols: usize, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut data = Vec::new();
        let mut n = 0;
        for row in rows {
            if row.len() != cols {
                return Err(Error::shape(format!("row {n}"), cols, row.len()));
            }
            data.extend_from_slice(row);
            n += 1;
        }
        Ok(Self {
            rows: n,
            cols,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    /// Appends zero rows, keeping existing rows untouched.
    pub fn grow_rows(&mut self, new_rows: usize) {
        if new_rows > self.rows {
            self.data.resize(new_rows * self.cols, 0.0);
            self.rows = new_rows;
        }
    }

    /// `self * other^T` where `other` is `(k x cols)`; result is `(rows x k)`.
    pub fn mul_transposed(&self, other: &Matrix) -> Matrix {
        debug_assert_eq!(self.cols, other.cols);
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            let dst = out.row_mut(i);
            for (j, d) in dst.iter_mut().enumerate() {
                *d = dot(a, other.row(j));
            }
        }
        out
    }

    /// `self * other` where `other` is `(cols x k)`.
    pub fn mul(&self, other: &Matrix) -> Matrix {
        debug_assert_eq!(self.cols, other.rows);
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a = self.row(i);
            let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &aik) in a.iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                for (d, &b) in dst.iter_mut().zip(other.row(k)) {
                    *d += aik * b;
                }
            }
        }
        out
    }

    /// Accumulates `self^T * other` into `acc` (`acc` is `cols x other.cols`).
    pub fn add_transposed_mul_into(&self, other: &Matrix, acc: &mut Matrix) {
        debug_assert_eq!(self.rows, other.rows);
        debug_assert_eq!(acc.rows, self.cols);
        debug_assert_eq!(acc.cols, other.cols);
        for r in 0..self.rows {
            let a = self.row(r);
            let b = other.row(r);
            for (i, &ai) in a.iter().enumerate() {
                if ai == 0.0 {
                    continue;
                }
                let dst = &mut acc.data[i * acc.cols..(i + 1) * acc.cols];
                for (d, &bj) in dst.iter_mut().zip(b) {
                    *d += ai * bj;
                }
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; defined as 0 when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn products_agree() {
        let a = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Matrix::from_vec(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let ab = a.mul(&b);
        assert_eq!(ab.as_slice(), &[4.0, 5.0, 10.0, 11.0]);

        let bt = Matrix::from_vec(2, 3, vec![1.0, 0.0, 1.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(a.mul_transposed(&bt), ab);

        let mut acc = Matrix::zeros(3, 3);
        a.add_transposed_mul_into(&a, &mut acc);
        assert_eq!(acc[(0, 0)], 17.0);
        assert_eq!(acc[(2, 1)], 3.0 * 2.0 + 6.0 * 5.0);
    }

    #[test]
    fn cosine_conventions() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
        assert_eq!(cosine(&[2.0, 0.0], &[1.0, 0.0]), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[-3.0, 0.0]), -1.0);
    }

    #[test]
    fn grow_rows_keeps_prefix() {
        let mut m = Matrix::from_vec(1, 2, vec![1.0, 2.0]).unwrap();
        m.grow_rows(3);
        assert_eq!(m.as_slice(), &[1.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
    }
}
