//! Minimal dense row-major matrix; the problems here are a few dozen columns wide.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
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

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `selfᵀ v`.
    pub fn tr_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        out
    }

    /// Drops column `j`.
    pub fn without_column(&self, j: usize) -> Self {
        let cols = self.cols - 1;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            let r = self.row(i);
            data.extend_from_slice(&r[..j]);
            data.extend_from_slice(&r[j + 1..]);
        }
        Self {
            rows: self.rows,
            cols,
            data,
        }
    }

    /// Numerical rank by Gaussian elimination with partial pivoting.
    pub fn rank(&self, tol: f64) -> usize {
        let mut a = self.clone();
        let mut rank = 0;
        for c in 0..a.cols {
            if rank == a.rows {
                break;
            }
            let (piv, val) = (rank..a.rows)
                .map(|r| (r, libm::fabs(a[(r, c)])))
                .fold((rank, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if val <= tol {
                continue;
            }
            for k in 0..a.cols {
                a.data.swap(rank * a.cols + k, piv * a.cols + k);
            }
            for r in rank + 1..a.rows {
                let f = a[(r, c)] / a[(rank, c)];
                for k in c..a.cols {
                    let v = a[(rank, k)];
                    a[(r, k)] -= f * v;
                }
            }
            rank += 1;
        }
        rank
    }
}

impl core::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl core::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn products_and_rank() {
        let m = Matrix::from_rows(2, 3, vec![1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        assert_eq!(m.mul_vec(&[1.0, 0.0, 1.0]), vec![4.0, 8.0]);
        assert_eq!(m.tr_mul_vec(&[1.0, 1.0]), vec![3.0, 6.0, 9.0]);
        assert_eq!(m.rank(1e-12), 1);
        assert_eq!(Matrix::identity(4).rank(1e-12), 4);
        assert_eq!(m.without_column(1).row(1), &[2.0, 6.0]);
    }
}
