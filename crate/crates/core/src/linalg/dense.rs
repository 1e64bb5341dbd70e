use std::ops::{Index, IndexMut};

use crate::error::{Result, SbmError};

pub const DEFAULT_DENSE_CAP: usize = 4096;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        DenseMatrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.row(i).iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// LU factorization with partial pivoting, `P A = L U`, packed in place.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseFactor {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl DenseFactor {
    /// Factorizes a square matrix of dimension at most `cap`.
    pub fn new(a: DenseMatrix, cap: usize) -> Result<Self> {
        assert_eq!(a.rows, a.cols, "square matrix required");
        let n = a.rows;
        if n > cap {
            return Err(SbmError::DenseTooLarge { dim: n, cap });
        }
        let scale = a.max_abs();
        let mut lu = a.data;
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut p = k;
            let mut best = lu[k * n + k].abs();
            for r in k + 1..n {
                let v = lu[r * n + k].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best == 0.0 || best <= scale * 1e-300 || !best.is_finite() {
                return Err(SbmError::SingularMatrix { column: k });
            }
            if p != k {
                for c in 0..n {
                    lu.swap(k * n + c, p * n + c);
                }
                perm.swap(k, p);
            }
            let pivot = lu[k * n + k];
            let (head, tail) = lu.split_at_mut((k + 1) * n);
            let pivot_row = &head[k * n..];
            for row in tail.chunks_exact_mut(n) {
                let m = row[k] / pivot;
                row[k] = m;
                if m != 0.0 {
                    for c in k + 1..n {
                        row[c] -= m * pivot_row[c];
                    }
                }
            }
        }
        Ok(DenseFactor { n, lu, perm })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Overwrites `b` with `A^{-1} b`.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let row = &self.lu[i * n..i * n + i];
            let s: f64 = row.iter().zip(&y[..i]).map(|(l, v)| l * v).sum();
            y[i] -= s;
        }
        for i in (0..n).rev() {
            let row = &self.lu[i * n..(i + 1) * n];
            let s: f64 = row[i + 1..].iter().zip(&y[i + 1..]).map(|(u, v)| u * v).sum();
            y[i] = (y[i] - s) / row[i];
        }
        b.copy_from_slice(&y);
    }

    /// Solves into a fixed scratch buffer, avoiding allocation.
    pub fn solve_with(&self, b: &[f64], out: &mut [f64]) {
        let n = self.n;
        for (o, &p) in out.iter_mut().zip(&self.perm) {
            *o = b[p];
        }
        for i in 0..n {
            let row = &self.lu[i * n..i * n + i];
            let s: f64 = row.iter().zip(&out[..i]).map(|(l, v)| l * v).sum();
            out[i] -= s;
        }
        for i in (0..n).rev() {
            let row = &self.lu[i * n..(i + 1) * n];
            let s: f64 = row[i + 1..].iter().zip(&out[i + 1..]).map(|(u, v)| u * v).sum();
            out[i] = (out[i] - s) / row[i];
        }
    }

    /// Returns `(P, L, U)` as dense matrices, `P` as a row permutation.
    pub fn unpack(&self) -> (Vec<usize>, DenseMatrix, DenseMatrix) {
        let n = self.n;
        let mut l = DenseMatrix::zeros(n, n);
        let mut u = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let v = self.lu[i * n + j];
                if j < i {
                    l[(i, j)] = v;
                } else {
                    u[(i, j)] = v;
                }
            }
            l[(i, i)] = 1.0;
        }
        (self.perm.clone(), l, u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random(n: usize, seed: u64) -> DenseMatrix {
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let data = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        DenseMatrix::from_row_major(n, n, data)
    }

    #[test]
    fn reconstruction() {
        for seed in 0..5 {
            let a = random(30, seed);
            let f = DenseFactor::new(a.clone(), DEFAULT_DENSE_CAP).unwrap();
            let (perm, l, u) = f.unpack();
            let mut err: f64 = 0.0;
            for i in 0..30 {
                for j in 0..30 {
                    let lu: f64 = (0..30).map(|k| l[(i, k)] * u[(k, j)]).sum();
                    err = err.max((a[(perm[i], j)] - lu).abs());
                }
            }
            assert!(err <= 1e-10 * a.max_abs(), "err {err}");
        }
    }

    #[test]
    fn solve_matches_nalgebra() {
        let a = random(12, 42);
        let b: Vec<f64> = (0..12).map(|i| i as f64 - 3.0).collect();
        let f = DenseFactor::new(a.clone(), 64).unwrap();
        let mut x = b.clone();
        f.solve_in_place(&mut x);
        let na = nalgebra::DMatrix::from_row_slice(12, 12, a.as_slice());
        let nx = na.lu().solve(&nalgebra::DVector::from_vec(b.clone())).unwrap();
        for i in 0..12 {
            assert!((x[i] - nx[i]).abs() < 1e-10);
        }
        let mut y = vec![0.0; 12];
        f.solve_with(&b, &mut y);
        assert_eq!(x, y);
    }

    #[test]
    fn singular_and_cap() {
        let a = DenseMatrix::from_row_major(2, 2, vec![1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(
            DenseFactor::new(a, 8),
            Err(SbmError::SingularMatrix { column: 1 })
        ));
        let a = DenseMatrix::zeros(5, 5);
        assert!(matches!(
            DenseFactor::new(a, 4),
            Err(SbmError::DenseTooLarge { dim: 5, cap: 4 })
        ));
    }
}
