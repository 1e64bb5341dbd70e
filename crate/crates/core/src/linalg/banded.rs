use super::sparse::CsrMatrix;
use crate::error::{Result, SbmError};

/// Banded LU with partial pivoting. Row `i` stores columns
/// `i - kl ..= i + kl + ku`, which holds the fill produced by row swaps.
#[derive(Clone, Debug)]
pub struct BandedFactor {
    n: usize,
    kl: usize,
    width: usize,
    rows: Vec<f64>,
    lower: Vec<f64>,
    pivots: Vec<usize>,
}

impl BandedFactor {
    pub fn from_csr(a: &CsrMatrix) -> Result<Self> {
        assert_eq!(a.n_rows(), a.n_cols());
        let n = a.n_rows();
        let (kl, ku) = a.bandwidths();
        let width = 2 * kl + ku + 1;
        let mut rows = vec![0.0; n * width];
        for i in 0..n {
            let (cols, vals) = a.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                rows[i * width + (c as usize + kl - i)] = v;
            }
        }
        let at = |i: usize, c: usize| i * width + c + kl - i;
        let scale = a.max_abs();
        let mut lower = vec![0.0; n * kl.max(1)];
        let mut pivots = vec![0; n];
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = rows[at(k, k)].abs();
            for r in k + 1..=last_row {
                let v = rows[at(r, k)].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best == 0.0 || best <= scale * 1e-300 || !best.is_finite() {
                return Err(SbmError::SingularMatrix { column: k });
            }
            pivots[k] = p;
            let last_col = (k + kl + ku).min(n - 1);
            if p != k {
                for c in k..=last_col {
                    rows.swap(at(k, c), at(p, c));
                }
            }
            let pivot = rows[at(k, k)];
            for r in k + 1..=last_row {
                let m = rows[at(r, k)] / pivot;
                lower[k * kl + (r - k - 1)] = m;
                rows[at(r, k)] = 0.0;
                if m != 0.0 {
                    for c in k + 1..=last_col {
                        rows[at(r, c)] -= m * rows[at(k, c)];
                    }
                }
            }
        }
        Ok(BandedFactor {
            n,
            kl,
            width,
            rows,
            lower,
            pivots,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.width
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let (n, kl, w) = (self.n, self.kl, self.width);
        assert_eq!(b.len(), n);
        for k in 0..n {
            b.swap(k, self.pivots[k]);
            let bk = b[k];
            if bk != 0.0 {
                let last = (k + kl).min(n - 1);
                for r in k + 1..=last {
                    b[r] -= self.lower[k * kl + (r - k - 1)] * bk;
                }
            }
        }
        let ku_total = w - kl - 1;
        for k in (0..n).rev() {
            let base = k * w + kl;
            let last = (k + ku_total).min(n - 1);
            let mut s = b[k];
            for c in k + 1..=last {
                s -= self.rows[base + (c - k)] * b[c];
            }
            b[k] = s / self.rows[base];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{DenseFactor, TripletBuilder};
    use rand::{Rng, SeedableRng};

    #[test]
    fn matches_dense_with_pivoting() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(3);
        let n = 60;
        let mut t = TripletBuilder::new(n, n);
        for i in 0..n {
            for j in i.saturating_sub(4)..(i + 6).min(n) {
                // weak diagonal forces row swaps
                let v: f64 = rng.random_range(-1.0..1.0);
                t.push(i, j, if i == j { 0.01 * v } else { v });
            }
        }
        let a = t.build();
        let banded = BandedFactor::from_csr(&a).unwrap();
        let dense = DenseFactor::new(a.to_dense(), 100).unwrap();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut x1 = b.clone();
        let mut x2 = b.clone();
        banded.solve_in_place(&mut x1);
        dense.solve_in_place(&mut x2);
        let mut ax = vec![0.0; n];
        a.spmv(&x1, &mut ax);
        for i in 0..n {
            assert!((ax[i] - b[i]).abs() < 1e-9, "row {i}");
            assert!((x1[i] - x2[i]).abs() < 1e-8 * (1.0 + x2[i].abs()));
        }
    }

    #[test]
    fn diagonal_matrix() {
        let mut t = TripletBuilder::new(3, 3);
        for i in 0..3 {
            t.push(i, i, (i + 1) as f64);
        }
        let f = BandedFactor::from_csr(&t.build()).unwrap();
        let mut b = vec![1.0, 4.0, 9.0];
        f.solve_in_place(&mut b);
        assert_eq!(b, vec![1.0, 2.0, 3.0]);
    }
}
