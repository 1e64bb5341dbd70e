use super::LinearOperator;
use super::dense::DenseMatrix;

/// Compressed sparse row matrix; columns ascending and unique within a row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<f64>,
}

/// Collects `(row, col, value)` triplets; duplicates are summed in insertion order.
#[derive(Clone, Debug)]
pub struct TripletBuilder {
    n_rows: usize,
    n_cols: usize,
    entries: Vec<(u32, u32, f64)>,
}

impl TripletBuilder {
    pub fn new(n_rows: usize, n_cols: usize) -> Self {
        TripletBuilder {
            n_rows,
            n_cols,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.n_rows && col < self.n_cols);
        self.entries.push((row as u32, col as u32, value));
    }

    pub fn build(mut self) -> CsrMatrix {
        // stable sort keeps the insertion order of duplicates
        self.entries.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; self.n_rows + 1];
        let mut col_idx = Vec::with_capacity(self.entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(u32, u32)> = None;
        for (r, c, v) in self.entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            last = Some((r, c));
            row_ptr[r as usize + 1] += 1;
            col_idx.push(c);
            values.push(v);
        }
        for i in 0..self.n_rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            row_ptr,
            col_idx,
            values,
        }
    }
}

impl CsrMatrix {
    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            n_rows: n,
            n_cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n as u32).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        CsrMatrix {
            n_rows,
            n_cols,
            row_ptr: vec![0; n_rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn from_dense(a: &DenseMatrix) -> Self {
        let mut t = TripletBuilder::new(a.rows(), a.cols());
        for i in 0..a.rows() {
            for j in 0..a.cols() {
                let v = a[(i, j)];
                if v != 0.0 {
                    t.push(i, j, v);
                }
            }
        }
        t.build()
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&(j as u32)) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// `y = A x`, summing each row in column order.
    pub fn spmv(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n_cols);
        assert_eq!(y.len(), self.n_rows);
        for (i, yi) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            *yi = cols
                .iter()
                .zip(vals)
                .fold(0.0, |s, (&c, &v)| s + v * x[c as usize]);
        }
    }

    /// `y = A^T x`.
    pub fn spmv_transpose(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n_rows);
        assert_eq!(y.len(), self.n_cols);
        y.iter_mut().for_each(|v| *v = 0.0);
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                y[c as usize] += v * xi;
            }
        }
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut t = TripletBuilder::new(self.n_cols, self.n_rows);
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                t.push(c as usize, i, v);
            }
        }
        t.build()
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.n_rows, self.n_cols);
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                d[(i, c as usize)] = v;
            }
        }
        d
    }

    /// Largest `|i - j|` over stored entries, split into lower and upper parts.
    pub fn bandwidths(&self) -> (usize, usize) {
        let mut lower = 0;
        let mut upper = 0;
        for i in 0..self.n_rows {
            let (cols, _) = self.row(i);
            if let (Some(&first), Some(&last)) = (cols.first(), cols.last()) {
                lower = lower.max(i.saturating_sub(first as usize));
                upper = upper.max((last as usize).saturating_sub(i));
            }
        }
        (lower, upper)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max |a_ij - a_ji|`.
    pub fn max_asymmetry(&self) -> f64 {
        let t = self.transpose();
        let mut m: f64 = 0.0;
        for i in 0..self.n_rows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                m = m.max((v - t.get(i, c as usize)).abs());
            }
            let (cols, vals) = t.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                m = m.max((v - self.get(i, c as usize)).abs());
            }
        }
        m
    }

    /// Keeps rows and columns listed in `keep` (ascending), renumbered.
    pub fn submatrix(&self, keep: &[usize]) -> CsrMatrix {
        let mut map = vec![u32::MAX; self.n_cols.max(self.n_rows)];
        for (k, &i) in keep.iter().enumerate() {
            map[i] = k as u32;
        }
        let mut t = TripletBuilder::new(keep.len(), keep.len());
        for (k, &i) in keep.iter().enumerate() {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                let m = map[c as usize];
                if m != u32::MAX {
                    t.push(k, m as usize, v);
                }
            }
        }
        t.build()
    }
}

impl LinearOperator for CsrMatrix {
    fn dim(&self) -> usize {
        self.n_rows
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.spmv(x, y);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn identity_and_zero() {
        let x = vec![1.0, -2.0, 3.5];
        let mut y = vec![0.0; 3];
        CsrMatrix::identity(3).spmv(&x, &mut y);
        assert_eq!(y, x);
        CsrMatrix::zeros(3, 3).spmv(&x, &mut y);
        assert_eq!(y, vec![0.0; 3]);
    }

    #[test]
    fn random_product_matches_dense() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        let n = 20;
        let mut dense = DenseMatrix::zeros(n, n);
        let mut t = TripletBuilder::new(n, n);
        for i in 0..n {
            for j in 0..n {
                if rng.random::<f64>() < 0.3 {
                    let v: f64 = rng.random_range(-1.0..1.0);
                    dense[(i, j)] = v;
                    t.push(i, j, v);
                }
            }
        }
        let a = t.build();
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut y = vec![0.0; n];
        a.spmv(&x, &mut y);
        for i in 0..n {
            let expect: f64 = (0..n).map(|j| dense[(i, j)] * x[j]).sum();
            assert!((y[i] - expect).abs() < 1e-13);
        }
        let mut yt = vec![0.0; n];
        a.spmv_transpose(&x, &mut yt);
        for j in 0..n {
            let expect: f64 = (0..n).map(|i| dense[(i, j)] * x[i]).sum();
            assert!((yt[j] - expect).abs() < 1e-13);
        }
    }

    #[test]
    fn duplicates_are_summed() {
        let mut t = TripletBuilder::new(2, 2);
        t.push(1, 0, 1.0);
        t.push(0, 1, 2.0);
        t.push(1, 0, 0.5);
        let a = t.build();
        assert_eq!(a.nnz(), 2);
        assert_eq!(a.get(1, 0), 1.5);
        assert_eq!(a.get(0, 1), 2.0);
        assert_eq!(a.get(0, 0), 0.0);
        assert_eq!(a.bandwidths(), (1, 1));
    }
}
