//! Sparse and dense linear algebra: CSR storage, LU factorizations for local
//! and coarse solves, and right-preconditioned GMRES.

mod banded;
mod dense;
mod gmres;
mod market;
mod sparse;

pub use banded::BandedFactor;
pub use dense::{DenseFactor, DenseMatrix, DEFAULT_DENSE_CAP};
pub use gmres::{gmres, GmresOptions, GmresOutcome};
pub use market::{write_matrix_market, write_vector_market};
pub use sparse::{CsrMatrix, TripletBuilder};

use crate::error::{Result, SbmError};

/// A square linear map `y = A x`.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;

    fn apply(&self, x: &[f64], y: &mut [f64]);
}

/// `y = x`.
#[derive(Clone, Copy, Debug)]
pub struct Identity(pub usize);

impl LinearOperator for Identity {
    fn dim(&self) -> usize {
        self.0
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(x);
    }
}

/// Direct solver for the coarsest level.
#[derive(Clone, Debug)]
pub enum CoarseFactor {
    Dense(DenseFactor),
    Banded(BandedFactor),
}

impl CoarseFactor {
    pub fn dim(&self) -> usize {
        match self {
            CoarseFactor::Dense(f) => f.dim(),
            CoarseFactor::Banded(f) => f.dim(),
        }
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        match self {
            CoarseFactor::Dense(f) => f.solve_in_place(b),
            CoarseFactor::Banded(f) => f.solve_in_place(b),
        }
    }
}

/// Copies `a`, puts a unit diagonal on every all-zero row (the inactive DoFs)
/// and factorizes. Dense LU up to `dense_cap` unknowns, banded LU beyond.
pub fn coarse_factorize(a: &CsrMatrix, dense_cap: usize) -> Result<CoarseFactor> {
    let patched = patch_zero_rows(a);
    if patched.n_rows() <= dense_cap {
        let dense = patched.to_dense();
        Ok(CoarseFactor::Dense(DenseFactor::new(dense, dense_cap)?))
    } else {
        Ok(CoarseFactor::Banded(BandedFactor::from_csr(&patched)?))
    }
}

/// Returns `a` with a one on the diagonal of each row holding no nonzero.
pub fn patch_zero_rows(a: &CsrMatrix) -> CsrMatrix {
    let mut t = TripletBuilder::new(a.n_rows(), a.n_cols());
    for i in 0..a.n_rows() {
        let (cols, vals) = a.row(i);
        let mut empty = true;
        for (&c, &v) in cols.iter().zip(vals) {
            if v != 0.0 {
                empty = false;
                t.push(i, c as usize, v);
            }
        }
        if empty {
            t.push(i, i, 1.0);
        }
    }
    t.build()
}

pub(crate) fn check_finite(v: &[f64], what: &'static str) -> Result<()> {
    if v.iter().any(|x| x.is_nan()) {
        Err(SbmError::NotANumber(what))
    } else {
        Ok(())
    }
}
