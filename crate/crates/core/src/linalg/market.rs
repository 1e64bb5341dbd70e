use std::io::Write;

use super::sparse::CsrMatrix;
use crate::error::Result;

/// Writes `a` in MatrixMarket coordinate format (1-based indices).
pub fn write_matrix_market<W: Write>(a: &CsrMatrix, mut out: W) -> Result<()> {
    writeln!(out, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(out, "{} {} {}", a.n_rows(), a.n_cols(), a.nnz())?;
    for i in 0..a.n_rows() {
        let (cols, vals) = a.row(i);
        for (&c, &v) in cols.iter().zip(vals) {
            writeln!(out, "{} {} {:.17e}", i + 1, c + 1, v)?;
        }
    }
    Ok(())
}

/// Writes a dense vector in MatrixMarket array format.
pub fn write_vector_market<W: Write>(v: &[f64], mut out: W) -> Result<()> {
    writeln!(out, "%%MatrixMarket matrix array real general")?;
    writeln!(out, "{} 1", v.len())?;
    for x in v {
        writeln!(out, "{x:.17e}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::TripletBuilder;

    #[test]
    fn coordinate_layout() {
        let mut t = TripletBuilder::new(2, 2);
        t.push(0, 1, 2.5);
        t.push(1, 0, -1.0);
        let mut buf = Vec::new();
        write_matrix_market(&t.build(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[1], "2 2 2");
        assert!(lines[2].starts_with("1 2 2.5"));
        assert!(lines[3].starts_with("2 1 -1.0"));
    }
}
