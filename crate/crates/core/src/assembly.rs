//! SBM system on one mesh level: the volume Laplacian over active cells plus
//! symmetrized Nitsche terms on the surrogate boundary, where trial and test
//! functions are extended from the owner cell to the true boundary.
//!
//! The operator is stored cell-wise. Every active cell without surrogate faces
//! shares one reference stiffness block (it does not depend on `h` in 2D);
//! cells on the surrogate boundary carry their own block including face terms.

use crate::error::{Result, SbmError};
use crate::exec::Execution;
use crate::fem::{
    locate_reference_point, physical_point, quadrature_order, DofHandler, Element, QuadratureRule,
};
use crate::geometry::{closest_point_projection, normalized_signed_shift, LevelSet, Point, ShiftDatum};
use crate::linalg::{CsrMatrix, LinearOperator, TripletBuilder};
use crate::mesh::MeshLevel;

/// Marks an inactive cell in [`CellOperator::cell_matrix`].
pub const NO_MATRIX: u32 = u32::MAX;

const RHS_BATCH: usize = 1 << 14;

/// Matrix `A = sum_c R_c^T A_c R_c` over active cells, applied row by row.
#[derive(Clone, Debug)]
pub struct CellOperator {
    pub cells_per_dim: usize,
    pub degree: usize,
    pub nodes_per_dim: usize,
    /// Block id per cell; `0` is the shared interior block.
    pub cell_matrix: Vec<u32>,
    /// Row-major `k x k` blocks, `k = (p+1)^2`, concatenated.
    pub blocks: Vec<f64>,
    pub exec: Execution,
}

impl CellOperator {
    pub fn dofs_per_cell(&self) -> usize {
        (self.degree + 1) * (self.degree + 1)
    }

    pub fn n_dofs(&self) -> usize {
        self.nodes_per_dim * self.nodes_per_dim
    }

    pub fn block(&self, id: u32) -> &[f64] {
        let k = self.dofs_per_cell();
        let s = id as usize * k * k;
        &self.blocks[s..s + k * k]
    }

    /// Block of `cell`, or `None` if the cell is inactive.
    pub fn cell_block(&self, cell: usize) -> Option<&[f64]> {
        match self.cell_matrix[cell] {
            NO_MATRIX => None,
            id => Some(self.block(id)),
        }
    }

    /// Global index of local DoF 0 of `cell`; local `(a, b)` adds `a + b * nodes_per_dim`.
    #[inline]
    pub fn cell_base(&self, cell: usize) -> usize {
        let p = self.degree;
        let (ci, cj) = (cell % self.cells_per_dim, cell / self.cells_per_dim);
        p * cj * self.nodes_per_dim + p * ci
    }

    /// `(A x)_dof`, summing cell contributions in ascending cell order.
    #[inline]
    pub fn row_dot(&self, dof: usize, x: &[f64]) -> f64 {
        let p = self.degree;
        let m = p + 1;
        let k = m * m;
        let n = self.cells_per_dim;
        let gi = dof % self.nodes_per_dim;
        let gj = dof / self.nodes_per_dim;
        let (xs, nx) = span(gi, p, n);
        let (ys, ny) = span(gj, p, n);
        let mut sum = 0.0;
        for &(cj, b) in &ys[..ny] {
            for &(ci, a) in &xs[..nx] {
                let cell = cj * n + ci;
                let id = self.cell_matrix[cell];
                if id == NO_MATRIX {
                    continue;
                }
                let row = &self.blocks[(id as usize * k + a + m * b) * k..][..k];
                let base = p * cj * self.nodes_per_dim + p * ci;
                let mut s = 0.0;
                for bb in 0..m {
                    let xr = &x[base + bb * self.nodes_per_dim..][..m];
                    let rr = &row[bb * m..][..m];
                    for t in 0..m {
                        s += rr[t] * xr[t];
                    }
                }
                sum += s;
            }
        }
        sum
    }

    /// Assembles the global matrix; rows of inactive DoFs stay empty.
    pub fn to_csr(&self) -> CsrMatrix {
        let n = self.n_dofs();
        let k = self.dofs_per_cell();
        let m = self.degree + 1;
        let mut t = TripletBuilder::new(n, n);
        for cell in 0..self.cell_matrix.len() {
            let Some(block) = self.cell_block(cell) else {
                continue;
            };
            let base = self.cell_base(cell);
            for i in 0..k {
                let gi = base + i % m + (i / m) * self.nodes_per_dim;
                for j in 0..k {
                    let gj = base + j % m + (j / m) * self.nodes_per_dim;
                    t.push(gi, gj, block[i * k + j]);
                }
            }
        }
        t.build()
    }
}

/// Cells containing grid line index `g` with the local index along that axis.
#[inline]
fn span(g: usize, p: usize, n: usize) -> ([(usize, usize); 2], usize) {
    let c = g / p;
    let a = g - c * p;
    if a == 0 {
        match (c > 0, c < n) {
            (true, true) => ([(c - 1, p), (c, 0)], 2),
            (true, false) => ([(c - 1, p), (0, 0)], 1),
            (false, _) => ([(c, 0), (0, 0)], 1),
        }
    } else {
        ([(c, a), (0, 0)], 1)
    }
}

impl LinearOperator for CellOperator {
    fn dim(&self) -> usize {
        self.n_dofs()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let chunk = self.nodes_per_dim * 8;
        self.exec.fill_chunks(y, chunk, |start, out| {
            for (o, yi) in out.iter_mut().enumerate() {
                *yi = self.row_dot(start + o, x);
            }
        });
    }
}

/// Which test-function value multiplies the boundary penalty on the right-hand side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PenaltyRhs {
    /// `sigma_G g (E v)`, consistent with the extended penalty on the left.
    #[default]
    Extended,
    /// `sigma_G g v` with the trace on the surrogate boundary.
    Trace,
}

#[derive(Clone, Copy, Debug)]
pub struct AssemblyOptions {
    /// Base penalty; `sigma_G = sigma p^2 / h`.
    pub sigma: f64,
    /// Forces every shift to zero (plain symmetric Nitsche on the surrogate domain).
    pub zero_shift: bool,
    pub penalty_rhs: PenaltyRhs,
    pub exec: Execution,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        AssemblyOptions {
            sigma: 5.0,
            zero_shift: false,
            penalty_rhs: PenaltyRhs::Extended,
            exec: Execution::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SbmSystem {
    pub operator: CellOperator,
    pub rhs: Vec<f64>,
    /// One entry per surrogate-face quadrature point, in face order.
    pub shift_data: Vec<ShiftDatum>,
    pub sigma: f64,
    /// `sigma_G`.
    pub penalty: f64,
    pub h: f64,
    pub degree: usize,
}

/// Values of the owner-cell basis at the true boundary point `x`: the
/// extension row that maps owner-cell DoFs to `(E u)(x~)`.
pub fn extension_row(m: &MeshLevel, elem: &Element, datum: &ShiftDatum) -> Vec<f64> {
    let xi = locate_reference_point(m, datum.owner_cell, datum.true_point);
    elem.shape_values(xi)
}

/// Reference stiffness `int grad N_i . grad N_j` on the unit square.
pub fn reference_stiffness(elem: &Element) -> Vec<f64> {
    let k = elem.dofs_per_cell();
    let quad = QuadratureRule::reference_cell(quadrature_order(elem.degree));
    let mut a = vec![0.0; k * k];
    let mut g = vec![[0.0; 2]; k];
    for (xi, w) in quad.points.iter().zip(&quad.weights) {
        elem.shape_gradients_into(*xi, &mut g);
        for i in 0..k {
            for j in 0..k {
                a[i * k + j] += w * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
            }
        }
    }
    a
}

type Source<'a> = &'a (dyn Fn(Point) -> f64 + Sync);

/// Assembles the SBM operator and right-hand side for `-Δu = f` in Ω, `u = g`
/// on Γ. `g` is evaluated at true boundary points.
pub fn assemble(
    m: &MeshLevel,
    dh: &DofHandler,
    geom: &dyn LevelSet,
    f: Source<'_>,
    g: Source<'_>,
    opts: &AssemblyOptions,
) -> Result<SbmSystem> {
    let p = dh.degree;
    let elem = Element::new(p);
    let k = elem.dofs_per_cell();
    let mm = p + 1;
    let h = m.h;
    let penalty = opts.sigma * (p * p) as f64 / h;
    let q = quadrature_order(p);
    let stiffness = reference_stiffness(&elem);

    let mut cell_matrix = vec![NO_MATRIX; m.n_cells()];
    let mut boundary_cells = Vec::new();
    for c in 0..m.n_cells() {
        if !m.active[c] {
            continue;
        }
        if m.is_boundary_cell(c) {
            cell_matrix[c] = (boundary_cells.len() + 1) as u32;
            boundary_cells.push(c);
        } else {
            cell_matrix[c] = 0;
        }
    }

    // faces are ordered by cell, so each boundary cell owns a contiguous run
    let mut face_start = vec![0usize; boundary_cells.len() + 1];
    {
        let mut fi = 0;
        for (b, &c) in boundary_cells.iter().enumerate() {
            face_start[b] = fi;
            while fi < m.surrogate_faces.len() && m.surrogate_faces[fi].active_cell == c {
                fi += 1;
            }
        }
        face_start[boundary_cells.len()] = fi;
    }

    struct BoundaryCell {
        block: Vec<f64>,
        rhs: Vec<f64>,
        shifts: Vec<ShiftDatum>,
    }

    let per_cell = opts.exec.map_collect(boundary_cells.len(), |b| -> Result<BoundaryCell> {
        let cell = boundary_cells[b];
        let cell_box = m.cell_box(cell);
        let mut block = stiffness.clone();
        let mut rhs = vec![0.0; k];
        let mut shifts = Vec::new();
        let mut nvals = vec![0.0; k];
        let mut grads = vec![[0.0; 2]; k];
        let mut evals = vec![0.0; k];
        let mut dn = vec![0.0; k];
        for face in &m.surrogate_faces[face_start[b]..face_start[b + 1]] {
            let normal = face.outward_normal;
            let rule = QuadratureRule::face(q, &cell_box, face.face_index);
            for (xs, w) in rule.points.iter().zip(&rule.weights) {
                let datum = if opts.zero_shift {
                    ShiftDatum {
                        surrogate_point: *xs,
                        true_point: *xs,
                        shift: [0.0, 0.0],
                        surrogate_normal: normal,
                        owner_cell: cell,
                    }
                } else {
                    ShiftDatum::from_projection(closest_point_projection(*xs, geom)?, normal, cell)
                };
                let xi_s = locate_reference_point(m, cell, *xs);
                let xi_t = locate_reference_point(m, cell, datum.true_point);
                elem.shape_values_into(xi_s, &mut nvals);
                elem.shape_gradients_into(xi_s, &mut grads);
                elem.shape_values_into(xi_t, &mut evals);
                for i in 0..k {
                    dn[i] = (grads[i][0] * normal[0] + grads[i][1] * normal[1]) / h;
                }
                let gx = g(datum.true_point);
                if gx.is_nan() {
                    return Err(SbmError::NotANumber("boundary data"));
                }
                for i in 0..k {
                    let row = &mut block[i * k..(i + 1) * k];
                    for j in 0..k {
                        row[j] += w * (-nvals[i] * dn[j] - dn[i] * evals[j]
                            + penalty * evals[j] * evals[i]);
                    }
                    let pen_test = match opts.penalty_rhs {
                        PenaltyRhs::Extended => evals[i],
                        PenaltyRhs::Trace => nvals[i],
                    };
                    rhs[i] += w * (-dn[i] * gx + penalty * gx * pen_test);
                }
                shifts.push(datum);
            }
        }
        Ok(BoundaryCell { block, rhs, shifts })
    });

    let mut blocks = Vec::with_capacity((boundary_cells.len() + 1) * k * k);
    blocks.extend_from_slice(&stiffness);
    let mut face_rhs = Vec::with_capacity(boundary_cells.len());
    let mut shift_data = Vec::new();
    for bc in per_cell {
        let bc = bc?;
        blocks.extend_from_slice(&bc.block);
        face_rhs.push(bc.rhs);
        shift_data.extend(bc.shifts);
    }

    // volume source, computed in batches and scattered in cell order
    let quad = QuadratureRule::reference_cell(q);
    let table: Vec<Vec<f64>> = quad.points.iter().map(|&x| elem.shape_values(x)).collect();
    let area = h * h;
    let active_cells: Vec<usize> = (0..m.n_cells()).filter(|&c| m.active[c]).collect();
    let mut rhs = vec![0.0; dh.n_dofs()];
    let nodes = dh.nodes_per_dim;
    let mut boundary_iter = 0usize;
    for batch in active_cells.chunks(RHS_BATCH) {
        let local = opts.exec.map_collect(batch.len(), |t| -> Result<Vec<f64>> {
            let c = batch[t];
            let mut v = vec![0.0; k];
            for (qp, (xi, w)) in quad.points.iter().zip(&quad.weights).enumerate() {
                let fx = f(physical_point(m, c, *xi));
                if fx.is_nan() {
                    return Err(SbmError::NotANumber("source term"));
                }
                for i in 0..k {
                    v[i] += w * area * fx * table[qp][i];
                }
            }
            Ok(v)
        });
        for (t, v) in local.into_iter().enumerate() {
            let mut v = v?;
            let c = batch[t];
            if cell_matrix[c] != 0 {
                for (vi, fi) in v.iter_mut().zip(&face_rhs[boundary_iter]) {
                    *vi += fi;
                }
                boundary_iter += 1;
            }
            let (ci, cj) = m.cell_ij(c);
            let base = p * cj * nodes + p * ci;
            for i in 0..k {
                rhs[base + i % mm + (i / mm) * nodes] += v[i];
            }
        }
    }

    Ok(SbmSystem {
        operator: CellOperator {
            cells_per_dim: m.cells_per_dim,
            degree: p,
            nodes_per_dim: nodes,
            cell_matrix,
            blocks,
            exec: opts.exec,
        },
        rhs,
        shift_data,
        sigma: opts.sigma,
        penalty,
        h,
        degree: p,
    })
}

/// `(min, max)` normalized signed shift over all face quadrature points.
pub fn shift_statistics(sys: &SbmSystem) -> (f64, f64) {
    sys.shift_data
        .iter()
        .map(|d| normalized_signed_shift(d, sys.h))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
            (lo.min(s), hi.max(s))
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Circle;
    use crate::mesh::classify_cells;

    fn zero(_: Point) -> f64 {
        0.0
    }

    fn one(_: Point) -> f64 {
        1.0
    }

    fn disk_system(level: usize, p: usize, opts: &AssemblyOptions) -> (MeshLevel, DofHandler, SbmSystem) {
        let geom = Circle::unit();
        let m = classify_cells(level, &geom, 0.0, Execution::Sequential).unwrap();
        let dh = DofHandler::new(&m, p);
        let sys = assemble(&m, &dh, &geom, &one, &zero, opts).unwrap();
        (m, dh, sys)
    }

    #[test]
    fn interior_rows_match_q1_stencil() {
        // Q1 Laplacian on a uniform grid: 8/3 at the center, -1/3 at the eight neighbours
        let m = MeshLevel::from_flags(4, vec![true; 16]);
        let dh = DofHandler::new(&m, 1);
        let sys = assemble(&m, &dh, &Circle::new([0.0, 0.0], 5.0), &one, &zero, &AssemblyOptions::default())
            .unwrap();
        let a = sys.operator.to_csr();
        let c = 2 * 5 + 2;
        assert!((a.get(c, c) - 8.0 / 3.0).abs() < 1e-14);
        for d in [c - 6, c - 5, c - 4, c - 1, c + 1, c + 4, c + 5, c + 6] {
            assert!((a.get(c, d) + 1.0 / 3.0).abs() < 1e-14);
        }
        let (cols, _) = a.row(c);
        assert_eq!(cols.len(), 9);
    }

    #[test]
    fn interior_rows_match_body_fitted_assembly() {
        // independent global quadrature of grad N_i . grad N_j for p = 2
        let m = MeshLevel::from_flags(4, vec![true; 16]);
        let p = 2;
        let dh = DofHandler::new(&m, p);
        let sys = assemble(&m, &dh, &Circle::new([0.0, 0.0], 5.0), &one, &zero, &AssemblyOptions::default())
            .unwrap();
        let a = sys.operator.to_csr();
        let elem = Element::new(p);
        let quad = QuadratureRule::reference_cell(6);
        let center = dh.nodes_per_dim * 4 + 4;
        let mut cells = [(0, 0); 4];
        let cnt = dh.dof_cells(center, &mut cells);
        let mut expect = std::collections::BTreeMap::new();
        for &(c, li) in &cells[..cnt] {
            let dofs = dh.cell_dofs(c);
            for (xi, w) in quad.points.iter().zip(&quad.weights) {
                let g = elem.shape_gradients(*xi);
                for (lj, &dj) in dofs.iter().enumerate() {
                    *expect.entry(dj).or_insert(0.0) += w * (g[li][0] * g[lj][0] + g[li][1] * g[lj][1]);
                }
            }
        }
        for (&dj, &v) in &expect {
            assert!((a.get(center, dj) - v).abs() < 1e-12);
        }
    }

    #[test]
    fn constants_in_volume_kernel() {
        let elem = Element::new(3);
        let k = elem.dofs_per_cell();
        let s = reference_stiffness(&elem);
        for i in 0..k {
            let row: f64 = s[i * k..(i + 1) * k].iter().sum();
            assert!(row.abs() < 1e-12);
        }
    }

    #[test]
    fn zero_shift_is_symmetric() {
        let opts = AssemblyOptions {
            zero_shift: true,
            ..AssemblyOptions::default()
        };
        let (_, _, sys) = disk_system(3, 2, &opts);
        let a = sys.operator.to_csr();
        assert!(a.max_asymmetry() <= 1e-12 * a.max_abs());
        let (lo, hi) = shift_statistics(&sys);
        assert_eq!((lo, hi), (0.0, 0.0));
    }

    #[test]
    fn inactive_rows_are_zero() {
        let (_, dh, sys) = disk_system(2, 2, &AssemblyOptions::default());
        let a = sys.operator.to_csr();
        for d in 0..dh.n_dofs() {
            if !dh.dof_is_active[d] {
                assert_eq!(a.row(d).0.len(), 0);
                assert_eq!(sys.rhs[d], 0.0);
                // column is zero too
                for r in 0..dh.n_dofs() {
                    assert_eq!(a.get(r, d), 0.0);
                }
            }
        }
    }

    #[test]
    fn row_dot_agrees_with_csr() {
        let (_, dh, sys) = disk_system(3, 3, &AssemblyOptions::default());
        let a = sys.operator.to_csr();
        let x: Vec<f64> = (0..dh.n_dofs()).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect();
        let mut y1 = vec![0.0; dh.n_dofs()];
        let mut y2 = vec![0.0; dh.n_dofs()];
        a.spmv(&x, &mut y1);
        sys.operator.apply(&x, &mut y2);
        for i in 0..y1.len() {
            assert!((y1[i] - y2[i]).abs() < 1e-11 * (1.0 + y1[i].abs()));
        }
    }

    #[test]
    fn asymmetry_confined_to_boundary_cells() {
        let (m, dh, sys) = disk_system(3, 1, &AssemblyOptions::default());
        let a = sys.operator.to_csr();
        let mut near = vec![false; dh.n_dofs()];
        for c in 0..m.n_cells() {
            if m.active[c] && m.is_boundary_cell(c) {
                for d in dh.cell_dofs(c) {
                    near[d] = true;
                }
            }
        }
        let at = a.transpose();
        for i in 0..dh.n_dofs() {
            let (cols, vals) = a.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                if (v - at.get(i, c as usize)).abs() > 1e-12 {
                    assert!(near[i] && near[c as usize]);
                }
            }
        }
    }

    #[test]
    fn exact_quadratic_satisfies_discrete_system() {
        let exact = |x: Point| 0.25 * (1.0 - x[0] * x[0] - x[1] * x[1]);
        let mut norms = Vec::new();
        for level in 3..=6 {
            let (m, dh, sys) = disk_system(level, 2, &AssemblyOptions::default());
            let u = dh.interpolate(&m, exact);
            let mut r = vec![0.0; dh.n_dofs()];
            sys.operator.apply(&u, &mut r);
            let res = (0..dh.n_dofs())
                .filter(|&d| dh.dof_is_active[d])
                .map(|d| (sys.rhs[d] - r[d]).abs())
                .fold(0.0, f64::max);
            norms.push(res);
        }
        // interpolant of a quadratic is exact for p = 2: residual at rounding level
        for r in norms {
            assert!(r < 1e-9, "residual {r}");
        }
    }

    #[test]
    fn shift_signs_for_lambda_zero() {
        let (_, _, sys) = disk_system(4, 1, &AssemblyOptions::default());
        let (lo, hi) = shift_statistics(&sys);
        assert!(lo >= -1e-10);
        assert!(hi > 0.0 && hi < 1.5);
        for d in &sys.shift_data {
            let r = d.true_point[0].hypot(d.true_point[1]);
            assert!((r - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn parallel_matches_sequential() {
        let seq = AssemblyOptions {
            exec: Execution::Sequential,
            ..AssemblyOptions::default()
        };
        let par = AssemblyOptions {
            exec: Execution::Parallel,
            ..AssemblyOptions::default()
        };
        let (_, _, a) = disk_system(4, 2, &seq);
        let (_, _, b) = disk_system(4, 2, &par);
        assert_eq!(a.rhs, b.rhs);
        assert_eq!(a.operator.blocks, b.operator.blocks);
    }
}
