//! Full-residual shy patch smoother.
//!
//! A patch is centered at a grid vertex and collects the active cells around
//! it; it is formed only when at least `shyness` cells are active. Its subspace
//! holds the DoFs whose supporting active cells all belong to the patch, so the
//! complete residual on the subspace is computable from patch cells alone.

use std::io::Write;

use crate::assembly::CellOperator;
use crate::error::{Result, SbmError};
use crate::exec::Execution;
use crate::fem::DofHandler;
use crate::linalg::{DenseFactor, DenseMatrix, DEFAULT_DENSE_CAP};
use crate::mesh::MeshLevel;

const VERTEX_BATCH: usize = 1 << 15;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SmootherConfig {
    /// Minimum number of active cells around a vertex for a patch to form.
    pub shyness: usize,
    /// Stages per smoothing call: the first visits every patch, the rest only
    /// patches touching the surrogate boundary.
    pub steps: usize,
}

impl Default for SmootherConfig {
    fn default() -> Self {
        SmootherConfig {
            shyness: 3,
            steps: 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepOrder {
    Forward,
    Reverse,
}

/// Borrowed view of one patch.
#[derive(Clone, Copy, Debug)]
pub struct Patch<'a> {
    pub center_vertex: usize,
    pub cells: &'a [u32],
    pub subspace_dofs: &'a [u32],
    pub local_factor: &'a DenseFactor,
    pub is_boundary: bool,
}

/// All patches of one level in lexicographic order of their center vertex.
#[derive(Clone, Debug, Default)]
pub struct PatchSet {
    centers: Vec<u32>,
    cell_ptr: Vec<usize>,
    cells: Vec<u32>,
    dof_ptr: Vec<usize>,
    dofs: Vec<u32>,
    factor_id: Vec<u32>,
    factors: Vec<DenseFactor>,
    is_boundary: Vec<bool>,
    boundary: Vec<u32>,
    max_subspace: usize,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn n_boundary(&self) -> usize {
        self.boundary.len()
    }

    /// Distinct local factorizations stored (interior patches share one).
    pub fn n_factors(&self) -> usize {
        self.factors.len()
    }

    pub fn get(&self, i: usize) -> Patch<'_> {
        Patch {
            center_vertex: self.centers[i] as usize,
            cells: &self.cells[self.cell_ptr[i]..self.cell_ptr[i + 1]],
            subspace_dofs: &self.dofs[self.dof_ptr[i]..self.dof_ptr[i + 1]],
            local_factor: &self.factors[self.factor_id[i] as usize],
            is_boundary: self.is_boundary[i],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Patch<'_>> + '_ {
        (0..self.len()).map(|i| self.get(i))
    }

    /// Patch indices visited by stage `stage` (0-based).
    fn stage_indices(&self, stage: usize) -> StageIter<'_> {
        if stage == 0 {
            StageIter::All(0..self.len())
        } else {
            StageIter::Boundary(self.boundary.iter())
        }
    }

    fn push(&mut self, center: usize, built: Built, factor_id: u32) {
        self.centers.push(center as u32);
        self.cells.extend_from_slice(&built.cells);
        self.cell_ptr.push(self.cells.len());
        self.max_subspace = self.max_subspace.max(built.dofs.len());
        self.dofs.extend_from_slice(&built.dofs);
        self.dof_ptr.push(self.dofs.len());
        self.factor_id.push(factor_id);
        if built.boundary {
            self.boundary.push(self.is_boundary.len() as u32);
        }
        self.is_boundary.push(built.boundary);
    }
}

enum StageIter<'a> {
    All(std::ops::Range<usize>),
    Boundary(std::slice::Iter<'a, u32>),
}

impl Iterator for StageIter<'_> {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        match self {
            StageIter::All(r) => r.next(),
            StageIter::Boundary(it) => it.next().map(|&i| i as usize),
        }
    }
}

impl DoubleEndedIterator for StageIter<'_> {
    fn next_back(&mut self) -> Option<usize> {
        match self {
            StageIter::All(r) => r.next_back(),
            StageIter::Boundary(it) => it.next_back().map(|&i| i as usize),
        }
    }
}

/// Per-vertex coverage information.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VertexCoverage {
    pub vertex: usize,
    pub active_cells: usize,
    pub patch_formed: bool,
    /// Active DoFs in no patch whose nearest grid vertex is this one.
    pub uncovered_dofs: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CoverageReport {
    /// Vertices touching at least one active cell.
    pub vertices: Vec<VertexCoverage>,
    /// Active DoFs belonging to no patch, ascending.
    pub uncovered: Vec<usize>,
}

impl CoverageReport {
    pub fn is_complete(&self) -> bool {
        self.uncovered.is_empty()
    }

    /// Writes `vertex,active_cells,patch_formed,uncovered_dofs`; the last column
    /// lists DoF ids separated by `;`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["vertex", "active_cells", "patch_formed", "uncovered_dofs"])?;
        for v in &self.vertices {
            let list: Vec<String> = v.uncovered_dofs.iter().map(|d| d.to_string()).collect();
            w.write_record([
                v.vertex.to_string(),
                v.active_cells.to_string(),
                (v.patch_formed as u8).to_string(),
                list.join(";"),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

struct Built {
    cells: Vec<u32>,
    dofs: Vec<u32>,
    boundary: bool,
}

/// Patch cells and subspace of vertex `v`, or `None` below the shyness bound
/// or when the subspace is empty.
fn patch_at(m: &MeshLevel, dh: &DofHandler, v: usize, shyness: usize) -> Option<Built> {
    let nv = m.cells_per_dim + 1;
    let cells: Vec<u32> = m.vertex_cells(v % nv, v / nv).map(|c| c as u32).collect();
    if cells.is_empty() || cells.len() < shyness {
        return None;
    }
    let mut dofs = Vec::new();
    let mut support = [(0usize, 0usize); 4];
    for &c in &cells {
        for d in dh.cell_dofs(c as usize) {
            let cnt = dh.dof_cells(d, &mut support);
            let inside = support[..cnt]
                .iter()
                .filter(|(sc, _)| m.active[*sc])
                .all(|(sc, _)| cells.contains(&(*sc as u32)));
            if inside {
                dofs.push(d as u32);
            }
        }
    }
    dofs.sort_unstable();
    dofs.dedup();
    if dofs.is_empty() {
        log::debug!("vertex {v}: patch with empty subspace discarded");
        return None;
    }
    let boundary = cells.iter().any(|&c| m.is_boundary_cell(c as usize));
    Some(Built {
        cells,
        dofs,
        boundary,
    })
}

/// `A_i = R_i A R_i^T`, summed over patch cells in ascending order.
pub fn local_matrix(op: &CellOperator, cells: &[u32], dofs: &[u32]) -> DenseMatrix {
    let n = dofs.len();
    let k = op.dofs_per_cell();
    let mm = op.degree + 1;
    let mut a = DenseMatrix::zeros(n, n);
    let mut pos = vec![usize::MAX; k];
    for &c in cells {
        let Some(block) = op.cell_block(c as usize) else {
            continue;
        };
        let base = op.cell_base(c as usize);
        for (l, slot) in pos.iter_mut().enumerate() {
            let g = (base + l % mm + (l / mm) * op.nodes_per_dim) as u32;
            *slot = dofs.binary_search(&g).unwrap_or(usize::MAX);
        }
        for i in 0..k {
            if pos[i] == usize::MAX {
                continue;
            }
            for j in 0..k {
                if pos[j] != usize::MAX {
                    a[(pos[i], pos[j])] += block[i * k + j];
                }
            }
        }
    }
    a
}

fn is_canonical(op: &CellOperator, cells: &[u32]) -> bool {
    cells.len() == 4 && cells.iter().all(|&c| op.cell_matrix[c as usize] == 0)
}

/// Forms every admissible patch, factorizes its local matrix and reports
/// active DoFs left uncovered. Patches made of four interior cells share a
/// single factorization.
pub fn build_patches(
    m: &MeshLevel,
    dh: &DofHandler,
    op: &CellOperator,
    shyness: usize,
    exec: Execution,
) -> Result<(PatchSet, CoverageReport)> {
    let nvert = m.n_vertices();
    let mut set = PatchSet {
        cell_ptr: vec![0],
        dof_ptr: vec![0],
        ..PatchSet::default()
    };

    let mut shared: Option<u32> = None;
    for v in 0..nvert {
        let nv = m.cells_per_dim + 1;
        let cells: Vec<u32> = m.vertex_cells(v % nv, v / nv).map(|c| c as u32).collect();
        if cells.len() >= shyness && is_canonical(op, &cells) {
            let built = patch_at(m, dh, v, shyness).expect("interior patch has a subspace");
            let a = local_matrix(op, &built.cells, &built.dofs);
            let f = DenseFactor::new(a, DEFAULT_DENSE_CAP)
                .map_err(|_| SbmError::SingularPatch { vertex: v })?;
            set.factors.push(f);
            shared = Some(0);
            break;
        }
    }

    let mut start = 0;
    while start < nvert {
        let end = (start + VERTEX_BATCH).min(nvert);
        let batch = exec.map_collect(end - start, |t| -> Result<Option<(Built, Option<DenseFactor>)>> {
            let v = start + t;
            let Some(built) = patch_at(m, dh, v, shyness) else {
                return Ok(None);
            };
            if shared.is_some() && is_canonical(op, &built.cells) {
                return Ok(Some((built, None)));
            }
            let a = local_matrix(op, &built.cells, &built.dofs);
            let f = DenseFactor::new(a, DEFAULT_DENSE_CAP)
                .map_err(|_| SbmError::SingularPatch { vertex: v })?;
            Ok(Some((built, Some(f))))
        });
        for (t, item) in batch.into_iter().enumerate() {
            let Some((built, factor)) = item? else {
                continue;
            };
            let id = match factor {
                Some(f) => {
                    set.factors.push(f);
                    (set.factors.len() - 1) as u32
                }
                None => shared.expect("shared factor"),
            };
            set.push(start + t, built, id);
        }
        start = end;
    }

    let mut formed = vec![false; nvert];
    for &c in &set.centers {
        formed[c as usize] = true;
    }
    let report = coverage_from(m, dh, &formed, set.dofs.iter().map(|&d| d as usize));
    Ok((set, report))
}

/// Coverage for shyness `shyness` without factorizing any local matrix.
pub fn coverage_report(m: &MeshLevel, dh: &DofHandler, shyness: usize, exec: Execution) -> CoverageReport {
    let patches = exec.map_collect(m.n_vertices(), |v| patch_at(m, dh, v, shyness).map(|b| b.dofs));
    let formed: Vec<bool> = patches.iter().map(Option::is_some).collect();
    let covered = patches.iter().flatten().flatten().map(|&d| d as usize);
    coverage_from(m, dh, &formed, covered)
}

fn coverage_from(
    m: &MeshLevel,
    dh: &DofHandler,
    formed: &[bool],
    covered_dofs: impl Iterator<Item = usize>,
) -> CoverageReport {
    let mut covered = vec![false; dh.n_dofs()];
    for d in covered_dofs {
        covered[d] = true;
    }
    let uncovered: Vec<usize> = (0..dh.n_dofs())
        .filter(|&d| dh.dof_is_active[d] && !covered[d])
        .collect();
    let nv = m.cells_per_dim + 1;
    let mut per_vertex: Vec<Vec<usize>> = vec![Vec::new(); m.n_vertices()];
    let p = dh.degree;
    for &d in &uncovered {
        let (gi, gj) = dh.dof_ij(d);
        // nearest vertex, ties toward the lower index
        let vi = (2 * gi + p - 1) / (2 * p);
        let vj = (2 * gj + p - 1) / (2 * p);
        per_vertex[vj * nv + vi].push(d);
    }
    let mut vertices = Vec::new();
    for (v, list) in per_vertex.into_iter().enumerate() {
        let count = m.vertex_cells(v % nv, v / nv).count();
        if count == 0 && list.is_empty() {
            continue;
        }
        vertices.push(VertexCoverage {
            vertex: v,
            active_cells: count,
            patch_formed: formed[v],
            uncovered_dofs: list,
        });
    }
    CoverageReport {
        vertices,
        uncovered,
    }
}

/// Scratch space for [`smooth`].
pub struct SmootherWork {
    residual: Vec<f64>,
    correction: Vec<f64>,
}

impl SmootherWork {
    pub fn new(patches: &PatchSet) -> Self {
        SmootherWork {
            residual: vec![0.0; patches.max_subspace],
            correction: vec![0.0; patches.max_subspace],
        }
    }
}

/// Multiplicative subspace correction: `stages` sweeps, the first over all
/// patches and the others over boundary patches only.
pub fn smooth(
    op: &CellOperator,
    x: &mut [f64],
    b: &[f64],
    patches: &PatchSet,
    stages: usize,
    order: SweepOrder,
    work: &mut SmootherWork,
) {
    for stage in 0..stages {
        smooth_stage(op, x, b, patches, stage, order, work);
    }
}

/// A single stage of [`smooth`]: every patch for stage 0, boundary patches
/// otherwise.
pub fn smooth_stage(
    op: &CellOperator,
    x: &mut [f64],
    b: &[f64],
    patches: &PatchSet,
    stage: usize,
    order: SweepOrder,
    work: &mut SmootherWork,
) {
    let indices = patches.stage_indices(stage);
    match order {
        SweepOrder::Forward => {
            for i in indices {
                correct(op, x, b, patches, i, work);
            }
        }
        SweepOrder::Reverse => {
            for i in indices.rev() {
                correct(op, x, b, patches, i, work);
            }
        }
    }
}

#[inline]
fn correct(
    op: &CellOperator,
    x: &mut [f64],
    b: &[f64],
    patches: &PatchSet,
    i: usize,
    work: &mut SmootherWork,
) {
    let dofs = &patches.dofs[patches.dof_ptr[i]..patches.dof_ptr[i + 1]];
    let n = dofs.len();
    let r = &mut work.residual[..n];
    for (ri, &d) in r.iter_mut().zip(dofs) {
        let d = d as usize;
        *ri = b[d] - op.row_dot(d, x);
    }
    let c = &mut work.correction[..n];
    patches.factors[patches.factor_id[i] as usize].solve_with(r, c);
    for (&ci, &d) in c.iter().zip(dofs) {
        x[d as usize] += ci;
    }
}

/// Share of patches that touch the surrogate boundary.
pub fn boundary_patch_fraction(patches: &PatchSet) -> f64 {
    if patches.is_empty() {
        0.0
    } else {
        patches.n_boundary() as f64 / patches.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble, AssemblyOptions};
    use crate::geometry::{Circle, Point};
    use crate::linalg::LinearOperator;
    use crate::mesh::classify_cells;

    fn one(_: Point) -> f64 {
        1.0
    }

    fn zero(_: Point) -> f64 {
        0.0
    }

    fn system(m: &MeshLevel, p: usize) -> (DofHandler, crate::assembly::SbmSystem) {
        let dh = DofHandler::new(m, p);
        let sys = assemble(m, &dh, &Circle::unit(), &one, &zero, &AssemblyOptions::default()).unwrap();
        (dh, sys)
    }

    fn disk(level: usize, lambda: f64) -> MeshLevel {
        classify_cells(level, &Circle::unit(), lambda, Execution::Sequential).unwrap()
    }

    #[test]
    fn interior_subspace_sizes() {
        for p in 1..=3 {
            let m = MeshLevel::from_flags(4, vec![true; 16]);
            let dh = DofHandler::new(&m, p);
            let b = patch_at(&m, &dh, 2 * 5 + 2, 3).unwrap();
            assert_eq!(b.dofs.len(), (2 * p - 1) * (2 * p - 1));
            if p == 1 {
                assert_eq!(b.dofs, vec![(2 * dh.nodes_per_dim + 2) as u32]);
            }
        }
    }

    #[test]
    fn full_residual_condition_holds() {
        let m = disk(3, 0.25);
        let (dh, sys) = system(&m, 2);
        let (set, _) = build_patches(&m, &dh, &sys.operator, 3, Execution::Sequential).unwrap();
        let mut support = [(0, 0); 4];
        for patch in set.iter() {
            assert!(patch.cells.len() >= 3);
            for &d in patch.subspace_dofs {
                let cnt = dh.dof_cells(d as usize, &mut support);
                for &(c, _) in &support[..cnt] {
                    if m.active[c] {
                        assert!(patch.cells.contains(&(c as u32)));
                    }
                }
            }
        }
    }

    #[test]
    fn zero_residual_leaves_iterate() {
        let m = disk(3, 0.0);
        let (dh, sys) = system(&m, 1);
        let (set, _) = build_patches(&m, &dh, &sys.operator, 3, Execution::Sequential).unwrap();
        let x0: Vec<f64> = (0..dh.n_dofs()).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut b = vec![0.0; dh.n_dofs()];
        sys.operator.apply(&x0, &mut b);
        let mut x = x0.clone();
        let mut work = SmootherWork::new(&set);
        smooth(&sys.operator, &mut x, &b, &set, 2, SweepOrder::Forward, &mut work);
        for (a, c) in x.iter().zip(&x0) {
            assert!((a - c).abs() < 1e-12);
        }
    }

    #[test]
    fn single_patch_solves_exactly() {
        // a 2x2 active block: with shyness 4 only the center patch forms and
        // its subspace is every active DoF
        let mut flags = vec![false; 16];
        for c in [5, 6, 9, 10] {
            flags[c] = true;
        }
        let m = MeshLevel::from_flags(4, flags);
        let (dh, sys) = system(&m, 2);
        let (set, report) = build_patches(&m, &dh, &sys.operator, 4, Execution::Sequential).unwrap();
        assert_eq!(set.len(), 1);
        assert!(report.is_complete());
        assert_eq!(set.get(0).subspace_dofs.len(), dh.n_active_dofs());
        let mut x = vec![0.0; dh.n_dofs()];
        let mut work = SmootherWork::new(&set);
        smooth(&sys.operator, &mut x, &sys.rhs, &set, 1, SweepOrder::Forward, &mut work);
        let mut ax = vec![0.0; dh.n_dofs()];
        sys.operator.apply(&x, &mut ax);
        for d in 0..dh.n_dofs() {
            assert!((ax[d] - sys.rhs[d]).abs() < 1e-10);
        }
    }

    #[test]
    fn local_solves_are_exact() {
        let m = disk(3, 0.0);
        let (dh, sys) = system(&m, 2);
        let (set, _) = build_patches(&m, &dh, &sys.operator, 3, Execution::Sequential).unwrap();
        let mut x = vec![0.0; dh.n_dofs()];
        let mut work = SmootherWork::new(&set);
        for i in (0..set.len()).step_by(7) {
            correct(&sys.operator, &mut x, &sys.rhs, &set, i, &mut work);
            for &d in set.get(i).subspace_dofs {
                let r = sys.rhs[d as usize] - sys.operator.row_dot(d as usize, &x);
                assert!(r.abs() < 1e-10, "patch {i}");
            }
        }
    }

    #[test]
    fn one_stage_reduces_residual() {
        for level in 2..=4 {
            let m = disk(level, 0.0);
            let (dh, sys) = system(&m, 2);
            let (set, _) = build_patches(&m, &dh, &sys.operator, 3, Execution::Sequential).unwrap();
            let b: Vec<f64> = (0..dh.n_dofs())
                .map(|d| if dh.dof_is_active[d] { ((d * 2654435761) % 1000) as f64 / 500.0 - 1.0 } else { 0.0 })
                .collect();
            let mut x = vec![0.0; dh.n_dofs()];
            let mut work = SmootherWork::new(&set);
            smooth(&sys.operator, &mut x, &b, &set, 1, SweepOrder::Forward, &mut work);
            let mut ax = vec![0.0; dh.n_dofs()];
            sys.operator.apply(&x, &mut ax);
            let r: f64 = ax.iter().zip(&b).map(|(a, c)| (a - c).powi(2)).sum::<f64>().sqrt();
            let b0: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(r < (1.0 - 1e-6) * b0);
        }
    }

    #[test]
    fn boundary_fraction_examples() {
        let mut flags = vec![false; 16];
        flags[5] = true;
        let single = MeshLevel::from_flags(4, flags);
        let (dh, sys) = system(&single, 1);
        let (set, _) = build_patches(&single, &dh, &sys.operator, 1, Execution::Sequential).unwrap();
        assert!(!set.is_empty());
        assert_eq!(boundary_patch_fraction(&set), 1.0);
        assert_eq!(boundary_patch_fraction(&PatchSet::default()), 0.0);

        let frac = |level| {
            let m = disk(level, 0.0);
            let (dh, sys) = system(&m, 1);
            let (set, _) = build_patches(&m, &dh, &sys.operator, 3, Execution::Sequential).unwrap();
            boundary_patch_fraction(&set)
        };
        assert!(frac(6) < frac(3));
    }

    #[test]
    fn all_interior_cells_have_no_boundary_patches() {
        // a circle containing the whole box still has the box faces as surrogate
        // boundary; the interior vertex patches away from them are non-boundary
        let m = MeshLevel::from_flags(6, vec![true; 36]);
        let dh = DofHandler::new(&m, 1);
        let sys = assemble(&m, &dh, &Circle::new([0.0, 0.0], 5.0), &one, &zero, &AssemblyOptions::default())
            .unwrap();
        let (set, _) = build_patches(&m, &dh, &sys.operator, 4, Execution::Sequential).unwrap();
        let center = set.iter().find(|p| p.center_vertex == 3 * 7 + 3).unwrap();
        assert!(!center.is_boundary);
        assert_eq!(set.n_factors(), 1 + set.n_boundary());
    }

    #[test]
    fn shyness_three_covers_disk() {
        for level in 2..=4 {
            for lambda in [0.0, 0.25, 0.5] {
                let m = disk(level, lambda);
                for p in 1..=3 {
                    let dh = DofHandler::new(&m, p);
                    assert!(coverage_report(&m, &dh, 3, Execution::Sequential).is_complete());
                }
            }
        }
    }

    #[test]
    fn coverage_csv_and_parallel_build() {
        let m = disk(3, 0.0);
        let (dh, sys) = system(&m, 2);
        let (a, ra) = build_patches(&m, &dh, &sys.operator, 3, Execution::Sequential).unwrap();
        let (b, rb) = build_patches(&m, &dh, &sys.operator, 3, Execution::Parallel).unwrap();
        assert_eq!(a.dofs, b.dofs);
        assert_eq!(a.factors, b.factors);
        assert_eq!(ra, rb);
        assert_eq!(ra, coverage_report(&m, &dh, 3, Execution::Parallel));
        let mut buf = Vec::new();
        coverage_report(&m, &dh, 4, Execution::Sequential).write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("vertex,active_cells,patch_formed,uncovered_dofs\n"));
    }
}
