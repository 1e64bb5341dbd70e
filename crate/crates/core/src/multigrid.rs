//! Level hierarchies (mesh coarsening at fixed degree, or degree coarsening on
//! the finest mesh), transfer operators over all background DoFs, and the
//! V-cycle used as the GMRES preconditioner.
//!
//! Both transfers are tensor products of a 1D operator, because the background
//! DoF grid is a tensor grid and inactive DoFs are kept.

use crate::assembly::{assemble, AssemblyOptions, SbmSystem};
use crate::error::{Result, SbmError};
use crate::exec::Execution;
use crate::fem::{gauss_lobatto, DofHandler, LagrangeBasis1d};
use crate::geometry::{LevelSet, Point};
use crate::linalg::{coarse_factorize, CoarseFactor, CsrMatrix, LinearOperator, TripletBuilder, DEFAULT_DENSE_CAP};
use crate::mesh::{cells_per_dim, classify_cells, MeshLevel};
use crate::smoother::{build_patches, smooth, CoverageReport, PatchSet, SmootherConfig, SmootherWork, SweepOrder};

/// Writes shared by several cells must agree to this tolerance.
const WRITE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MgMode {
    /// Geometric coarsening of the mesh at fixed degree.
    H,
    /// Degree coarsening `p, p-1, ..., 1` on the finest mesh.
    P,
}

impl MgMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MgMode::H => "h",
            MgMode::P => "p",
        }
    }
}

/// Prolongation `P = P1 ⊗ P1` between square tensor grids of DoFs.
#[derive(Clone, Debug)]
pub struct TensorProlongation {
    fine_1d: CsrMatrix,
    fine_1d_t: CsrMatrix,
    exec: Execution,
}

struct WriteOnce {
    rows: usize,
    cols: usize,
    values: Vec<Option<f64>>,
}

impl WriteOnce {
    fn new(rows: usize, cols: usize) -> Self {
        WriteOnce {
            rows,
            cols,
            values: vec![None; rows * cols],
        }
    }

    fn write(&mut self, r: usize, c: usize, v: f64) -> Result<()> {
        let slot = &mut self.values[r * self.cols + c];
        match *slot {
            Some(old) if (old - v).abs() > WRITE_TOL => Err(SbmError::InconsistentTransfer {
                row: r,
                col: c,
                first: old,
                second: v,
            }),
            Some(_) => Ok(()),
            None => {
                *slot = Some(v);
                Ok(())
            }
        }
    }

    fn finish(self) -> CsrMatrix {
        let mut t = TripletBuilder::new(self.rows, self.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                if let Some(v) = self.values[r * self.cols + c] {
                    if v != 0.0 {
                        t.push(r, c, v);
                    }
                }
            }
        }
        t.build()
    }
}

impl TensorProlongation {
    fn from_1d(fine_1d: CsrMatrix, exec: Execution) -> Self {
        let fine_1d_t = fine_1d.transpose();
        TensorProlongation {
            fine_1d,
            fine_1d_t,
            exec,
        }
    }

    /// Embedding of degree-`p` functions on `n_coarse` cells per direction into
    /// the uniformly refined grid.
    pub fn h(n_coarse: usize, p: usize, exec: Execution) -> Result<Self> {
        let basis = LagrangeBasis1d::new(gauss_lobatto(p));
        let nodes = basis.nodes.clone();
        let mut w = WriteOnce::new(2 * n_coarse * p + 1, n_coarse * p + 1);
        let mut vals = vec![0.0; p + 1];
        for c in 0..n_coarse {
            for child in 0..2 {
                for (a, &t) in nodes.iter().enumerate() {
                    basis.values_into(0.5 * (child as f64 + t), &mut vals);
                    for (b, &v) in vals.iter().enumerate() {
                        w.write((2 * c + child) * p + a, c * p + b, v)?;
                    }
                }
            }
        }
        Ok(Self::from_1d(w.finish(), exec))
    }

    /// Embedding of degree `p_coarse` into degree `p_coarse + 1` on the same grid.
    pub fn p(n_cells: usize, p_coarse: usize, exec: Execution) -> Result<Self> {
        let pf = p_coarse + 1;
        let coarse = LagrangeBasis1d::new(gauss_lobatto(p_coarse));
        let fine_nodes = gauss_lobatto(pf);
        let mut w = WriteOnce::new(n_cells * pf + 1, n_cells * p_coarse + 1);
        let mut vals = vec![0.0; p_coarse + 1];
        for c in 0..n_cells {
            for (a, &t) in fine_nodes.iter().enumerate() {
                coarse.values_into(t, &mut vals);
                for (b, &v) in vals.iter().enumerate() {
                    w.write(c * pf + a, c * p_coarse + b, v)?;
                }
            }
        }
        Ok(Self::from_1d(w.finish(), exec))
    }

    pub fn identity(nodes_per_dim: usize, exec: Execution) -> Self {
        Self::from_1d(CsrMatrix::identity(nodes_per_dim), exec)
    }

    pub fn fine_nodes(&self) -> usize {
        self.fine_1d.n_rows()
    }

    pub fn coarse_nodes(&self) -> usize {
        self.fine_1d.n_cols()
    }

    /// The 1D factor.
    pub fn factor_1d(&self) -> &CsrMatrix {
        &self.fine_1d
    }

    /// Explicit 2D matrix (fine DoFs x coarse DoFs).
    pub fn to_csr(&self) -> CsrMatrix {
        let (nf, nc) = (self.fine_nodes(), self.coarse_nodes());
        let mut t = TripletBuilder::new(nf * nf, nc * nc);
        for jf in 0..nf {
            let (cy, vy) = self.fine_1d.row(jf);
            for i_f in 0..nf {
                let (cx, vx) = self.fine_1d.row(i_f);
                for (&jc, &wy) in cy.iter().zip(vy) {
                    for (&ic, &wx) in cx.iter().zip(vx) {
                        t.push(jf * nf + i_f, jc as usize * nc + ic as usize, wy * wx);
                    }
                }
            }
        }
        t.build()
    }

    /// `fine = P coarse`.
    pub fn prolongate(&self, coarse: &[f64], fine: &mut [f64]) {
        tensor_apply(&self.fine_1d, coarse, fine, self.exec);
    }

    /// `coarse = P^T fine`.
    pub fn restrict(&self, fine: &[f64], coarse: &mut [f64]) {
        tensor_apply(&self.fine_1d_t, fine, coarse, self.exec);
    }
}

/// `out = (M ⊗ M) x` on lexicographic grids, x fastest.
fn tensor_apply(m: &CsrMatrix, x: &[f64], out: &mut [f64], exec: Execution) {
    let (no, ni) = (m.n_rows(), m.n_cols());
    assert_eq!(x.len(), ni * ni);
    assert_eq!(out.len(), no * no);
    // along x: tmp[j][I] for input rows j
    let mut tmp = vec![0.0; ni * no];
    exec.fill_chunks(&mut tmp, no, |start, row| {
        let src = &x[(start / no) * ni..][..ni];
        for (i, t) in row.iter_mut().enumerate() {
            let (cols, vals) = m.row(i);
            *t = cols.iter().zip(vals).fold(0.0, |s, (&c, &v)| s + v * src[c as usize]);
        }
    });
    // along y
    exec.fill_chunks(out, no, |start, row| {
        let (cols, vals) = m.row(start / no);
        row.iter_mut().for_each(|v| *v = 0.0);
        for (&c, &v) in cols.iter().zip(vals) {
            let src = &tmp[c as usize * no..][..no];
            for (o, s) in row.iter_mut().zip(src) {
                *o += v * s;
            }
        }
    });
}

/// One level of the hierarchy.
#[derive(Clone, Debug)]
pub struct MgLevel {
    pub mesh: MeshLevel,
    pub dofs: DofHandler,
    pub system: SbmSystem,
    /// Empty on the coarsest level, which is solved directly.
    pub patches: PatchSet,
    pub coverage: CoverageReport,
}

#[derive(Clone, Copy, Debug)]
pub struct HierarchyConfig {
    pub mode: MgMode,
    pub degree: usize,
    /// Refinement level of the finest mesh.
    pub refinements: usize,
    pub lambda: f64,
    pub smoother: SmootherConfig,
    pub assembly: AssemblyOptions,
    pub exec: Execution,
    /// Largest coarse system factorized densely; larger ones use banded LU.
    pub dense_cap: usize,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        HierarchyConfig {
            mode: MgMode::H,
            degree: 1,
            refinements: 3,
            lambda: 0.0,
            smoother: SmootherConfig::default(),
            assembly: AssemblyOptions::default(),
            exec: Execution::default(),
            dense_cap: DEFAULT_DENSE_CAP,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MgHierarchy {
    pub mode: MgMode,
    /// Coarsest first.
    pub levels: Vec<MgLevel>,
    /// `prolongations[l]` maps level `l` to level `l + 1`.
    pub prolongations: Vec<TensorProlongation>,
    pub coarse: CoarseFactor,
    pub smoother: SmootherConfig,
}

type Source<'a> = &'a (dyn Fn(Point) -> f64 + Sync);

impl MgHierarchy {
    /// Classifies, assembles and builds patches on every level.
    pub fn build(cfg: &HierarchyConfig, geom: &dyn LevelSet, f: Source<'_>, g: Source<'_>) -> Result<Self> {
        if cfg.degree == 0 || cfg.smoother.shyness == 0 || cfg.smoother.steps == 0 {
            return Err(SbmError::InvalidConfig(
                "degree, shyness and smoothing steps must be positive".into(),
            ));
        }
        let exec = cfg.exec;
        let mut levels = Vec::new();
        let mut prolongations = Vec::new();
        match cfg.mode {
            MgMode::H => {
                for l in 0..=cfg.refinements {
                    let mesh = classify_cells(l, geom, cfg.lambda, exec)?;
                    levels.push(Self::make_level(mesh, cfg.degree, l > 0, cfg, geom, f, g)?);
                    if l > 0 {
                        prolongations.push(TensorProlongation::h(cells_per_dim(l - 1), cfg.degree, exec)?);
                    }
                }
            }
            MgMode::P => {
                let mesh = classify_cells(cfg.refinements, geom, cfg.lambda, exec)?;
                for p in 1..=cfg.degree {
                    levels.push(Self::make_level(mesh.clone(), p, p > 1, cfg, geom, f, g)?);
                    if p > 1 {
                        prolongations.push(TensorProlongation::p(mesh.cells_per_dim, p - 1, exec)?);
                    }
                }
            }
        }
        let coarse = coarse_factorize(&levels[0].system.operator.to_csr(), cfg.dense_cap)?;
        Ok(MgHierarchy {
            mode: cfg.mode,
            levels,
            prolongations,
            coarse,
            smoother: cfg.smoother,
        })
    }

    fn make_level(
        mesh: MeshLevel,
        degree: usize,
        with_patches: bool,
        cfg: &HierarchyConfig,
        geom: &dyn LevelSet,
        f: Source<'_>,
        g: Source<'_>,
    ) -> Result<MgLevel> {
        let dofs = DofHandler::new(&mesh, degree);
        let system = assemble(&mesh, &dofs, geom, f, g, &cfg.assembly)?;
        let (patches, coverage) = if with_patches {
            build_patches(&mesh, &dofs, &system.operator, cfg.smoother.shyness, cfg.exec)?
        } else {
            (PatchSet::default(), CoverageReport::default())
        };
        if !coverage.is_complete() {
            log::warn!(
                "{} active DoFs not covered by any patch (degree {degree}, {} cells per direction)",
                coverage.uncovered.len(),
                mesh.cells_per_dim
            );
        }
        Ok(MgLevel {
            mesh,
            dofs,
            system,
            patches,
            coverage,
        })
    }

    /// Assembles a hierarchy from prebuilt parts; the coarse factor is computed
    /// from `levels[0]`.
    pub fn from_parts(
        mode: MgMode,
        levels: Vec<MgLevel>,
        prolongations: Vec<TensorProlongation>,
        smoother: SmootherConfig,
    ) -> Result<Self> {
        assert_eq!(prolongations.len() + 1, levels.len());
        let coarse = coarse_factorize(&levels[0].system.operator.to_csr(), DEFAULT_DENSE_CAP)?;
        Ok(MgHierarchy {
            mode,
            levels,
            prolongations,
            coarse,
            smoother,
        })
    }

    pub fn finest(&self) -> &MgLevel {
        self.levels.last().expect("nonempty hierarchy")
    }

    /// One V-cycle on `level` with zero initial guess.
    pub fn v_cycle(&self, level: usize, rhs: &[f64]) -> Vec<f64> {
        if level == 0 {
            let mut x = rhs.to_vec();
            self.coarse.solve_in_place(&mut x);
            return x;
        }
        let lv = &self.levels[level];
        let op = &lv.system.operator;
        let s = self.smoother.steps;
        let mut work = SmootherWork::new(&lv.patches);
        let mut x = vec![0.0; rhs.len()];
        smooth(op, &mut x, rhs, &lv.patches, s, SweepOrder::Forward, &mut work);

        let mut r = vec![0.0; rhs.len()];
        op.apply(&x, &mut r);
        for (ri, bi) in r.iter_mut().zip(rhs) {
            *ri = bi - *ri;
        }
        let transfer = &self.prolongations[level - 1];
        let mut rc = vec![0.0; self.levels[level - 1].dofs.n_dofs()];
        transfer.restrict(&r, &mut rc);
        let xc = self.v_cycle(level - 1, &rc);
        transfer.prolongate(&xc, &mut r);
        for (xi, ci) in x.iter_mut().zip(&r) {
            *xi += ci;
        }

        smooth(op, &mut x, rhs, &lv.patches, s, SweepOrder::Reverse, &mut work);
        x
    }
}

impl LinearOperator for MgHierarchy {
    fn dim(&self) -> usize {
        self.finest().dofs.n_dofs()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let top = self.levels.len() - 1;
        let v = self.v_cycle(top, x);
        let active = &self.finest().dofs.dof_is_active;
        for ((yi, vi), &a) in y.iter_mut().zip(v).zip(active) {
            *yi = if a { vi } else { 0.0 };
        }
    }
}
