//! Uniform Cartesian background meshes over `[-1.01, 1.01]^2`, per-level
//! active-cell classification and surrogate-boundary extraction.
//!
//! Cells and vertices are numbered lexicographically with x running fastest:
//! cell `(i, j)` has id `j * n + i`, vertex `(i, j)` has id `j * (n + 1) + i`.

use std::io::Write;

use crate::error::Result;
use crate::exec::Execution;
use crate::geometry::{classify_box, volume_fraction_inside, BoxSide, CellBox, LevelSet, Point};

/// Half-width of the background box.
pub const BOX_HALF_WIDTH: f64 = 1.01;
/// Cells per direction on level 0.
pub const COARSE_CELLS: usize = 4;
/// Slack on the volume-fraction threshold comparison.
pub const LAMBDA_EPS: f64 = 1e-10;

/// Face numbering: 0 = x-, 1 = x+, 2 = y-, 3 = y+.
pub const FACE_NORMALS: [Point; 4] = [[-1.0, 0.0], [1.0, 0.0], [0.0, -1.0], [0.0, 1.0]];

/// A face of an active cell bordering an inactive cell or the box boundary.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurrogateFace {
    pub active_cell: usize,
    pub face_index: usize,
    pub outward_normal: Point,
}

#[derive(Clone, Debug)]
pub struct MeshLevel {
    /// Refinement level, `None` for hand-built grids.
    pub level: Option<usize>,
    pub cells_per_dim: usize,
    pub h: f64,
    pub active: Vec<bool>,
    pub fraction_inside: Vec<f64>,
    pub surrogate_faces: Vec<SurrogateFace>,
    /// Per cell: number of surrogate faces it owns.
    pub face_count: Vec<u8>,
}

pub fn cells_per_dim(level: usize) -> usize {
    COARSE_CELLS << level
}

impl MeshLevel {
    /// Builds a mesh from explicit activity flags (fractions are set to 1/0).
    pub fn from_flags(cells_per_dim: usize, active: Vec<bool>) -> Self {
        assert_eq!(active.len(), cells_per_dim * cells_per_dim);
        let fraction_inside = active.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect();
        let mut mesh = MeshLevel {
            level: None,
            cells_per_dim,
            h: 2.0 * BOX_HALF_WIDTH / cells_per_dim as f64,
            active,
            fraction_inside,
            surrogate_faces: Vec::new(),
            face_count: Vec::new(),
        };
        mesh.refresh_boundary();
        mesh
    }

    fn refresh_boundary(&mut self) {
        self.surrogate_faces = extract_surrogate_boundary(self);
        self.face_count = vec![0; self.n_cells()];
        for f in &self.surrogate_faces {
            self.face_count[f.active_cell] += 1;
        }
    }

    pub fn n_cells(&self) -> usize {
        self.cells_per_dim * self.cells_per_dim
    }

    pub fn n_vertices(&self) -> usize {
        (self.cells_per_dim + 1) * (self.cells_per_dim + 1)
    }

    pub fn n_active(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn cell_ij(&self, cell: usize) -> (usize, usize) {
        (cell % self.cells_per_dim, cell / self.cells_per_dim)
    }

    pub fn cell_id(&self, i: usize, j: usize) -> usize {
        j * self.cells_per_dim + i
    }

    /// Coordinate of grid line `i`; exactly antisymmetric about the origin.
    pub fn coord(&self, i: usize) -> f64 {
        (2.0 * i as f64 - self.cells_per_dim as f64) * (0.5 * self.h)
    }

    pub fn cell_box(&self, cell: usize) -> CellBox {
        let (i, j) = self.cell_ij(cell);
        CellBox::new(
            [self.coord(i), self.coord(j)],
            [self.coord(i + 1), self.coord(j + 1)],
        )
    }

    pub fn cell_origin(&self, cell: usize) -> Point {
        let (i, j) = self.cell_ij(cell);
        [self.coord(i), self.coord(j)]
    }

    pub fn is_boundary_cell(&self, cell: usize) -> bool {
        self.face_count[cell] > 0
    }

    /// Active cells around vertex `(vi, vj)` in ascending id order.
    pub fn vertex_cells(&self, vi: usize, vj: usize) -> impl Iterator<Item = usize> + '_ {
        let n = self.cells_per_dim;
        let js = vj.saturating_sub(1)..(vj + 1).min(n);
        js.flat_map(move |j| {
            let is = vi.saturating_sub(1)..(vi + 1).min(n);
            is.map(move |i| j * n + i)
        })
        .filter(move |&c| self.active[c])
    }

    /// Writes `i,j,fraction_inside,active` rows.
    pub fn write_classification_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["i", "j", "fraction_inside", "active"])?;
        for c in 0..self.n_cells() {
            let (i, j) = self.cell_ij(c);
            w.write_record([
                i.to_string(),
                j.to_string(),
                format!("{:.12}", self.fraction_inside[c]),
                (self.active[c] as u8).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Classifies every cell of level `level`: active iff its outside volume
/// fraction is at most `lambda` (plus [`LAMBDA_EPS`]).
pub fn classify_cells(
    level: usize,
    geom: &dyn LevelSet,
    lambda: f64,
    exec: Execution,
) -> Result<MeshLevel> {
    let n = cells_per_dim(level);
    let mut mesh = MeshLevel::from_flags(n, vec![false; n * n]);
    mesh.level = Some(level);
    let fractions = exec.map_collect(n * n, |c| {
        let cell = mesh.cell_box(c);
        match classify_box(&cell, geom)? {
            BoxSide::Inside => Ok(1.0),
            BoxSide::Outside => Ok(0.0),
            BoxSide::Undecided => volume_fraction_inside(&cell, geom),
        }
    });
    let fractions: Result<Vec<f64>> = fractions.into_iter().collect();
    mesh.fraction_inside = fractions?;
    mesh.active = mesh
        .fraction_inside
        .iter()
        .map(|&f| 1.0 - f <= lambda + LAMBDA_EPS)
        .collect();
    mesh.refresh_boundary();
    Ok(mesh)
}

/// Every face of an active cell whose neighbor is inactive or outside the box,
/// ordered by cell id then face index.
pub fn extract_surrogate_boundary(m: &MeshLevel) -> Vec<SurrogateFace> {
    let n = m.cells_per_dim;
    let mut faces = Vec::new();
    for c in 0..m.n_cells() {
        if !m.active[c] {
            continue;
        }
        let (i, j) = m.cell_ij(c);
        let neighbors = [
            (i > 0).then(|| c - 1),
            (i + 1 < n).then(|| c + 1),
            (j > 0).then(|| c - n),
            (j + 1 < n).then(|| c + n),
        ];
        for (f, nb) in neighbors.iter().enumerate() {
            let open = match nb {
                Some(nc) => !m.active[*nc],
                None => true,
            };
            if open {
                faces.push(SurrogateFace {
                    active_cell: c,
                    face_index: f,
                    outward_normal: FACE_NORMALS[f],
                });
            }
        }
    }
    faces
}

/// Number of active cells touching vertex `v`.
pub fn vertex_active_cell_count(m: &MeshLevel, v: usize) -> usize {
    let nv = m.cells_per_dim + 1;
    m.vertex_cells(v % nv, v / nv).count()
}
