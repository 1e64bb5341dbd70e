//! Tensor-product Lagrange elements `Q_p` on Gauss-Lobatto nodes, Gauss
//! quadrature and the global numbering of all background DoFs.

use crate::geometry::{CellBox, Point};
use crate::mesh::MeshLevel;

/// Gauss-Legendre rule with `q` points on `[0, 1]`; weights sum to one.
pub fn gauss_legendre(q: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(q >= 1);
    let mut pts = vec![0.0; q];
    let mut wts = vec![0.0; q];
    for k in 0..q {
        // Chebyshev initial guess, Newton on P_q
        let mut x = -(std::f64::consts::PI * (k as f64 + 0.75) / (q as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_and_derivative(q, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_and_derivative(q, x);
        if d != 0.0 {
            dp = d;
        }
        pts[k] = 0.5 * (x + 1.0);
        wts[k] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    (pts, wts)
}

fn legendre_and_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss-Lobatto nodes (`p + 1` of them) on `[0, 1]`, ascending.
pub fn gauss_lobatto(p: usize) -> Vec<f64> {
    assert!(p >= 1);
    let mut nodes = vec![0.0; p + 1];
    nodes[p] = 1.0;
    // interior nodes: roots of P'_p, found by Newton on (1 - x^2) P'_p
    for k in 1..p {
        let mut x = -(std::f64::consts::PI * k as f64 / p as f64).cos();
        for _ in 0..100 {
            let (pn, dn) = legendre_and_derivative(p, x);
            // d/dx[(1-x^2)P'] = -p(p+1) P
            let f = (1.0 - x * x) * dn;
            let df = -((p * (p + 1)) as f64) * pn;
            let dx = f / df;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[k] = 0.5 * (x + 1.0);
    }
    // enforce exact symmetry
    for k in 0..=p / 2 {
        let a = 0.5 * (nodes[k] + 1.0 - nodes[p - k]);
        nodes[k] = a;
        nodes[p - k] = 1.0 - a;
    }
    nodes
}

/// One-dimensional Lagrange basis on a node set.
#[derive(Clone, Debug)]
pub struct LagrangeBasis1d {
    pub nodes: Vec<f64>,
    denom: Vec<f64>,
}

impl LagrangeBasis1d {
    pub fn new(nodes: Vec<f64>) -> Self {
        let denom = (0..nodes.len())
            .map(|i| {
                (0..nodes.len())
                    .filter(|&j| j != i)
                    .map(|j| nodes[i] - nodes[j])
                    .product()
            })
            .collect();
        LagrangeBasis1d { nodes, denom }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn values_into(&self, t: f64, out: &mut [f64]) {
        let n = self.nodes.len();
        for i in 0..n {
            let mut v = 1.0;
            for j in 0..n {
                if j != i {
                    v *= t - self.nodes[j];
                }
            }
            out[i] = v / self.denom[i];
        }
    }

    pub fn derivatives_into(&self, t: f64, out: &mut [f64]) {
        let n = self.nodes.len();
        for i in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                if k == i {
                    continue;
                }
                let mut v = 1.0;
                for j in 0..n {
                    if j != i && j != k {
                        v *= t - self.nodes[j];
                    }
                }
                s += v;
            }
            out[i] = s / self.denom[i];
        }
    }

    pub fn values(&self, t: f64) -> Vec<f64> {
        let mut v = vec![0.0; self.len()];
        self.values_into(t, &mut v);
        v
    }

    pub fn derivatives(&self, t: f64) -> Vec<f64> {
        let mut v = vec![0.0; self.len()];
        self.derivatives_into(t, &mut v);
        v
    }
}

/// `Q_p` element on the unit square; local DoF `a + (p + 1) * b` sits at
/// node `(t_a, t_b)`.
#[derive(Clone, Debug)]
pub struct Element {
    pub degree: usize,
    pub basis: LagrangeBasis1d,
}

impl Element {
    pub fn new(degree: usize) -> Self {
        Element {
            degree,
            basis: LagrangeBasis1d::new(gauss_lobatto(degree)),
        }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.basis.nodes
    }

    pub fn dofs_per_cell(&self) -> usize {
        (self.degree + 1) * (self.degree + 1)
    }

    /// Values of all shape functions at `xi`; `xi` may lie outside the cell.
    pub fn shape_values(&self, xi: Point) -> Vec<f64> {
        let mut out = vec![0.0; self.dofs_per_cell()];
        self.shape_values_into(xi, &mut out);
        out
    }

    pub fn shape_values_into(&self, xi: Point, out: &mut [f64]) {
        let m = self.degree + 1;
        let mut vx = [0.0; 16];
        let mut vy = [0.0; 16];
        self.basis.values_into(xi[0], &mut vx[..m]);
        self.basis.values_into(xi[1], &mut vy[..m]);
        for b in 0..m {
            for a in 0..m {
                out[a + m * b] = vx[a] * vy[b];
            }
        }
    }

    /// Reference-coordinate gradients of all shape functions at `xi`.
    pub fn shape_gradients(&self, xi: Point) -> Vec<Point> {
        let mut out = vec![[0.0; 2]; self.dofs_per_cell()];
        self.shape_gradients_into(xi, &mut out);
        out
    }

    pub fn shape_gradients_into(&self, xi: Point, out: &mut [Point]) {
        let m = self.degree + 1;
        let mut vx = [0.0; 16];
        let mut vy = [0.0; 16];
        let mut dx = [0.0; 16];
        let mut dy = [0.0; 16];
        self.basis.values_into(xi[0], &mut vx[..m]);
        self.basis.values_into(xi[1], &mut vy[..m]);
        self.basis.derivatives_into(xi[0], &mut dx[..m]);
        self.basis.derivatives_into(xi[1], &mut dy[..m]);
        for b in 0..m {
            for a in 0..m {
                out[a + m * b] = [dx[a] * vy[b], vx[a] * dy[b]];
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuadratureKind {
    Cell,
    Face,
}

/// Tensor Gauss-Legendre rule mapped onto a physical cell or face.
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    pub kind: QuadratureKind,
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    /// `q x q` rule on the unit square.
    pub fn reference_cell(q: usize) -> Self {
        let (x, w) = gauss_legendre(q);
        let mut points = Vec::with_capacity(q * q);
        let mut weights = Vec::with_capacity(q * q);
        for b in 0..q {
            for a in 0..q {
                points.push([x[a], x[b]]);
                weights.push(w[a] * w[b]);
            }
        }
        QuadratureRule {
            kind: QuadratureKind::Cell,
            points,
            weights,
        }
    }

    /// `q`-point rule on face `face` of the unit square, in reference coordinates.
    pub fn reference_face(q: usize, face: usize) -> Self {
        let (x, w) = gauss_legendre(q);
        let points = x
            .iter()
            .map(|&t| match face {
                0 => [0.0, t],
                1 => [1.0, t],
                2 => [t, 0.0],
                _ => [t, 1.0],
            })
            .collect();
        QuadratureRule {
            kind: QuadratureKind::Face,
            points,
            weights: w,
        }
    }

    pub fn cell(q: usize, cell: &CellBox) -> Self {
        let mut r = Self::reference_cell(q);
        r.map_to(cell);
        r
    }

    pub fn face(q: usize, cell: &CellBox, face: usize) -> Self {
        let mut r = Self::reference_face(q, face);
        r.map_to(cell);
        r
    }

    fn map_to(&mut self, cell: &CellBox) {
        let hx = cell.hi[0] - cell.lo[0];
        let hy = cell.hi[1] - cell.lo[1];
        for p in &mut self.points {
            *p = [cell.lo[0] + hx * p[0], cell.lo[1] + hy * p[1]];
        }
        let scale = match self.kind {
            QuadratureKind::Cell => hx * hy,
            QuadratureKind::Face => hx.max(hy),
        };
        for w in &mut self.weights {
            *w *= scale;
        }
    }
}

/// Quadrature points per direction used everywhere for degree `p`.
pub fn quadrature_order(p: usize) -> usize {
    p + 1
}

/// Reference coordinates of `x` in `cell`: `(x - origin) / h`, unclamped.
pub fn locate_reference_point(m: &MeshLevel, cell: usize, x: Point) -> Point {
    let o = m.cell_origin(cell);
    [(x[0] - o[0]) / m.h, (x[1] - o[1]) / m.h]
}

/// Physical point of reference coordinates `xi` in `cell`.
pub fn physical_point(m: &MeshLevel, cell: usize, xi: Point) -> Point {
    let o = m.cell_origin(cell);
    [o[0] + m.h * xi[0], o[1] + m.h * xi[1]]
}

/// Continuous numbering of every node of the background grid, active or not.
#[derive(Clone, Debug)]
pub struct DofHandler {
    pub degree: usize,
    pub cells_per_dim: usize,
    pub nodes_per_dim: usize,
    pub dof_is_active: Vec<bool>,
}

impl DofHandler {
    pub fn new(m: &MeshLevel, degree: usize) -> Self {
        let n = m.cells_per_dim;
        let nodes_per_dim = degree * n + 1;
        let mut dh = DofHandler {
            degree,
            cells_per_dim: n,
            nodes_per_dim,
            dof_is_active: vec![false; nodes_per_dim * nodes_per_dim],
        };
        let mut buf = vec![0usize; dh.dofs_per_cell()];
        for c in 0..m.n_cells() {
            if m.active[c] {
                dh.cell_dofs_into(c, &mut buf);
                for &d in &buf {
                    dh.dof_is_active[d] = true;
                }
            }
        }
        dh
    }

    pub fn n_dofs(&self) -> usize {
        self.nodes_per_dim * self.nodes_per_dim
    }

    pub fn n_active_dofs(&self) -> usize {
        self.dof_is_active.iter().filter(|&&a| a).count()
    }

    pub fn dofs_per_cell(&self) -> usize {
        (self.degree + 1) * (self.degree + 1)
    }

    /// Global indices of the DoFs of `cell` in local order.
    pub fn cell_dofs_into(&self, cell: usize, out: &mut [usize]) {
        let p = self.degree;
        let m = p + 1;
        let (ci, cj) = (cell % self.cells_per_dim, cell / self.cells_per_dim);
        for b in 0..m {
            let row = (p * cj + b) * self.nodes_per_dim + p * ci;
            for a in 0..m {
                out[a + m * b] = row + a;
            }
        }
    }

    pub fn cell_dofs(&self, cell: usize) -> Vec<usize> {
        let mut v = vec![0; self.dofs_per_cell()];
        self.cell_dofs_into(cell, &mut v);
        v
    }

    /// Grid coordinates `(I, J)` of a DoF.
    pub fn dof_ij(&self, dof: usize) -> (usize, usize) {
        (dof % self.nodes_per_dim, dof / self.nodes_per_dim)
    }

    /// Cells whose closure contains the DoF, paired with its local index,
    /// in ascending cell order. Returns the count written.
    pub fn dof_cells(&self, dof: usize, out: &mut [(usize, usize); 4]) -> usize {
        let p = self.degree;
        let n = self.cells_per_dim;
        let (gi, gj) = self.dof_ij(dof);
        let span = |g: usize| -> ([(usize, usize); 2], usize) {
            let c = g / p;
            let a = g - c * p;
            if a == 0 {
                let mut s = [(0, 0); 2];
                let mut k = 0;
                if c > 0 {
                    s[k] = (c - 1, p);
                    k += 1;
                }
                if c < n {
                    s[k] = (c, 0);
                    k += 1;
                }
                (s, k)
            } else {
                ([(c, a), (0, 0)], 1)
            }
        };
        let (xs, nx) = span(gi);
        let (ys, ny) = span(gj);
        let mut k = 0;
        for &(cj, b) in &ys[..ny] {
            for &(ci, a) in &xs[..nx] {
                out[k] = (cj * n + ci, a + (p + 1) * b);
                k += 1;
            }
        }
        k
    }

    /// Physical location of a DoF node.
    pub fn dof_position(&self, m: &MeshLevel, nodes: &[f64], dof: usize) -> Point {
        let p = self.degree;
        let (gi, gj) = self.dof_ij(dof);
        let pos = |g: usize| {
            let c = (g / p).min(self.cells_per_dim - 1);
            let a = g - c * p;
            m.coord(c) + m.h * nodes[a]
        };
        [pos(gi), pos(gj)]
    }

    /// Nodal interpolant of `u` over all background DoFs.
    pub fn interpolate(&self, m: &MeshLevel, u: impl Fn(Point) -> f64) -> Vec<f64> {
        let nodes = gauss_lobatto(self.degree);
        (0..self.n_dofs())
            .map(|d| u(self.dof_position(m, &nodes, d)))
            .collect()
    }
}

/// L2 norm of `u_h - exact` over the active cells.
pub fn l2_error(
    m: &MeshLevel,
    dh: &DofHandler,
    u_h: &[f64],
    exact: impl Fn(Point) -> f64,
) -> f64 {
    let elem = Element::new(dh.degree);
    let quad = QuadratureRule::reference_cell(quadrature_order(dh.degree));
    let k = elem.dofs_per_cell();
    let table: Vec<Vec<f64>> = quad.points.iter().map(|&x| elem.shape_values(x)).collect();
    let mut dofs = vec![0usize; k];
    let area = m.h * m.h;
    let mut sum = 0.0;
    for c in 0..m.n_cells() {
        if !m.active[c] {
            continue;
        }
        dh.cell_dofs_into(c, &mut dofs);
        for (qp, (xi, w)) in quad.points.iter().zip(&quad.weights).enumerate() {
            let uh: f64 = table[qp].iter().zip(&dofs).map(|(n, &d)| n * u_h[d]).sum();
            let e = uh - exact(physical_point(m, c, *xi));
            sum += w * area * e * e;
        }
    }
    sum.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lagrange_by_hand(nodes: &[f64], i: usize, t: f64) -> f64 {
        nodes
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &x)| (t - x) / (nodes[i] - x))
            .product()
    }

    #[test]
    fn quadrature_exactness() {
        for q in 1..8 {
            let (x, w) = gauss_legendre(q);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            for deg in 0..2 * q {
                let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                assert!((s - 1.0 / (deg as f64 + 1.0)).abs() < 1e-13, "q={q} deg={deg}");
            }
        }
    }

    #[test]
    fn lobatto_nodes_known_values() {
        assert_eq!(gauss_lobatto(1), vec![0.0, 1.0]);
        let n2 = gauss_lobatto(2);
        assert!((n2[1] - 0.5).abs() < 1e-15);
        let n3 = gauss_lobatto(3);
        let expected = 0.5 * (1.0 - 1.0 / 5f64.sqrt());
        assert!((n3[1] - expected).abs() < 1e-14);
        assert!((n3[2] - (1.0 - expected)).abs() < 1e-14);
    }

    #[test]
    fn kronecker_property() {
        for p in 1..=5 {
            let e = Element::new(p);
            let m = p + 1;
            for b in 0..m {
                for a in 0..m {
                    let v = e.shape_values([e.nodes()[a], e.nodes()[b]]);
                    for (k, val) in v.iter().enumerate() {
                        let expect = if k == a + m * b { 1.0 } else { 0.0 };
                        assert!((val - expect).abs() < 1e-13);
                    }
                }
            }
        }
    }

    #[test]
    fn linear_extrapolation_1d() {
        let b = LagrangeBasis1d::new(gauss_lobatto(1));
        let v = b.values(1.5);
        assert!((v[0] + 0.5).abs() < 1e-15 && (v[1] - 1.5).abs() < 1e-15);
        assert_eq!(b.derivatives(0.3), vec![-1.0, 1.0]);
    }

    #[test]
    fn quadratic_extrapolation_matches_symbolic() {
        // nodes 0, 1/2, 1: L0 = 2(t-1/2)(t-1), L1 = -4t(t-1), L2 = 2t(t-1/2)
        let b = LagrangeBasis1d::new(gauss_lobatto(2));
        let t = 1.2;
        let v = b.values(t);
        let expect = [
            2.0 * (t - 0.5) * (t - 1.0),
            -4.0 * t * (t - 1.0),
            2.0 * t * (t - 0.5),
        ];
        for k in 0..3 {
            assert!((v[k] - expect[k]).abs() < 1e-14);
            assert!((v[k] - lagrange_by_hand(&b.nodes, k, t)).abs() < 1e-14);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let e = Element::new(3);
        let xi = [0.3, 0.9];
        let g = e.shape_gradients(xi);
        let step = 1e-6;
        let vxp = e.shape_values([xi[0] + step, xi[1]]);
        let vxm = e.shape_values([xi[0] - step, xi[1]]);
        let vyp = e.shape_values([xi[0], xi[1] + step]);
        let vym = e.shape_values([xi[0], xi[1] - step]);
        for k in 0..16 {
            let fx = (vxp[k] - vxm[k]) / (2.0 * step);
            let fy = (vyp[k] - vym[k]) / (2.0 * step);
            assert!((g[k][0] - fx).abs() < 1e-6);
            assert!((g[k][1] - fy).abs() < 1e-6);
        }
        let sum = g.iter().fold([0.0, 0.0], |s, v| [s[0] + v[0], s[1] + v[1]]);
        assert!(sum[0].abs() < 1e-12 && sum[1].abs() < 1e-12);
    }

    #[test]
    fn locate_examples() {
        let m = MeshLevel::from_flags(4, vec![true; 16]);
        let c = 5;
        let o = m.cell_origin(c);
        let xi = locate_reference_point(&m, c, [o[0] + 0.5 * m.h, o[1] + 0.5 * m.h]);
        assert!((xi[0] - 0.5).abs() < 1e-14 && (xi[1] - 0.5).abs() < 1e-14);
        let xi = locate_reference_point(&m, c, [o[0] + 1.5 * m.h, o[1] + 0.5 * m.h]);
        assert!((xi[0] - 1.5).abs() < 1e-14 && (xi[1] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn dof_counts_and_continuity() {
        for level in 0..3 {
            let n = crate::mesh::cells_per_dim(level);
            let m = MeshLevel::from_flags(n, vec![true; n * n]);
            for p in 1..=3 {
                let dh = DofHandler::new(&m, p);
                assert_eq!(dh.n_dofs(), (p * n + 1).pow(2));
            }
        }
        let m = MeshLevel::from_flags(4, vec![true; 16]);
        let dh = DofHandler::new(&m, 2);
        // right edge of cell 0 equals left edge of cell 1
        let a = dh.cell_dofs(0);
        let b = dh.cell_dofs(1);
        for r in 0..3 {
            assert_eq!(a[2 + 3 * r], b[3 * r]);
        }
        let mut cells = [(0, 0); 4];
        let k = dh.dof_cells(a[8], &mut cells);
        assert_eq!(k, 4);
        assert_eq!(cells[..k], [(0, 8), (1, 6), (4, 2), (5, 0)]);
    }

    #[test]
    fn dof_activity_follows_cells() {
        let mut flags = vec![false; 16];
        flags[5] = true;
        let m = MeshLevel::from_flags(4, flags);
        let dh = DofHandler::new(&m, 2);
        assert_eq!(dh.n_active_dofs(), 9);
        for d in dh.cell_dofs(5) {
            assert!(dh.dof_is_active[d]);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn partition_of_unity_everywhere(x in -2.0f64..3.0, y in -2.0f64..3.0, p in 1usize..6) {
                let e = Element::new(p);
                let v = e.shape_values([x, y]);
                let s: f64 = v.iter().sum();
                // rounding grows with the magnitude of the extrapolated values
                let scale: f64 = v.iter().map(|a| a.abs()).sum();
                prop_assert!((s - 1.0).abs() < 1e-13 * scale);
            }

            #[test]
            fn polynomials_reproduced_with_extrapolation(
                x in -1.4f64..2.4, y in -1.4f64..2.4, p in 1usize..4,
                c in proptest::collection::vec(-1.0f64..1.0, 6)
            ) {
                // total degree <= p
                let poly = |x: f64, y: f64| -> f64 {
                    let mut v = c[0] + c[1] * x + c[2] * y;
                    if p >= 2 { v += c[3] * x * x + c[4] * x * y + c[5] * y * y; }
                    v
                };
                let e = Element::new(p);
                let m = p + 1;
                let nodal: Vec<f64> = (0..m * m)
                    .map(|k| poly(e.nodes()[k % m], e.nodes()[k / m]))
                    .collect();
                let terms: Vec<f64> = e.shape_values([x, y]).iter().zip(&nodal).map(|(a, b)| a * b).collect();
                let v: f64 = terms.iter().sum();
                // rounding grows with the magnitude of the extrapolated terms
                let scale = terms.iter().map(|t| t.abs()).sum::<f64>().max(1.0);
                prop_assert!((v - poly(x, y)).abs() < 1e-12 * scale);
            }

            #[test]
            fn locate_round_trip(cell in 0usize..64, a in -1.5f64..2.5, b in -1.5f64..2.5) {
                let m = MeshLevel::from_flags(8, vec![true; 64]);
                let x = physical_point(&m, cell, [a, b]);
                let xi = locate_reference_point(&m, cell, x);
                prop_assert!((xi[0] - a).abs() < 1e-14 && (xi[1] - b).abs() < 1e-14);
            }
        }
    }
}
