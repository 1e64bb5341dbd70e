//! Implicit geometry: level-set evaluation, cell volume fractions and
//! closest-point projection onto the zero level set.

use crate::error::{Result, SbmError};

pub type Point = [f64; 2];

/// Which family a level set belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GeometryKind {
    UnitCircle,
    Circle,
    UserDefined,
}

/// An implicit domain `{x : phi(x) < 0}` with boundary `{phi = 0}`.
pub trait LevelSet: Send + Sync {
    fn value(&self, x: Point) -> f64;

    fn gradient(&self, x: Point) -> Point;

    /// Second derivatives; `None` makes the projection fall back to
    /// finite differences of the gradient.
    fn hessian(&self, _x: Point) -> Option<[[f64; 2]; 2]> {
        None
    }

    /// Lipschitz bound of `phi`, enabling the inscribed-ball pruning test.
    fn lipschitz(&self) -> Option<f64> {
        None
    }

    fn kind(&self) -> GeometryKind {
        GeometryKind::UserDefined
    }
}

/// Signed distance to a circle: `phi(x) = |x - c| - r`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Circle {
    pub center: Point,
    pub radius: f64,
}

impl Circle {
    pub fn unit() -> Self {
        Circle {
            center: [0.0, 0.0],
            radius: 1.0,
        }
    }

    pub fn new(center: Point, radius: f64) -> Self {
        Circle { center, radius }
    }
}

impl LevelSet for Circle {
    fn value(&self, x: Point) -> f64 {
        let dx = x[0] - self.center[0];
        let dy = x[1] - self.center[1];
        dx.hypot(dy) - self.radius
    }

    fn gradient(&self, x: Point) -> Point {
        let dx = x[0] - self.center[0];
        let dy = x[1] - self.center[1];
        let r = dx.hypot(dy);
        if r == 0.0 {
            return [0.0, 0.0];
        }
        [dx / r, dy / r]
    }

    fn hessian(&self, x: Point) -> Option<[[f64; 2]; 2]> {
        let dx = x[0] - self.center[0];
        let dy = x[1] - self.center[1];
        let r = dx.hypot(dy);
        if r == 0.0 {
            return None;
        }
        let r3 = r * r * r;
        Some([[dy * dy / r3, -dx * dy / r3], [-dx * dy / r3, dx * dx / r3]])
    }

    fn lipschitz(&self) -> Option<f64> {
        Some(1.0)
    }

    fn kind(&self) -> GeometryKind {
        if self.center == [0.0, 0.0] && self.radius == 1.0 {
            GeometryKind::UnitCircle
        } else {
            GeometryKind::Circle
        }
    }
}

/// Level set built from closures.
pub struct FnLevelSet<F, G> {
    pub value: F,
    pub gradient: G,
    pub lipschitz: Option<f64>,
}

impl<F, G> LevelSet for FnLevelSet<F, G>
where
    F: Fn(Point) -> f64 + Send + Sync,
    G: Fn(Point) -> Point + Send + Sync,
{
    fn value(&self, x: Point) -> f64 {
        (self.value)(x)
    }

    fn gradient(&self, x: Point) -> Point {
        (self.gradient)(x)
    }

    fn lipschitz(&self) -> Option<f64> {
        self.lipschitz
    }
}

/// Axis-aligned box `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellBox {
    pub lo: Point,
    pub hi: Point,
}

impl CellBox {
    pub fn new(lo: Point, hi: Point) -> Self {
        CellBox { lo, hi }
    }

    pub fn center(&self) -> Point {
        [0.5 * (self.lo[0] + self.hi[0]), 0.5 * (self.lo[1] + self.hi[1])]
    }

    pub fn half_diagonal(&self) -> f64 {
        0.5 * (self.hi[0] - self.lo[0]).hypot(self.hi[1] - self.lo[1])
    }

    pub fn corners(&self) -> [Point; 4] {
        [
            self.lo,
            [self.hi[0], self.lo[1]],
            [self.lo[0], self.hi[1]],
            self.hi,
        ]
    }
}

/// Sign of a box with respect to the level set, if it can be decided
/// without subdivision.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoxSide {
    Inside,
    Outside,
    Undecided,
}

/// Corner-sign plus inscribed-ball test. With no Lipschitz bound only the
/// corner and center signs are compared.
pub fn classify_box(cell: &CellBox, geom: &dyn LevelSet) -> Result<BoxSide> {
    let mut inside = 0;
    let mut outside = 0;
    for c in cell.corners() {
        let v = geom.value(c);
        if v.is_nan() {
            return Err(SbmError::NanLevelSet(c[0], c[1]));
        }
        if v < 0.0 {
            inside += 1;
        } else if v > 0.0 {
            outside += 1;
        }
    }
    let c = cell.center();
    let vc = geom.value(c);
    if vc.is_nan() {
        return Err(SbmError::NanLevelSet(c[0], c[1]));
    }
    let clear = match geom.lipschitz() {
        Some(lip) => vc.abs() > lip * cell.half_diagonal(),
        None => true,
    };
    if inside == 4 && vc < 0.0 && clear {
        Ok(BoxSide::Inside)
    } else if outside == 4 && vc > 0.0 && clear {
        Ok(BoxSide::Outside)
    } else {
        Ok(BoxSide::Undecided)
    }
}

/// Maximum bisection depth of [`volume_fraction_inside`].
pub const MAX_FRACTION_DEPTH: u32 = 8;

/// Fraction of the box lying inside the domain, by recursive bisection with
/// a midpoint-rule fallback at the deepest level.
pub fn volume_fraction_inside(cell: &CellBox, geom: &dyn LevelSet) -> Result<f64> {
    fraction_rec(cell, geom, 0)
}

fn fraction_rec(cell: &CellBox, geom: &dyn LevelSet, depth: u32) -> Result<f64> {
    match classify_box(cell, geom)? {
        BoxSide::Inside => return Ok(1.0),
        BoxSide::Outside => return Ok(0.0),
        BoxSide::Undecided => {}
    }
    let c = cell.center();
    if depth == MAX_FRACTION_DEPTH {
        let v = geom.value(c);
        return Ok(if v < 0.0 {
            1.0
        } else if v > 0.0 {
            0.0
        } else {
            0.5
        });
    }
    let (lo, hi) = (cell.lo, cell.hi);
    let children = [
        CellBox::new(lo, c),
        CellBox::new([c[0], lo[1]], [hi[0], c[1]]),
        CellBox::new([lo[0], c[1]], [c[0], hi[1]]),
        CellBox::new(c, hi),
    ];
    let mut sum = 0.0;
    for child in &children {
        sum += fraction_rec(child, geom, depth + 1)?;
    }
    Ok(0.25 * sum)
}

/// Closest point on the zero level set to a surrogate-boundary point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub surrogate_point: Point,
    pub true_point: Point,
    pub shift: Point,
}

/// Shift data attached to one surrogate-boundary quadrature point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShiftDatum {
    pub surrogate_point: Point,
    pub true_point: Point,
    pub shift: Point,
    pub surrogate_normal: Point,
    pub owner_cell: usize,
}

impl ShiftDatum {
    pub fn from_projection(p: Projection, normal: Point, owner_cell: usize) -> Self {
        ShiftDatum {
            surrogate_point: p.surrogate_point,
            true_point: p.true_point,
            shift: p.shift,
            surrogate_normal: normal,
            owner_cell,
        }
    }
}

pub const PROJECTION_TOL: f64 = 1e-12;
const NEWTON_MAX_ITER: usize = 50;
const FALLBACK_STEPS: usize = 200;

fn hessian_or_fd(geom: &dyn LevelSet, x: Point) -> [[f64; 2]; 2] {
    if let Some(h) = geom.hessian(x) {
        return h;
    }
    let eps = 1e-6;
    let mut h = [[0.0; 2]; 2];
    for k in 0..2 {
        let mut xp = x;
        let mut xm = x;
        xp[k] += eps;
        xm[k] -= eps;
        let gp = geom.gradient(xp);
        let gm = geom.gradient(xm);
        for i in 0..2 {
            h[i][k] = (gp[i] - gm[i]) / (2.0 * eps);
        }
    }
    // symmetrize
    let off = 0.5 * (h[0][1] + h[1][0]);
    h[0][1] = off;
    h[1][0] = off;
    h
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for k in 0..3 {
        let p = (k..3).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))?;
        if a[p][k] == 0.0 {
            return None;
        }
        a.swap(k, p);
        b.swap(k, p);
        for i in k + 1..3 {
            let l = a[i][k] / a[k][k];
            for j in k..3 {
                a[i][j] -= l * a[k][j];
            }
            b[i] -= l * b[k];
        }
    }
    let mut x = [0.0; 3];
    for k in (0..3).rev() {
        let mut s = b[k];
        for j in k + 1..3 {
            s -= a[k][j] * x[j];
        }
        x[k] = s / a[k][k];
    }
    Some(x)
}

fn newton_projection(xs: Point, geom: &dyn LevelSet) -> Option<Point> {
    let phi = geom.value(xs);
    let g = geom.gradient(xs);
    let g2 = g[0] * g[0] + g[1] * g[1];
    let mut x = [xs[0] - phi * g[0] / g2, xs[1] - phi * g[1] / g2];
    let gx = geom.gradient(x);
    let gx2 = gx[0] * gx[0] + gx[1] * gx[1];
    if gx2 == 0.0 {
        return None;
    }
    let mut mu = -((x[0] - xs[0]) * gx[0] + (x[1] - xs[1]) * gx[1]) / gx2;
    for _ in 0..=NEWTON_MAX_ITER {
        let phi = geom.value(x);
        let g = geom.gradient(x);
        let r = [x[0] - xs[0] + mu * g[0], x[1] - xs[1] + mu * g[1]];
        if !(phi.is_finite() && r[0].is_finite() && r[1].is_finite()) {
            return None;
        }
        if r[0].abs().max(r[1].abs()) <= PROJECTION_TOL && phi.abs() <= PROJECTION_TOL {
            return Some(x);
        }
        let h = hessian_or_fd(geom, x);
        let jac = [
            [1.0 + mu * h[0][0], mu * h[0][1], g[0]],
            [mu * h[1][0], 1.0 + mu * h[1][1], g[1]],
            [g[0], g[1], 0.0],
        ];
        let step = solve3(jac, [-r[0], -r[1], -phi])?;
        x[0] += step[0];
        x[1] += step[1];
        mu += step[2];
    }
    None
}

fn gradient_projection(xs: Point, geom: &dyn LevelSet) -> Option<Point> {
    let mut x = xs;
    let mut phi = geom.value(x);
    for _ in 0..FALLBACK_STEPS {
        if phi.abs() <= PROJECTION_TOL {
            return Some(x);
        }
        let g = geom.gradient(x);
        let g2 = g[0] * g[0] + g[1] * g[1];
        if g2 == 0.0 || !phi.is_finite() {
            return None;
        }
        let mut damping = 1.0;
        loop {
            let trial = [x[0] - damping * phi * g[0] / g2, x[1] - damping * phi * g[1] / g2];
            let pt = geom.value(trial);
            if pt.abs() < phi.abs() || damping < 1e-6 {
                x = trial;
                phi = pt;
                break;
            }
            damping *= 0.5;
        }
    }
    (phi.abs() <= PROJECTION_TOL).then_some(x)
}

/// Closest point on `{phi = 0}` to `xs` via Newton on the Lagrangian
/// stationarity system, with damped gradient steps as a fallback.
pub fn closest_point_projection(xs: Point, geom: &dyn LevelSet) -> Result<Projection> {
    let phi = geom.value(xs);
    if phi.is_nan() {
        return Err(SbmError::NanLevelSet(xs[0], xs[1]));
    }
    let g = geom.gradient(xs);
    if g[0] == 0.0 && g[1] == 0.0 {
        return Err(SbmError::DegenerateGradient(xs[0], xs[1]));
    }
    let x = newton_projection(xs, geom)
        .or_else(|| gradient_projection(xs, geom))
        .ok_or(SbmError::ProjectionFailed(xs[0], xs[1]))?;
    Ok(Projection {
        surrogate_point: xs,
        true_point: x,
        shift: [x[0] - xs[0], x[1] - xs[1]],
    })
}

/// `sign(d . n) |d| / h`; positive when the shift points out of the surrogate domain.
pub fn normalized_signed_shift(datum: &ShiftDatum, h: f64) -> f64 {
    let d = datum.shift;
    let n = datum.surrogate_normal;
    let len = d[0].hypot(d[1]);
    if len == 0.0 {
        return 0.0;
    }
    let s = d[0] * n[0] + d[1] * n[1];
    if s < 0.0 {
        -len / h
    } else {
        len / h
    }
}
