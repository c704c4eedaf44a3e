//! Concrete Riemannian manifold models.
//!
//! Every model uses a closed-form representation:
//!
//! | kind            | coordinates                                   | metric            |
//! |-----------------|-----------------------------------------------|-------------------|
//! | `Circle`        | one angle in `[-π, π)`                        | flat              |
//! | `Sphere(n)`     | unit vector in `R^{n+1}`                      | induced Euclidean |
//! | `Hyperbolic(n)` | hyperboloid sheet `<x,x>_M = -1`, `x_0 > 0`   | induced Minkowski |
//! | `FlatTorus(n)`  | `n` angles in `[-π, π)`                       | flat              |
//! | `Euclidean(n)`  | vector in `R^n`                               | flat              |
//!
//! A [`Manifold`] optionally restricts a model to a closed geodesic ball (a
//! manifold with boundary) or to the complement of a single point (the cut
//! locus of its antipode on compact models).

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Guard band around cut loci and poles.
pub const CUT_LOCUS_GUARD: f64 = 1e-9;

/// Largest model-constraint residual accepted by [`Manifold::point`].
pub const MODEL_TOLERANCE: f64 = 1e-9;

const FRAME_SKIP: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ManifoldKind {
    Circle,
    Sphere(usize),
    Hyperbolic(usize),
    FlatTorus(usize),
    Euclidean(usize),
}

/// Wraps an angle into `[-π, π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut w = theta - 2.0 * PI * ((theta + PI) / (2.0 * PI)).floor();
    if w >= PI {
        w -= 2.0 * PI;
    }
    if w < -PI {
        w += 2.0 * PI;
    }
    w
}

/// Minkowski inner product `-u_0 v_0 + Σ u_i v_i`.
pub fn minkowski(u: &DVector<f64>, v: &DVector<f64>) -> f64 {
    u.dot(v) - 2.0 * u[0] * v[0]
}

impl ManifoldKind {
    /// Intrinsic dimension.
    pub fn dim(self) -> usize {
        match self {
            ManifoldKind::Circle => 1,
            ManifoldKind::Sphere(n)
            | ManifoldKind::Hyperbolic(n)
            | ManifoldKind::FlatTorus(n)
            | ManifoldKind::Euclidean(n) => n,
        }
    }

    /// Length of the coordinate vector in the model representation.
    pub fn coord_len(self) -> usize {
        match self {
            ManifoldKind::Circle => 1,
            ManifoldKind::Sphere(n) | ManifoldKind::Hyperbolic(n) => n + 1,
            ManifoldKind::FlatTorus(n) | ManifoldKind::Euclidean(n) => n,
        }
    }

    pub fn is_compact(self) -> bool {
        matches!(
            self,
            ManifoldKind::Circle | ManifoldKind::Sphere(_) | ManifoldKind::FlatTorus(_)
        )
    }

    /// Angle-valued coordinates (circle and torus).
    pub fn is_periodic(self) -> bool {
        matches!(self, ManifoldKind::Circle | ManifoldKind::FlatTorus(_))
    }

    /// Flat models whose frames are the coordinate basis.
    pub fn is_flat(self) -> bool {
        matches!(
            self,
            ManifoldKind::Circle | ManifoldKind::FlatTorus(_) | ManifoldKind::Euclidean(_)
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            ManifoldKind::Circle => "circle",
            ManifoldKind::Sphere(_) => "sphere",
            ManifoldKind::Hyperbolic(_) => "hyperbolic",
            ManifoldKind::FlatTorus(_) => "torus",
            ManifoldKind::Euclidean(_) => "euclidean",
        }
    }

    /// Constant `c` with `Ric = c g` on the space forms.
    pub fn ricci_constant(self) -> f64 {
        match self {
            ManifoldKind::Sphere(n) => n as f64 - 1.0,
            ManifoldKind::Hyperbolic(n) => -(n as f64 - 1.0),
            _ => 0.0,
        }
    }

    /// Riemannian inner product of two tangent vectors at the same base point.
    pub fn inner(self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        match self {
            ManifoldKind::Hyperbolic(_) => minkowski(u, v),
            _ => u.dot(v),
        }
    }

    pub fn norm(self, v: &DVector<f64>) -> f64 {
        self.inner(v, v).max(0.0).sqrt()
    }

    /// Residual of the model constraint for raw coordinates.
    pub fn model_residual(self, x: &DVector<f64>) -> f64 {
        if x.iter().any(|c| !c.is_finite()) {
            return f64::INFINITY;
        }
        match self {
            ManifoldKind::Sphere(_) => (x.norm() - 1.0).abs(),
            // Relative to the coordinate scale: far out on the sheet the
            // Minkowski square cancels terms of size |x|^2.
            ManifoldKind::Hyperbolic(_) => {
                if x[0] <= 0.0 {
                    f64::INFINITY
                } else {
                    (minkowski(x, x) + 1.0).abs() / (1.0 + x.norm_squared())
                }
            }
            _ => 0.0,
        }
    }

    /// Tangency residual of `v` at base `x`.
    pub fn tangent_residual(self, x: &DVector<f64>, v: &DVector<f64>) -> f64 {
        match self {
            ManifoldKind::Sphere(_) => x.dot(v).abs() / v.norm().max(1.0),
            ManifoldKind::Hyperbolic(_) => {
                minkowski(x, v).abs() / (v.norm() * x.norm()).max(1.0)
            }
            _ => 0.0,
        }
    }

    /// Orthogonal projection of an ambient vector onto `T_x M`.
    pub fn project_tangent(self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        match self {
            ManifoldKind::Sphere(_) => v - x * x.dot(v),
            ManifoldKind::Hyperbolic(_) => v + x * minkowski(x, v),
            _ => v.clone(),
        }
    }

    fn canonicalize(self, x: &mut DVector<f64>) {
        match self {
            ManifoldKind::Circle | ManifoldKind::FlatTorus(_) => {
                x.iter_mut().for_each(|c| *c = wrap_angle(*c));
            }
            ManifoldKind::Sphere(_) => {
                let n = x.norm();
                *x /= n;
            }
            ManifoldKind::Hyperbolic(_) => {
                let spatial: f64 = x.iter().skip(1).map(|c| c * c).sum();
                x[0] = (1.0 + spatial).sqrt();
            }
            ManifoldKind::Euclidean(_) => {}
        }
    }

    /// Validates raw coordinates against the model (no support restriction).
    pub fn point(self, coords: &[f64]) -> Result<Point> {
        if coords.len() != self.coord_len() {
            return Err(Error::DimensionMismatch {
                expected: self.coord_len(),
                got: coords.len(),
            });
        }
        let mut x = DVector::from_column_slice(coords);
        let residual = self.model_residual(&x);
        if !(residual <= MODEL_TOLERANCE) {
            return Err(Error::ConstraintViolation { residual });
        }
        self.canonicalize(&mut x);
        Ok(Point { kind: self, coords: x })
    }

    /// A distinguished point of the model: angle zero, the last pole of the
    /// sphere, the hyperboloid vertex, or the origin.
    pub fn origin(self) -> Point {
        let mut x = DVector::zeros(self.coord_len());
        match self {
            ManifoldKind::Sphere(n) => x[n] = 1.0,
            ManifoldKind::Hyperbolic(_) => x[0] = 1.0,
            _ => {}
        }
        Point { kind: self, coords: x }
    }

    /// The point farthest from `x` on compact models (its cut locus when that is a point).
    pub fn antipode(self, x: &Point) -> Result<Point> {
        let mut y = x.coords.clone();
        match self {
            ManifoldKind::Circle | ManifoldKind::FlatTorus(_) => {
                y.iter_mut().for_each(|c| *c = wrap_angle(*c + PI));
            }
            ManifoldKind::Sphere(_) => y = -y,
            _ => {
                return Err(Error::UnsupportedManifold(format!(
                    "{} has no cut locus",
                    self.name()
                )))
            }
        }
        Ok(Point { kind: self, coords: y })
    }

    pub(crate) fn exp_raw(self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        match self {
            ManifoldKind::Circle | ManifoldKind::FlatTorus(_) => {
                DVector::from_iterator(x.len(), x.iter().zip(v.iter()).map(|(a, b)| wrap_angle(a + b)))
            }
            ManifoldKind::Euclidean(_) => x + v,
            ManifoldKind::Sphere(_) => {
                let t = v.norm();
                if t == 0.0 {
                    return x.clone();
                }
                let mut y = x * t.cos() + v * (t.sin() / t);
                self.canonicalize(&mut y);
                y
            }
            ManifoldKind::Hyperbolic(_) => {
                let t = minkowski(v, v).max(0.0).sqrt();
                if t == 0.0 {
                    return x.clone();
                }
                let mut y = x * t.cosh() + v * (t.sinh() / t);
                self.canonicalize(&mut y);
                y
            }
        }
    }

    pub(crate) fn distance_raw(self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        match self {
            ManifoldKind::Circle | ManifoldKind::FlatTorus(_) => x
                .iter()
                .zip(y.iter())
                .map(|(a, b)| wrap_angle(b - a).powi(2))
                .sum::<f64>()
                .sqrt(),
            ManifoldKind::Euclidean(_) => (x - y).norm(),
            ManifoldKind::Sphere(_) => 2.0 * (x - y).norm().atan2((x + y).norm()),
            ManifoldKind::Hyperbolic(_) => {
                let b = -minkowski(x, y);
                if b > 2.0 {
                    b.acosh()
                } else {
                    let d = x - y;
                    2.0 * (minkowski(&d, &d).max(0.0).sqrt() / 2.0).asinh()
                }
            }
        }
    }

    pub(crate) fn log_raw(self, x: &DVector<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            ManifoldKind::Circle | ManifoldKind::FlatTorus(_) => {
                let mut v = DVector::zeros(x.len());
                for i in 0..x.len() {
                    let d = wrap_angle(y[i] - x[i]);
                    if PI - d.abs() <= CUT_LOCUS_GUARD {
                        return Err(Error::CutLocus);
                    }
                    v[i] = d;
                }
                Ok(v)
            }
            ManifoldKind::Euclidean(_) => Ok(y - x),
            ManifoldKind::Sphere(_) => {
                let c = x.dot(y);
                let u = y - x * c;
                let s = u.norm();
                let theta = s.atan2(c);
                if PI - theta <= CUT_LOCUS_GUARD {
                    return Err(Error::CutLocus);
                }
                if s == 0.0 {
                    return Ok(DVector::zeros(x.len()));
                }
                let mut v = u * (theta / s);
                // re-project: y ≈ -x loses tangency in the subtraction above
                v = self.project_tangent(x, &v);
                Ok(v)
            }
            ManifoldKind::Hyperbolic(_) => {
                let b = -minkowski(x, y);
                let u = y - x * b;
                let s = minkowski(&u, &u).max(0.0).sqrt();
                if s == 0.0 {
                    return Ok(DVector::zeros(x.len()));
                }
                let d = self.distance_raw(x, y);
                Ok(self.project_tangent(x, &(u * (d / s))))
            }
        }
    }

    /// Geodesic distance from `x` to the cut locus of `mu` (infinite on
    /// models without one).
    pub fn cut_locus_distance(self, mu: &Point, x: &Point) -> f64 {
        match self {
            ManifoldKind::Circle | ManifoldKind::FlatTorus(_) => mu
                .coords
                .iter()
                .zip(x.coords.iter())
                .map(|(m, c)| PI - wrap_angle(c - m).abs())
                .fold(f64::INFINITY, f64::min),
            ManifoldKind::Sphere(_) => PI - self.distance_raw(&mu.coords, &x.coords),
            _ => f64::INFINITY,
        }
    }

    /// Deterministic orthonormal frame at `x`: index-ordered Gram-Schmidt on
    /// the projected ambient basis.
    pub fn frame(self, x: &Point) -> Frame {
        let n = self.dim();
        let len = self.coord_len();
        let mut basis: Vec<DVector<f64>> = Vec::with_capacity(n);
        if self.is_flat() {
            for i in 0..n {
                basis.push(DVector::from_fn(len, |k, _| if k == i { 1.0 } else { 0.0 }));
            }
            return Frame { base: x.clone(), basis };
        }
        for i in 0..len {
            if basis.len() == n {
                break;
            }
            let mut w = DVector::from_fn(len, |k, _| if k == i { 1.0 } else { 0.0 });
            let mut norm = 0.0;
            // two passes restore tangency lost to cancellation
            for _ in 0..2 {
                w = self.project_tangent(&x.coords, &w);
                for q in &basis {
                    let c = self.inner(&w, q);
                    w -= q * c;
                }
                norm = self.norm(&w);
                if norm < FRAME_SKIP {
                    break;
                }
                w /= norm;
            }
            if norm < FRAME_SKIP {
                continue;
            }
            basis.push(w);
        }
        Frame { base: x.clone(), basis }
    }
}

/// A point on a concrete model.
#[derive(Clone, Debug, PartialEq)]
pub struct Point {
    kind: ManifoldKind,
    coords: DVector<f64>,
}

impl Point {
    pub fn kind(&self) -> ManifoldKind {
        self.kind
    }

    pub fn coords(&self) -> &DVector<f64> {
        &self.coords
    }

    pub fn as_slice(&self) -> &[f64] {
        self.coords.as_slice()
    }

    /// Lexicographic order on coordinates; used to canonicalize unordered pairs.
    pub(crate) fn lex_cmp(&self, other: &Point) -> std::cmp::Ordering {
        for (a, b) in self.coords.iter().zip(other.coords.iter()) {
            match a.total_cmp(b) {
                std::cmp::Ordering::Equal => continue,
                ord => return ord,
            }
        }
        std::cmp::Ordering::Equal
    }
}

/// A tangent vector anchored at a base point.
#[derive(Clone, Debug, PartialEq)]
pub struct Tangent {
    pub base: Point,
    pub vec: DVector<f64>,
}

impl Tangent {
    pub fn new(base: &Point, vec: DVector<f64>) -> Result<Self> {
        if vec.len() != base.kind.coord_len() {
            return Err(Error::DimensionMismatch {
                expected: base.kind.coord_len(),
                got: vec.len(),
            });
        }
        let residual = base.kind.tangent_residual(&base.coords, &vec);
        if residual > 1e-10 {
            return Err(Error::ConstraintViolation { residual });
        }
        Ok(Tangent { base: base.clone(), vec })
    }

    pub fn zero(base: &Point) -> Self {
        Tangent {
            base: base.clone(),
            vec: DVector::zeros(base.kind.coord_len()),
        }
    }

    pub fn norm(&self) -> f64 {
        self.base.kind.norm(&self.vec)
    }

    /// Riemannian inner product with another vector at the same base.
    pub fn dot(&self, other: &Tangent) -> f64 {
        self.base.kind.inner(&self.vec, &other.vec)
    }

    pub fn scale(&self, c: f64) -> Tangent {
        Tangent {
            base: self.base.clone(),
            vec: &self.vec * c,
        }
    }
}

/// Orthonormal basis of a tangent space.
#[derive(Clone, Debug)]
pub struct Frame {
    pub base: Point,
    pub basis: Vec<DVector<f64>>,
}

impl Frame {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// Frame coordinates of an ambient tangent vector.
    pub fn coords(&self, v: &DVector<f64>) -> DVector<f64> {
        let kind = self.base.kind;
        DVector::from_iterator(self.basis.len(), self.basis.iter().map(|e| kind.inner(v, e)))
    }

    /// Ambient vector with the given frame coordinates.
    pub fn vector(&self, c: &DVector<f64>) -> DVector<f64> {
        let mut v = DVector::zeros(self.base.kind.coord_len());
        for (e, ci) in self.basis.iter().zip(c.iter()) {
            v += e * *ci;
        }
        v
    }

    pub fn gram(&self) -> DMatrix<f64> {
        let kind = self.base.kind;
        let n = self.basis.len();
        DMatrix::from_fn(n, n, |i, j| kind.inner(&self.basis[i], &self.basis[j]))
    }
}

/// Support restriction of a model.
#[derive(Clone, Debug, PartialEq)]
pub enum Restriction {
    /// Closed geodesic ball; a compact manifold with boundary.
    GeodesicBall { center: Point, radius: f64 },
    /// The model with one point removed.
    Punctured { pole: Point },
}

/// A model together with an optional support restriction.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifold {
    kind: ManifoldKind,
    restriction: Option<Restriction>,
}

/// Geodesic distance between two points of the same model.
pub fn distance(x: &Point, y: &Point) -> Result<f64> {
    if x.kind != y.kind {
        return Err(Error::MixedManifolds);
    }
    Ok(x.kind.distance_raw(&x.coords, &y.coords))
}

impl Manifold {
    pub fn new(kind: ManifoldKind) -> Result<Self> {
        if kind.dim() == 0 {
            return Err(Error::InvalidSpec("dimension must be positive".into()));
        }
        Ok(Manifold { kind, restriction: None })
    }

    pub fn circle() -> Self {
        Manifold { kind: ManifoldKind::Circle, restriction: None }
    }

    /// Panics if `n == 0`.
    pub fn sphere(n: usize) -> Self {
        Self::new(ManifoldKind::Sphere(n)).expect("positive dimension")
    }

    /// Panics if `n == 0`.
    pub fn hyperbolic(n: usize) -> Self {
        Self::new(ManifoldKind::Hyperbolic(n)).expect("positive dimension")
    }

    /// Panics if `n == 0`.
    pub fn torus(n: usize) -> Self {
        Self::new(ManifoldKind::FlatTorus(n)).expect("positive dimension")
    }

    /// Panics if `n == 0`.
    pub fn euclidean(n: usize) -> Self {
        Self::new(ManifoldKind::Euclidean(n)).expect("positive dimension")
    }

    /// Restricts to the closed geodesic ball `B(center, radius)`.
    pub fn with_geodesic_ball(self, center: Point, radius: f64) -> Result<Self> {
        if center.kind != self.kind {
            return Err(Error::MixedManifolds);
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidSpec(format!("ball radius {radius} must be positive")));
        }
        if self.kind.is_compact() && radius >= PI {
            return Err(Error::InvalidSpec(format!(
                "ball radius {radius} exceeds the injectivity radius π"
            )));
        }
        Ok(Manifold {
            kind: self.kind,
            restriction: Some(Restriction::GeodesicBall { center, radius }),
        })
    }

    /// Removes `pole` from a compact model.
    pub fn punctured(self, pole: Point) -> Result<Self> {
        if pole.kind != self.kind {
            return Err(Error::MixedManifolds);
        }
        if !self.kind.is_compact() {
            return Err(Error::UnsupportedManifold(format!(
                "punctured {} (no cut locus)",
                self.kind.name()
            )));
        }
        Ok(Manifold {
            kind: self.kind,
            restriction: Some(Restriction::Punctured { pole }),
        })
    }

    pub fn kind(&self) -> ManifoldKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.kind.dim()
    }

    pub fn restriction(&self) -> Option<&Restriction> {
        self.restriction.as_ref()
    }

    /// Ball center and radius when restricted to a geodesic ball.
    pub fn ball(&self) -> Option<(&Point, f64)> {
        match &self.restriction {
            Some(Restriction::GeodesicBall { center, radius }) => Some((center, *radius)),
            _ => None,
        }
    }

    /// Validates coordinates against the model and the restriction.
    pub fn point(&self, coords: &[f64]) -> Result<Point> {
        let p = self.kind.point(coords)?;
        if !self.contains(&p) {
            return Err(Error::OutOfSupport);
        }
        Ok(p)
    }

    pub fn contains(&self, x: &Point) -> bool {
        if x.kind != self.kind {
            return false;
        }
        match &self.restriction {
            None => true,
            Some(Restriction::GeodesicBall { center, radius }) => {
                self.kind.distance_raw(&center.coords, &x.coords) <= *radius
            }
            Some(Restriction::Punctured { pole }) => {
                self.kind.distance_raw(&pole.coords, &x.coords) > CUT_LOCUS_GUARD
            }
        }
    }

    /// Center of the ball, the antipode of the puncture, or the model origin.
    pub fn origin(&self) -> Point {
        match &self.restriction {
            Some(Restriction::GeodesicBall { center, .. }) => center.clone(),
            Some(Restriction::Punctured { pole }) => self
                .kind
                .antipode(pole)
                .unwrap_or_else(|_| self.kind.origin()),
            None => self.kind.origin(),
        }
    }

    pub fn distance(&self, x: &Point, y: &Point) -> Result<f64> {
        if x.kind != self.kind {
            return Err(Error::MixedManifolds);
        }
        distance(x, y)
    }

    /// `exp_x(v)` for an ambient vector `v` tangent at `x`.
    pub fn exp_at(&self, x: &Point, v: &DVector<f64>) -> Result<Point> {
        if x.kind != self.kind {
            return Err(Error::MixedManifolds);
        }
        if v.len() != self.kind.coord_len() {
            return Err(Error::DimensionMismatch {
                expected: self.kind.coord_len(),
                got: v.len(),
            });
        }
        let y = Point {
            kind: self.kind,
            coords: self.kind.exp_raw(&x.coords, v),
        };
        if !self.contains(&y) {
            return Err(Error::OutOfSupport);
        }
        Ok(y)
    }

    pub fn exp(&self, v: &Tangent) -> Result<Point> {
        self.exp_at(&v.base, &v.vec)
    }

    pub fn log(&self, x: &Point, y: &Point) -> Result<Tangent> {
        if x.kind != self.kind || y.kind != self.kind {
            return Err(Error::MixedManifolds);
        }
        Ok(Tangent {
            base: x.clone(),
            vec: self.kind.log_raw(&x.coords, &y.coords)?,
        })
    }

    pub fn frame(&self, x: &Point) -> Frame {
        self.kind.frame(x)
    }

    /// Riemannian inner product of two tangent vectors at the same base.
    pub fn inner(&self, u: &Tangent, v: &Tangent) -> Result<f64> {
        if u.base != v.base {
            return Err(Error::MixedManifolds);
        }
        Ok(self.kind.inner(&u.vec, &v.vec))
    }

    /// Hessian of `d(·, mu)^2` at `x` in the frame at `x`.
    ///
    /// Radial eigenvalue 2, tangential eigenvalue `2d cot d` (sphere),
    /// `2d coth d` (hyperbolic) or 2 (flat). At `x = mu` the limit `2 I` is
    /// returned.
    pub fn hess_dist_sq(&self, mu: &Point, x: &Point) -> Result<DMatrix<f64>> {
        if mu.kind != self.kind || x.kind != self.kind {
            return Err(Error::MixedManifolds);
        }
        let n = self.dim();
        let d = self.kind.distance_raw(&mu.coords, &x.coords);
        if self.kind.cut_locus_distance(mu, x) <= CUT_LOCUS_GUARD {
            return Err(Error::CutLocus);
        }
        if d <= CUT_LOCUS_GUARD {
            return Ok(DMatrix::identity(n, n) * 2.0);
        }
        let tangential = match self.kind {
            ManifoldKind::Sphere(_) => 2.0 * d / d.tan(),
            ManifoldKind::Hyperbolic(_) => 2.0 * d / d.tanh(),
            _ => 2.0,
        };
        let frame = self.frame(x);
        let radial = frame.coords(&self.kind.log_raw(&x.coords, &mu.coords)?) / (-d);
        let rrt = &radial * radial.transpose();
        Ok(&rrt * 2.0 + (DMatrix::identity(n, n) - &rrt) * tangential)
    }

    /// Unit outward normal at a point on the boundary of a geodesic ball.
    pub fn boundary_normal(&self, x: &Point) -> Result<Tangent> {
        let (center, radius) = self.ball().ok_or_else(|| {
            Error::UnsupportedManifold("boundary normal needs a geodesic ball".into())
        })?;
        let d = distance(x, center)?;
        let offset = (d - radius).abs();
        if offset > CUT_LOCUS_GUARD {
            return Err(Error::NotOnBoundary { offset });
        }
        let inward = self.kind.log_raw(&x.coords, &center.coords)?;
        let norm = self.kind.norm(&inward);
        Ok(Tangent {
            base: x.clone(),
            vec: inward / (-norm),
        })
    }

    /// Evenly spaced points on the boundary sphere of a geodesic ball.
    ///
    /// In dimension one these are the two endpoints; in dimension two `count`
    /// points at equal angles; above that the `2n` frame directions.
    pub fn boundary_points(&self, count: usize) -> Result<Vec<Point>> {
        let (center, radius) = self.ball().ok_or_else(|| {
            Error::UnsupportedManifold("boundary points need a geodesic ball".into())
        })?;
        let frame = self.frame(center);
        let dirs: Vec<DVector<f64>> = match self.dim() {
            1 => vec![frame.basis[0].clone(), -&frame.basis[0]],
            2 => (0..count)
                .map(|k| {
                    let a = 2.0 * PI * k as f64 / count as f64;
                    &frame.basis[0] * a.cos() + &frame.basis[1] * a.sin()
                })
                .collect(),
            _ => frame
                .basis
                .iter()
                .flat_map(|e| [e.clone(), -e])
                .collect(),
        };
        Ok(dirs
            .into_iter()
            .map(|u| Point {
                kind: self.kind,
                coords: self.kind.exp_raw(&center.coords, &(u * radius)),
            })
            .collect())
    }

    /// Central-difference gradient in geodesic normal coordinates:
    /// `Σ_i [f(exp(h e_i)) - f(exp(-h e_i))] / (2h) e_i`.
    pub fn central_gradient<F>(&self, x: &Point, h: f64, f: F) -> Result<Tangent>
    where
        F: Fn(&Point) -> Result<f64>,
    {
        let frame = self.frame(x);
        let mut g = DVector::zeros(self.kind.coord_len());
        for e in &frame.basis {
            let fp = f(&self.stencil_point(x, &(e * h))?)?;
            let fm = f(&self.stencil_point(x, &(e * -h))?)?;
            g += e * ((fp - fm) / (2.0 * h));
        }
        Ok(Tangent { base: x.clone(), vec: g })
    }

    /// Central-difference Laplacian in geodesic normal coordinates, where the
    /// Christoffel symbols vanish at the center.
    pub fn central_laplacian<F>(&self, x: &Point, h: f64, f: F) -> Result<f64>
    where
        F: Fn(&Point) -> Result<f64>,
    {
        let frame = self.frame(x);
        let f0 = f(x)?;
        let mut acc = 0.0;
        for e in &frame.basis {
            let fp = f(&self.stencil_point(x, &(e * h))?)?;
            let fm = f(&self.stencil_point(x, &(e * -h))?)?;
            acc += fp - 2.0 * f0 + fm;
        }
        Ok(acc / (h * h))
    }

    fn stencil_point(&self, x: &Point, v: &DVector<f64>) -> Result<Point> {
        self.exp_at(x, v).map_err(|e| match e {
            Error::OutOfSupport => Error::SupportBoundary,
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sphere_point(theta: f64, phi: f64) -> Point {
        ManifoldKind::Sphere(2)
            .point(&[theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()])
            .unwrap()
    }

    fn hyp_point(a: f64, b: f64) -> Point {
        let x0 = (1.0 + a * a + b * b).sqrt();
        ManifoldKind::Hyperbolic(2).point(&[x0, a, b]).unwrap()
    }

    #[test]
    fn validate_examples() {
        let s2 = Manifold::sphere(2);
        assert!(s2.point(&[1.0, 0.0, 0.0]).is_ok());
        assert!(matches!(
            s2.point(&[1.0, 1.0, 0.0]),
            Err(Error::ConstraintViolation { .. })
        ));
        assert!(Manifold::hyperbolic(2).point(&[1.0, 0.0, 0.0]).is_ok());
        assert!(matches!(
            Manifold::hyperbolic(2).point(&[-1.0, 0.0, 0.0]),
            Err(Error::ConstraintViolation { .. })
        ));
        assert!(matches!(
            s2.point(&[1.0, 0.0]),
            Err(Error::DimensionMismatch { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn ball_support_is_enforced() {
        let e2 = Manifold::euclidean(2);
        let ball = e2
            .clone()
            .with_geodesic_ball(e2.point(&[0.0, 0.0]).unwrap(), 1.0)
            .unwrap();
        assert!(ball.point(&[0.5, 0.5]).is_ok());
        assert_eq!(ball.point(&[1.0, 1.0]), Err(Error::OutOfSupport));
        let x = ball.point(&[0.5, 0.0]).unwrap();
        assert_eq!(
            ball.exp_at(&x, &DVector::from_vec(vec![1.0, 0.0])),
            Err(Error::OutOfSupport)
        );
        let s2 = Manifold::sphere(2);
        let north = s2.point(&[0.0, 0.0, 1.0]).unwrap();
        assert!(matches!(
            s2.with_geodesic_ball(north, PI),
            Err(Error::InvalidSpec(_))
        ));
    }

    #[test]
    fn puncture_only_on_compact_models() {
        let h2 = Manifold::hyperbolic(2);
        let v = h2.kind().origin();
        assert!(matches!(h2.punctured(v), Err(Error::UnsupportedManifold(_))));
        let c = Manifold::circle();
        let pole = c.point(&[PI - 0.5]).unwrap();
        let m = c.punctured(pole.clone()).unwrap();
        assert!(!m.contains(&pole));
        assert!(m.contains(&m.origin()));
    }

    #[test]
    fn distance_examples() {
        let s2 = Manifold::sphere(2);
        let a = s2.point(&[0.0, 0.0, 1.0]).unwrap();
        let b = s2.point(&[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(s2.distance(&a, &a).unwrap(), 0.0);
        assert!((s2.distance(&a, &b).unwrap() - PI / 2.0).abs() < 1e-15);

        let h2 = Manifold::hyperbolic(2);
        let o = h2.point(&[1.0, 0.0, 0.0]).unwrap();
        let p = h2.point(&[1f64.cosh(), 1f64.sinh(), 0.0]).unwrap();
        assert!((h2.distance(&o, &p).unwrap() - 1.0).abs() < 1e-14);

        let c = Manifold::circle();
        let x = c.point(&[3.0]).unwrap();
        let y = c.point(&[-3.0]).unwrap();
        assert!((c.distance(&x, &y).unwrap() - (2.0 * PI - 6.0)).abs() < 1e-14);

        assert_eq!(distance(&a, &o), Err(Error::MixedManifolds));
    }

    #[test]
    fn exp_examples() {
        let c = Manifold::circle();
        let x = c.point(&[0.0]).unwrap();
        let y = c.exp_at(&x, &DVector::from_vec(vec![PI / 2.0])).unwrap();
        assert!((y.as_slice()[0] - PI / 2.0).abs() < 1e-15);

        let s2 = Manifold::sphere(2);
        let north = s2.point(&[0.0, 0.0, 1.0]).unwrap();
        assert_eq!(s2.exp(&Tangent::zero(&north)).unwrap(), north);
        let south = s2
            .exp_at(&north, &DVector::from_vec(vec![PI, 0.0, 0.0]))
            .unwrap();
        assert!((south.coords() - DVector::from_vec(vec![0.0, 0.0, -1.0])).norm() < 1e-15);
        assert_eq!(s2.log(&north, &south), Err(Error::CutLocus));
    }

    #[test]
    fn log_at_self_is_zero() {
        let s2 = Manifold::sphere(2);
        let x = sphere_point(0.7, 1.9);
        assert_eq!(s2.log(&x, &x).unwrap().norm(), 0.0);
        let h2 = Manifold::hyperbolic(2);
        let y = hyp_point(0.3, -2.0);
        assert_eq!(h2.log(&y, &y).unwrap().norm(), 0.0);
    }

    #[test]
    fn hyperboloid_exp_is_stable_for_long_vectors() {
        let h2 = Manifold::hyperbolic(2);
        let x = hyp_point(0.4, -0.2);
        let frame = h2.frame(&x);
        let v = frame.vector(&DVector::from_vec(vec![20.0 * 0.6, 20.0 * 0.8]));
        assert!((h2.kind().norm(&v) - 20.0).abs() < 1e-12);
        let y = h2.exp_at(&x, &v).unwrap();
        assert!(h2.kind().model_residual(y.coords()) <= 1e-10);
        assert!((h2.distance(&x, &y).unwrap() - 20.0).abs() < 1e-8);
    }

    #[test]
    fn frames_are_orthonormal_and_tangent() {
        let s2 = Manifold::sphere(2);
        let north = s2.point(&[0.0, 0.0, 1.0]).unwrap();
        let f = s2.frame(&north);
        for e in &f.basis {
            assert!(e.dot(north.coords()).abs() < 1e-15);
        }
        let e3 = Manifold::euclidean(3);
        let f = e3.frame(&e3.point(&[1.0, 2.0, 3.0]).unwrap());
        assert_eq!(f.gram(), DMatrix::identity(3, 3));
        assert_eq!(f.basis[1], DVector::from_vec(vec![0.0, 1.0, 0.0]));
        // nearly-degenerate candidate: x within 1e-9 of e_0
        let x = ManifoldKind::Sphere(2).point(&[1.0, 1e-9, 0.0]).unwrap();
        let f = s2.frame(&x);
        assert_eq!(f.dim(), 2);
        assert!((f.gram() - DMatrix::identity(2, 2)).amax() < 1e-10);
        for e in &f.basis {
            assert!(e.dot(x.coords()).abs() < 1e-10);
        }
    }

    #[test]
    fn hessian_closed_forms() {
        let s2 = Manifold::sphere(2);
        let mu = s2.point(&[0.0, 0.0, 1.0]).unwrap();
        assert_eq!(s2.hess_dist_sq(&mu, &mu).unwrap(), DMatrix::identity(2, 2) * 2.0);
        let x = sphere_point(PI / 2.0, 0.3);
        let eig = s2.hess_dist_sq(&mu, &x).unwrap().symmetric_eigenvalues();
        let mut ev: Vec<f64> = eig.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        assert!(ev[0].abs() < 1e-14 && (ev[1] - 2.0).abs() < 1e-14);
        let south = s2.point(&[0.0, 0.0, -1.0]).unwrap();
        assert_eq!(s2.hess_dist_sq(&mu, &south), Err(Error::CutLocus));
    }

    #[test]
    fn boundary_normals() {
        let e2 = Manifold::euclidean(2);
        let c = e2.point(&[0.5, -0.25]).unwrap();
        let ball = e2.with_geodesic_ball(c.clone(), 2.0).unwrap();
        for x in ball.boundary_points(12).unwrap() {
            let n = ball.boundary_normal(&x).unwrap();
            assert!((n.norm() - 1.0).abs() < 1e-10);
            let expect = (x.coords() - c.coords()) / 2.0;
            assert!((n.vec.clone() - expect).norm() < 1e-12);
            let t = DVector::from_vec(vec![-n.vec[1], n.vec[0]]);
            assert!(n.vec.dot(&t).abs() < 1e-15);
        }
        let inside = ball.point(&[0.5, 0.0]).unwrap();
        assert!(matches!(
            ball.boundary_normal(&inside),
            Err(Error::NotOnBoundary { .. })
        ));

        let s2 = Manifold::sphere(2);
        let north = s2.point(&[0.0, 0.0, 1.0]).unwrap();
        let cap = s2.with_geodesic_ball(north, 1.0).unwrap();
        for x in cap.boundary_points(7).unwrap() {
            let n = cap.boundary_normal(&x).unwrap();
            assert!((n.norm() - 1.0).abs() < 1e-10);
            assert!(n.vec.dot(x.coords()).abs() < 1e-12);
            // outward means away from the north pole
            assert!(n.vec[2] < 0.0);
        }
    }

    fn any_sphere_point() -> impl Strategy<Value = Point> {
        (0.0..PI, -PI..PI).prop_map(|(t, p)| sphere_point(t, p))
    }

    fn any_hyp_point() -> impl Strategy<Value = Point> {
        (-3.0..3.0f64, -3.0..3.0f64).prop_map(|(a, b)| hyp_point(a, b))
    }

    fn check_round_trip(m: &Manifold, x: &Point, y: &Point) {
        let v = match m.log(x, y) {
            Ok(v) => v,
            Err(Error::CutLocus) => return,
            Err(e) => panic!("{e}"),
        };
        let d = m.distance(x, y).unwrap();
        assert!((v.norm() - d).abs() <= 1e-10, "isometry {} vs {}", v.norm(), d);
        let z = m.exp(&v).unwrap();
        assert!(m.distance(&z, y).unwrap() <= 1e-10);
        assert!(m.kind().tangent_residual(x.coords(), &v.vec) <= 1e-10);
    }

    proptest! {
        #[test]
        fn sphere_round_trip(x in any_sphere_point(), y in any_sphere_point()) {
            check_round_trip(&Manifold::sphere(2), &x, &y);
        }

        #[test]
        fn hyperbolic_round_trip(x in any_hyp_point(), y in any_hyp_point()) {
            check_round_trip(&Manifold::hyperbolic(2), &x, &y);
        }

        #[test]
        fn torus_round_trip(a in proptest::collection::vec(-PI..PI, 2),
                            b in proptest::collection::vec(-PI..PI, 2)) {
            let t = Manifold::torus(2);
            check_round_trip(&t, &t.point(&a).unwrap(), &t.point(&b).unwrap());
        }

        #[test]
        fn triangle_inequality(x in any_sphere_point(), y in any_sphere_point(), z in any_sphere_point(),
                               p in any_hyp_point(), q in any_hyp_point(), r in any_hyp_point()) {
            let d = |a: &Point, b: &Point| distance(a, b).unwrap();
            prop_assert!(d(&x, &z) <= d(&x, &y) + d(&y, &z) + 1e-9);
            prop_assert!(d(&p, &r) <= d(&p, &q) + d(&q, &r) + 1e-9);
            prop_assert!((d(&x, &y) - d(&y, &x)).abs() < 1e-15);
        }

        #[test]
        fn frames_orthonormal(x in any_sphere_point(), p in any_hyp_point()) {
            for (m, pt) in [(Manifold::sphere(2), x), (Manifold::hyperbolic(2), p)] {
                let f = m.frame(&pt);
                prop_assert_eq!(f.dim(), 2);
                prop_assert!((f.gram() - DMatrix::identity(2, 2)).amax() < 1e-10);
                for e in &f.basis {
                    prop_assert!(m.kind().tangent_residual(pt.coords(), e) < 1e-10);
                }
            }
        }
    }
}
