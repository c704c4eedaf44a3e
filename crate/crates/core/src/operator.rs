//! The weighted-Laplacian Stein operator `L_P f = Δf - g(∇φ, ∇f)` and the
//! integral identities behind it.
//!
//! Derivatives are taken intrinsically: closed forms when a [`TestFunction`]
//! carries them, otherwise central differences in geodesic normal
//! coordinates around the evaluation point.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Manifold, ManifoldKind, Point, Tangent};
use crate::measures::TargetDensity;
use crate::quadrature::QuadratureGrid;
use crate::sampling::integrated_ess;

pub type EvalFn = Arc<dyn Fn(&Point) -> Result<f64> + Send + Sync>;
pub type GradFn = Arc<dyn Fn(&Point) -> Result<DVector<f64>> + Send + Sync>;

/// Finite-difference steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiffConfig {
    pub h_grad: f64,
    pub h_lap: f64,
}

impl Default for DiffConfig {
    fn default() -> Self {
        DiffConfig { h_grad: 1e-4, h_lap: 1e-3 }
    }
}

impl DiffConfig {
    /// Largest accepted step; far inside the injectivity radius of every model.
    pub const MAX_STEP: f64 = 0.5;

    pub fn new(h_grad: f64, h_lap: f64) -> Result<Self> {
        if !(h_grad > 0.0 && h_grad <= h_lap && h_lap < Self::MAX_STEP) {
            return Err(Error::InvalidSpec(format!(
                "need 0 < h_grad ({h_grad}) <= h_lap ({h_lap}) < {}",
                Self::MAX_STEP
            )));
        }
        Ok(DiffConfig { h_grad, h_lap })
    }
}

/// Where a test function may be nonzero.
#[derive(Clone, Debug, PartialEq)]
pub enum FnSupport {
    Global,
    Ball { center: Point, radius: f64 },
    AwayFrom { pole: Point, margin: f64 },
}

/// A scalar function on a model, with optional closed-form derivatives.
///
/// The gradient closure returns the ambient representation of a tangent
/// vector at its argument.
#[derive(Clone)]
pub struct TestFunction {
    eval: EvalFn,
    gradient: Option<GradFn>,
    laplacian: Option<EvalFn>,
    support: FnSupport,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction")
            .field("closed_gradient", &self.gradient.is_some())
            .field("closed_laplacian", &self.laplacian.is_some())
            .field("support", &self.support)
            .finish()
    }
}

/// The compactly supported bump `B(s) = exp(1 - 1/(1 - s^2))` on `|s| < 1`,
/// with `B'` and `B''`.
pub fn bump(s: f64) -> (f64, f64, f64) {
    if s.abs() >= 1.0 {
        return (0.0, 0.0, 0.0);
    }
    let q = 1.0 - s * s;
    let b = (1.0 - 1.0 / q).exp();
    let d1 = b * (-2.0 * s / (q * q));
    let d2 = b * (4.0 * s * s - (2.0 + 6.0 * s * s) * q) / q.powi(4);
    (b, d1, d2)
}

impl TestFunction {
    pub fn new<F>(f: F) -> Self
    where
        F: Fn(&Point) -> f64 + Send + Sync + 'static,
    {
        Self::fallible(move |x| Ok(f(x)))
    }

    pub fn fallible<F>(f: F) -> Self
    where
        F: Fn(&Point) -> Result<f64> + Send + Sync + 'static,
    {
        TestFunction {
            eval: Arc::new(f),
            gradient: None,
            laplacian: None,
            support: FnSupport::Global,
        }
    }

    pub fn with_gradient<G>(mut self, g: G) -> Self
    where
        G: Fn(&Point) -> DVector<f64> + Send + Sync + 'static,
    {
        self.gradient = Some(Arc::new(move |x| Ok(g(x))));
        self
    }

    pub fn with_laplacian<L>(mut self, l: L) -> Self
    where
        L: Fn(&Point) -> f64 + Send + Sync + 'static,
    {
        self.laplacian = Some(Arc::new(move |x| Ok(l(x))));
        self
    }

    pub fn with_support(mut self, support: FnSupport) -> Self {
        self.support = support;
        self
    }

    pub fn constant(c: f64) -> Self {
        TestFunction::new(move |_| c)
            .with_gradient(|x| DVector::zeros(x.coords().len()))
            .with_laplacian(|_| 0.0)
    }

    /// A function of the first coordinate on the circle or the line, given
    /// with its first and second derivatives.
    pub fn univariate<F, D1, D2>(f: F, d1: D1, d2: D2) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        D1: Fn(f64) -> f64 + Send + Sync + 'static,
        D2: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        TestFunction::new(move |x| f(x.as_slice()[0]))
            .with_gradient(move |x| {
                let mut g = DVector::zeros(x.coords().len());
                g[0] = d1(x.as_slice()[0]);
                g
            })
            .with_laplacian(move |x| d2(x.as_slice()[0]))
    }

    /// The ambient coordinate `x_i` on a sphere, hyperboloid or Euclidean space.
    pub fn coordinate(kind: ManifoldKind, i: usize) -> Result<Self> {
        if i >= kind.coord_len() || kind.is_periodic() {
            return Err(Error::InvalidSpec(format!(
                "no coordinate function {i} on {}",
                kind.name()
            )));
        }
        let n = kind.dim() as f64;
        Ok(TestFunction::new(move |x| x.as_slice()[i])
            .with_gradient(move |x| {
                let e = DVector::from_fn(kind.coord_len(), |k, _| if k == i { 1.0 } else { 0.0 });
                match kind {
                    // Minkowski gradient flips the time component
                    ManifoldKind::Hyperbolic(_) => {
                        let mut e = e;
                        if i == 0 {
                            e[0] = -1.0;
                        }
                        kind.project_tangent(x.coords(), &e)
                    }
                    _ => kind.project_tangent(x.coords(), &e),
                }
            })
            .with_laplacian(move |x| match kind {
                ManifoldKind::Sphere(_) => -n * x.as_slice()[i],
                ManifoldKind::Hyperbolic(_) => n * x.as_slice()[i],
                _ => 0.0,
            }))
    }

    /// Smooth bump of the distance to `center`, supported in the open
    /// geodesic ball of the given radius, on `S^n`.
    pub fn zonal_bump(center: Point, radius: f64) -> Result<Self> {
        let kind = center.kind();
        let n = match kind {
            ManifoldKind::Sphere(n) => n as f64,
            other => {
                return Err(Error::UnsupportedManifold(format!("zonal bump on {}", other.name())))
            }
        };
        if !(radius > 0.0 && radius < std::f64::consts::PI) {
            return Err(Error::InvalidSpec(format!("bump radius {radius}")));
        }
        // s is affine in u = <x, c>: 0 at the center, 1 on the support boundary
        let ds = -1.0 / (1.0 - radius.cos());
        let s_of = move |u: f64| (1.0 - u) * -ds;
        let c = center.coords().clone();
        let (c1, c2, c3) = (c.clone(), c.clone(), c);
        Ok(TestFunction::new(move |x| bump(s_of(x.coords().dot(&c1))).0)
            .with_gradient(move |x| {
                let u = x.coords().dot(&c2);
                let beta1 = bump(s_of(u)).1 * ds;
                (&c2 - x.coords() * u) * beta1
            })
            .with_laplacian(move |x| {
                let u = x.coords().dot(&c3);
                let (_, b1, b2) = bump(s_of(u));
                (1.0 - u * u) * b2 * ds * ds - n * u * b1 * ds
            })
            .with_support(FnSupport::Ball { center, radius }))
    }

    /// Smooth bump on the circle or the line supported in `(c - w, c + w)`.
    pub fn interval_bump(center: Point, half_width: f64) -> Result<Self> {
        let kind = center.kind();
        let periodic = match kind {
            ManifoldKind::Circle => true,
            ManifoldKind::Euclidean(1) => false,
            other => {
                return Err(Error::UnsupportedManifold(format!(
                    "interval bump on {}",
                    other.name()
                )))
            }
        };
        if !(half_width > 0.0 && (!periodic || half_width < std::f64::consts::PI)) {
            return Err(Error::InvalidSpec(format!("bump half-width {half_width}")));
        }
        let c = center.as_slice()[0];
        let offset = move |t: f64| if periodic { wrap_angle(t - c) } else { t - c };
        let w = half_width;
        Ok(TestFunction::univariate(
            move |t| bump(offset(t) / w).0,
            move |t| bump(offset(t) / w).1 / w,
            move |t| bump(offset(t) / w).2 / (w * w),
        )
        .with_support(FnSupport::Ball { center, radius: half_width }))
    }

    /// `a f + b g`; closed derivatives survive only when both operands carry them.
    pub fn linear_combination(a: f64, f: &TestFunction, b: f64, g: &TestFunction) -> Self {
        let (fe, ge) = (f.eval.clone(), g.eval.clone());
        let eval: EvalFn = Arc::new(move |x| Ok(a * fe(x)? + b * ge(x)?));
        let gradient: Option<GradFn> = match (&f.gradient, &g.gradient) {
            (Some(fg), Some(gg)) => {
                let (fg, gg) = (fg.clone(), gg.clone());
                Some(Arc::new(move |x| Ok(fg(x)? * a + gg(x)? * b)))
            }
            _ => None,
        };
        let laplacian: Option<EvalFn> = match (&f.laplacian, &g.laplacian) {
            (Some(fl), Some(gl)) => {
                let (fl, gl) = (fl.clone(), gl.clone());
                Some(Arc::new(move |x| Ok(a * fl(x)? + b * gl(x)?)))
            }
            _ => None,
        };
        let support = if f.support == g.support {
            f.support.clone()
        } else {
            FnSupport::Global
        };
        TestFunction { eval, gradient, laplacian, support }
    }

    pub fn eval(&self, x: &Point) -> Result<f64> {
        (self.eval)(x)
    }

    pub fn support(&self) -> &FnSupport {
        &self.support
    }

    pub fn has_closed_gradient(&self) -> bool {
        self.gradient.is_some()
    }

    pub fn has_closed_laplacian(&self) -> bool {
        self.laplacian.is_some()
    }

    /// Checks that the function and its gradient vanish at 100 seeded points
    /// outside a ball support. Global supports pass trivially.
    pub fn verify_support(&self, m: &Manifold, seed: u64) -> Result<bool> {
        let (center, radius) = match &self.support {
            FnSupport::Ball { center, radius } => (center, *radius),
            FnSupport::AwayFrom { pole, margin } => {
                // the complement of the support is the small ball at the pole
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let model = Manifold::new(m.kind())?;
                let frame = model.frame(pole);
                for _ in 0..100 {
                    let c = DVector::from_fn(frame.dim(), |_, _| rng.random::<f64>() - 0.5);
                    let r = margin * rng.random::<f64>();
                    let dir = frame.vector(&c);
                    let len = m.kind().norm(&dir);
                    if len == 0.0 {
                        continue;
                    }
                    let y = model.exp_at(pole, &(dir * (r / len)))?;
                    if !m.contains(&y) {
                        continue;
                    }
                    if self.eval(&y)? != 0.0 {
                        return Ok(false);
                    }
                }
                return Ok(true);
            }
            FnSupport::Global => return Ok(true),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = Manifold::new(m.kind())?;
        let frame = model.frame(center);
        let reach = if m.kind().is_compact() {
            std::f64::consts::PI - radius
        } else {
            radius.max(1.0)
        };
        let mut checked = 0;
        while checked < 100 {
            let c = DVector::from_fn(frame.dim(), |_, _| rng.random::<f64>() - 0.5);
            let dir = frame.vector(&c);
            let len = m.kind().norm(&dir);
            if len == 0.0 {
                continue;
            }
            let r = radius + 1e-9 + reach * rng.random::<f64>() * 0.999;
            let y = model.exp_at(center, &(dir * (r / len)))?;
            if model.distance(&y, center)? <= radius || !m.contains(&y) {
                continue;
            }
            checked += 1;
            if self.eval(&y)? != 0.0 {
                return Ok(false);
            }
            if let Some(g) = &self.gradient {
                if g(&y)?.amax() != 0.0 {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }
}

/// `∇f(x)`: the closed form if present, otherwise central differences over
/// the deterministic frame.
pub fn intrinsic_gradient(
    m: &Manifold,
    f: &TestFunction,
    x: &Point,
    cfg: &DiffConfig,
) -> Result<Tangent> {
    if let Some(g) = &f.gradient {
        return Ok(Tangent { base: x.clone(), vec: g(x)? });
    }
    m.central_gradient(x, cfg.h_grad, |y| f.eval(y))
}

/// `Δf(x)`: the closed form if present, otherwise the second-difference
/// stencil in geodesic normal coordinates.
pub fn intrinsic_laplacian(
    m: &Manifold,
    f: &TestFunction,
    x: &Point,
    cfg: &DiffConfig,
) -> Result<f64> {
    if let Some(l) = &f.laplacian {
        return l(x);
    }
    m.central_laplacian(x, cfg.h_lap, |y| f.eval(y))
}

/// `(L_P f)(x) = Δf(x) - g(∇φ(x), ∇f(x))`.
pub fn stein_apply(t: &TargetDensity, f: &TestFunction, x: &Point, cfg: &DiffConfig) -> Result<f64> {
    let m = t.manifold();
    if x.kind() != m.kind() {
        return Err(Error::MixedManifolds);
    }
    if !m.contains(x) {
        return Err(Error::OutOfSupport);
    }
    let grad_phi = t.grad_phi_with(x, cfg.h_grad)?;
    let grad_f = intrinsic_gradient(m, f, x, cfg)?;
    let lap = intrinsic_laplacian(m, f, x, cfg)?;
    Ok(lap - m.kind().inner(&grad_phi.vec, &grad_f.vec))
}

/// Monte Carlo estimate of `E_P[L_P f]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SteinEstimate {
    pub estimate: f64,
    /// Standard error using `min(n, ESS)` effective draws.
    pub stderr: f64,
    pub n: usize,
    pub ess: f64,
}

/// Sample mean and standard error of `L_P f` over `samples`.
///
/// The standard error accounts for serial correlation through the
/// effective sample size of the `L_P f` trace (chains of at least 100 draws).
pub fn stein_identity_mc(
    t: &TargetDensity,
    f: &TestFunction,
    samples: &[Point],
    cfg: &DiffConfig,
) -> Result<SteinEstimate> {
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    for x in samples {
        if t.is_singular(x) {
            return Err(Error::SingularPoint);
        }
    }
    let values: Vec<f64> = samples
        .par_iter()
        .map(|x| stein_apply(t, f, x, cfg))
        .collect::<Result<Vec<_>>>()?;
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return Ok(SteinEstimate { estimate: mean, stderr: f64::NAN, n, ess: n as f64 });
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let ess = if n >= 100 {
        integrated_ess(&values).ess.min(n as f64)
    } else {
        n as f64
    };
    Ok(SteinEstimate {
        estimate: mean,
        stderr: (var / ess).sqrt(),
        n,
        ess,
    })
}

/// `∫ [h L_P f + g(∇f, ∇h)] e^{-φ} dv / ∫ e^{-φ} dv` on a quadrature grid.
///
/// Vanishes when the divergence theorem applies to `h e^{-φ} ∇f` without a
/// boundary term.
pub fn symmetry_defect(
    t: &TargetDensity,
    f: &TestFunction,
    h: &TestFunction,
    grid: &QuadratureGrid,
    cfg: &DiffConfig,
) -> Result<f64> {
    let m = t.manifold();
    if grid.kind != m.kind() {
        return Err(Error::MixedManifolds);
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, w) in grid.nodes.iter().zip(&grid.weights) {
        let density = (-t.phi(x)?).exp();
        let lf = stein_apply(t, f, x, cfg)?;
        let gf = intrinsic_gradient(m, f, x, cfg)?;
        let gh = intrinsic_gradient(m, h, x, cfg)?;
        num += w * density * (h.eval(x)? * lf + m.kind().inner(&gf.vec, &gh.vec));
        den += w * density;
    }
    Ok(num / den)
}

/// `max_x |g(n(x), ∇f(x))|` over points on the boundary of a geodesic ball.
pub fn neumann_defect(
    f: &TestFunction,
    domain: &Manifold,
    boundary: &[Point],
    cfg: &DiffConfig,
) -> Result<f64> {
    // f extends past the boundary, so stencils use the unrestricted model
    let model = Manifold::new(domain.kind())?;
    let mut worst: f64 = 0.0;
    for x in boundary {
        let normal = domain.boundary_normal(x)?;
        let grad = intrinsic_gradient(&model, f, x, cfg)?;
        worst = worst.max(domain.kind().inner(&normal.vec, &grad.vec).abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn circle_vm(kappa: f64) -> TargetDensity {
        let c = Manifold::circle();
        TargetDensity::von_mises_fisher(c.clone(), c.point(&[0.0]).unwrap(), kappa).unwrap()
    }

    #[test]
    fn diff_config_validation() {
        assert!(DiffConfig::new(1e-4, 1e-3).is_ok());
        assert!(DiffConfig::new(1e-3, 1e-4).is_err());
        assert!(DiffConfig::new(0.0, 1e-3).is_err());
        assert!(DiffConfig::new(1e-4, 1.0).is_err());
    }

    #[test]
    fn constant_function_is_annihilated() {
        let cfg = DiffConfig::default();
        let s2 = Manifold::sphere(2);
        let t = TargetDensity::von_mises_fisher(s2.clone(), s2.kind().origin(), 2.0).unwrap();
        let x = s2.point(&[0.6, 0.0, 0.8]).unwrap();
        let numeric = TestFunction::new(|_| 3.0);
        assert_eq!(intrinsic_gradient(&s2, &numeric, &x, &cfg).unwrap().norm(), 0.0);
        assert_eq!(intrinsic_laplacian(&s2, &numeric, &x, &cfg).unwrap(), 0.0);
        assert_eq!(stein_apply(&t, &TestFunction::constant(3.0), &x, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn circle_derivatives() {
        let cfg = DiffConfig::default();
        let c = Manifold::circle();
        let sin = TestFunction::new(|x| x.as_slice()[0].sin());
        let x0 = c.point(&[0.0]).unwrap();
        let g = intrinsic_gradient(&c, &sin, &x0, &cfg).unwrap();
        assert!((g.vec[0] - 1.0).abs() < 1e-8);
        let cos = TestFunction::new(|x| x.as_slice()[0].cos());
        for k in 0..50 {
            let th = -PI + 2.0 * PI * k as f64 / 50.0;
            let x = c.point(&[th]).unwrap();
            let lap = intrinsic_laplacian(&c, &cos, &x, &cfg).unwrap();
            assert!((lap + th.cos()).abs() < 1e-6);
        }
    }

    #[test]
    fn stein_apply_examples() {
        let cfg = DiffConfig::default();
        let e1 = Manifold::euclidean(1);
        let g = TargetDensity::gaussian(e1.clone(), DVector::zeros(1), 1.0).unwrap();
        let id = TestFunction::univariate(|x| x, |_| 1.0, |_| 0.0);
        let x = e1.point(&[2.0]).unwrap();
        assert_eq!(stein_apply(&g, &id, &x, &cfg).unwrap(), -2.0);

        let t = circle_vm(2.0);
        let sin = TestFunction::univariate(f64::sin, f64::cos, |t| -t.sin());
        let x = Manifold::circle().point(&[PI / 2.0]).unwrap();
        assert!((stein_apply(&t, &sin, &x, &cfg).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn bump_derivatives_match_differences() {
        for s in [-0.9, -0.5, -0.1, 0.0, 0.3, 0.77] {
            let h = 1e-5;
            let (_, d1, d2) = bump(s);
            let fd1 = (bump(s + h).0 - bump(s - h).0) / (2.0 * h);
            let fd2 = (bump(s + h).0 - 2.0 * bump(s).0 + bump(s - h).0) / (h * h);
            assert!((d1 - fd1).abs() < 1e-7, "s={s}");
            assert!((d2 - fd2).abs() < 1e-4 * d2.abs().max(1.0), "s={s}");
        }
        assert_eq!(bump(1.0), (0.0, 0.0, 0.0));
    }

    #[test]
    fn bumps_vanish_outside_support() {
        let s2 = Manifold::sphere(2);
        let c = s2.point(&[0.0, 0.6, 0.8]).unwrap();
        let f = TestFunction::zonal_bump(c, 0.9).unwrap();
        assert!(f.verify_support(&s2, 3).unwrap());
        let circle = Manifold::circle();
        let g = TestFunction::interval_bump(circle.point(&[1.0]).unwrap(), PI - 0.2).unwrap();
        assert!(g.verify_support(&circle, 5).unwrap());
        // a function that does not vanish fails the check
        let leaky = TestFunction::new(|x| x.as_slice()[2])
            .with_support(f.support().clone());
        assert!(!leaky.verify_support(&s2, 3).unwrap());
    }

    #[test]
    fn zonal_bump_closed_forms_match_stencils() {
        let s2 = Manifold::sphere(2);
        let c = s2.point(&[0.0, 0.6, 0.8]).unwrap();
        let f = TestFunction::zonal_bump(c, 1.2).unwrap();
        let numeric = TestFunction::fallible({
            let f = f.clone();
            move |x| f.eval(x)
        });
        let cfg = DiffConfig::default();
        for p in [[0.1, 0.5, 0.86], [0.3, 0.3, 0.9], [-0.2, 0.9, 0.3]] {
            let x = ManifoldKind::Sphere(2)
                .point(&{
                    let v = DVector::from_column_slice(&p).normalize();
                    [v[0], v[1], v[2]]
                })
                .unwrap();
            let g = intrinsic_gradient(&s2, &f, &x, &cfg).unwrap();
            let gn = intrinsic_gradient(&s2, &numeric, &x, &cfg).unwrap();
            assert!((g.vec - gn.vec).amax() < 1e-6);
            let l = intrinsic_laplacian(&s2, &f, &x, &cfg).unwrap();
            let ln = intrinsic_laplacian(&s2, &numeric, &x, &cfg).unwrap();
            assert!((l - ln).abs() < 1e-4 * l.abs().max(1.0), "{l} vs {ln}");
        }
    }

    #[test]
    fn mc_constant_is_exactly_zero() {
        let t = circle_vm(2.0);
        let pts: Vec<Point> = (0..200)
            .map(|k| Manifold::circle().point(&[-3.0 + 0.03 * k as f64]).unwrap())
            .collect();
        let est = stein_identity_mc(&t, &TestFunction::constant(1.0), &pts, &DiffConfig::default())
            .unwrap();
        assert_eq!((est.estimate, est.stderr), (0.0, 0.0));
        assert_eq!(
            stein_identity_mc(&t, &TestFunction::constant(1.0), &[], &DiffConfig::default()),
            Err(Error::EmptySample)
        );
    }

    #[test]
    fn linearity_with_closed_forms() {
        let t = circle_vm(1.5);
        let cfg = DiffConfig::default();
        let f = TestFunction::univariate(f64::sin, f64::cos, |t| -t.sin());
        let h = TestFunction::univariate(|t| (2.0 * t).cos(), |t| -2.0 * (2.0 * t).sin(), |t| {
            -4.0 * (2.0 * t).cos()
        });
        let combo = TestFunction::linear_combination(0.7, &f, -2.5, &h);
        assert!(combo.has_closed_gradient() && combo.has_closed_laplacian());
        for k in 0..20 {
            let x = Manifold::circle().point(&[-3.0 + 0.3 * k as f64]).unwrap();
            let lhs = stein_apply(&t, &combo, &x, &cfg).unwrap();
            let rhs = 0.7 * stein_apply(&t, &f, &x, &cfg).unwrap()
                - 2.5 * stein_apply(&t, &h, &x, &cfg).unwrap();
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn symmetry_defect_examples() {
        let cfg = DiffConfig::default();
        let t = circle_vm(2.0);
        let grid = QuadratureGrid::circle(4096);
        let one = TestFunction::constant(1.0);
        let two = TestFunction::constant(2.0);
        assert_eq!(symmetry_defect(&t, &one, &two, &grid, &cfg).unwrap(), 0.0);

        let f = TestFunction::univariate(f64::sin, f64::cos, |t| -t.sin());
        let h = TestFunction::univariate(|t| (2.0 * t).cos(), |t| -2.0 * (2.0 * t).sin(), |t| {
            -4.0 * (2.0 * t).cos()
        });
        let d_fh = symmetry_defect(&t, &f, &h, &grid, &cfg).unwrap();
        let d_hf = symmetry_defect(&t, &h, &f, &grid, &cfg).unwrap();
        assert!(d_fh.abs() <= 1e-10 && d_hf.abs() <= 1e-10);
    }

    #[test]
    fn divergence_of_product_integrates_to_zero() {
        // ∫ [h Δf + g(∇f, ∇h)] dθ = ∫ Div(h ∇f) dθ = 0 on the circle
        let c = Manifold::circle();
        let u = TargetDensity::uniform(c.clone());
        let grid = QuadratureGrid::circle(4096);
        let f = TestFunction::univariate(|t| (3.0 * t).sin() + t.cos(), |t| 3.0 * (3.0 * t).cos() - t.sin(), |t| {
            -9.0 * (3.0 * t).sin() - t.cos()
        });
        let h = TestFunction::univariate(|t| (t.sin()).exp(), |t| t.cos() * t.sin().exp(), |t| {
            (t.cos().powi(2) - t.sin()) * t.sin().exp()
        });
        let d = symmetry_defect(&u, &f, &h, &grid, &DiffConfig::default()).unwrap();
        assert!(d.abs() <= 1e-8);
        // pointwise: Div(h ∇f) = (h f')' by differences
        let cfg = DiffConfig::default();
        for k in 0..16 {
            let x = c.point(&[-3.0 + 0.4 * k as f64]).unwrap();
            let flux = TestFunction::new({
                let (f, h) = (f.clone(), h.clone());
                move |y| {
                    let g = f.gradient.as_ref().unwrap()(y).unwrap()[0];
                    h.eval(y).unwrap() * g
                }
            });
            let div = intrinsic_gradient(&c, &flux, &x, &cfg).unwrap().vec[0];
            let lap = intrinsic_laplacian(&c, &f, &x, &cfg).unwrap();
            let gf = intrinsic_gradient(&c, &f, &x, &cfg).unwrap();
            let gh = intrinsic_gradient(&c, &h, &x, &cfg).unwrap();
            let rhs = h.eval(&x).unwrap() * lap + gf.dot(&gh);
            assert!((div - rhs).abs() < 1e-6 * rhs.abs().max(1.0));
        }
    }

    #[test]
    fn interval_boundary_terms() {
        let cfg = DiffConfig::default();
        let e1 = Manifold::euclidean(1);
        let unit = e1.clone().with_geodesic_ball(e1.point(&[0.5]).unwrap(), 0.5).unwrap();
        let u = TargetDensity::uniform(unit);
        let grid = QuadratureGrid::interval(0.0, 1.0, 16);
        let x = TestFunction::univariate(|t| t, |_| 1.0, |_| 0.0);
        let one = TestFunction::constant(1.0);
        // [h f' e^{-φ}]_0^1 / Z
        assert!((symmetry_defect(&u, &x, &x, &grid, &cfg).unwrap() - 1.0).abs() < 1e-12);
        assert!(symmetry_defect(&u, &x, &one, &grid, &cfg).unwrap().abs() < 1e-12);
        let half_sq = TestFunction::univariate(|t| 0.5 * t * t, |t| t, |_| 1.0);
        assert!((symmetry_defect(&u, &half_sq, &one, &grid, &cfg).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn neumann_defect_examples() {
        let cfg = DiffConfig::default();
        let e2 = Manifold::euclidean(2);
        let ball = e2.clone().with_geodesic_ball(e2.kind().origin(), 1.0).unwrap();
        let boundary = ball.boundary_points(64).unwrap();
        assert_eq!(neumann_defect(&TestFunction::constant(2.0), &ball, &boundary, &cfg).unwrap(), 0.0);
        // ρ(r^2) = (r^2 - 1)^2 has ρ'(1) = 0
        let radial = TestFunction::new(|x| (x.coords().norm_squared() - 1.0).powi(2));
        let closed = radial
            .clone()
            .with_gradient(|x| x.coords() * (4.0 * (x.coords().norm_squared() - 1.0)));
        assert!(neumann_defect(&closed, &ball, &boundary, &cfg).unwrap() <= 1e-8);
        // the central difference carries a 4h^2 truncation term here
        let fine = DiffConfig::new(1e-5, 1e-3).unwrap();
        assert!(neumann_defect(&radial, &ball, &boundary, &fine).unwrap() <= 1e-8);
        let x1 = TestFunction::coordinate(ManifoldKind::Euclidean(2), 0).unwrap();
        let d = neumann_defect(&x1, &ball, &boundary, &cfg).unwrap();
        assert!((d - 1.0).abs() < 1e-12);
        let inside = [ball.point(&[0.2, 0.1]).unwrap()];
        assert!(matches!(
            neumann_defect(&x1, &ball, &inside, &cfg),
            Err(Error::NotOnBoundary { .. })
        ));
    }
}
