//! Target densities `e^{-φ}` known up to normalization.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{Manifold, ManifoldKind, Point, Tangent, CUT_LOCUS_GUARD};
use crate::quadrature::QuadratureGrid;

/// Radius of the refusal band around poles and cut loci for derivatives of φ.
pub const SINGULAR_GUARD: f64 = 1e-6;

/// Default step for finite-difference gradients of φ.
pub const DEFAULT_H_GRAD: f64 = 1e-4;

/// A potential `φ` on `R^n` with its gradient and, optionally, its Hessian.
pub trait GibbsPotential: Send + Sync + fmt::Debug {
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    fn hessian(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }
}

/// `φ(x) = |x - mean|^2 / (2σ^2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPotential {
    pub mean: DVector<f64>,
    pub sigma: f64,
}

impl GibbsPotential for GaussianPotential {
    fn value(&self, x: &DVector<f64>) -> f64 {
        (x - &self.mean).norm_squared() / (2.0 * self.sigma * self.sigma)
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        (x - &self.mean) / (self.sigma * self.sigma)
    }

    fn hessian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        let n = x.len();
        Some(DMatrix::identity(n, n) / (self.sigma * self.sigma))
    }
}

#[derive(Clone, Debug)]
pub enum Family {
    /// `φ = 0` on the support; on a geodesic ball this is the truncated uniform law.
    Uniform,
    /// `φ = d(x, μ)^α / σ^α`.
    IntrinsicRadial { alpha: f64, mu: Point, sigma: f64 },
    /// `φ = Log_μ(x)ᵀ Γ Log_μ(x)` with `Γ` in the frame at `μ`.
    RiemannianGaussian { mu: Point, gamma: DMatrix<f64> },
    /// `φ = -κ <x, μ>` on spheres, `-κ cos(θ - μ)` on the circle.
    VonMisesFisher { mu: Point, kappa: f64 },
    EuclideanGibbs(Arc<dyn GibbsPotential>),
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Uniform => "uniform",
            Family::IntrinsicRadial { .. } => "intrinsic-radial",
            Family::RiemannianGaussian { .. } => "riemannian-gaussian",
            Family::VonMisesFisher { .. } => "von-mises-fisher",
            Family::EuclideanGibbs(_) => "euclidean-gibbs",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Smoothness {
    Smooth,
    LocallyLipschitz,
    SmoothOffCutLocus,
}

#[derive(Clone, Debug)]
pub struct TargetDensity {
    manifold: Manifold,
    family: Family,
    smoothness: Smoothness,
}

impl TargetDensity {
    pub fn new(manifold: Manifold, family: Family) -> Result<Self> {
        let kind = manifold.kind();
        let check_point = |p: &Point| {
            if p.kind() != kind {
                Err(Error::MixedManifolds)
            } else {
                Ok(())
            }
        };
        let smoothness = match &family {
            Family::Uniform => Smoothness::Smooth,
            Family::IntrinsicRadial { alpha, mu, sigma } => {
                check_point(mu)?;
                if !(*alpha >= 1.0 && alpha.is_finite()) {
                    return Err(Error::InvalidSpec(format!("radial exponent {alpha} < 1")));
                }
                if !(*sigma > 0.0 && sigma.is_finite()) {
                    return Err(Error::InvalidSpec(format!("scale {sigma} must be positive")));
                }
                if *alpha < 2.0 {
                    Smoothness::LocallyLipschitz
                } else if kind.is_compact() {
                    Smoothness::SmoothOffCutLocus
                } else {
                    Smoothness::Smooth
                }
            }
            Family::RiemannianGaussian { mu, gamma } => {
                check_point(mu)?;
                let n = kind.dim();
                if gamma.nrows() != n || gamma.ncols() != n {
                    return Err(Error::DimensionMismatch { expected: n, got: gamma.nrows() });
                }
                if (gamma - gamma.transpose()).amax() > 1e-12 * gamma.amax().max(1.0) {
                    return Err(Error::InvalidSpec("Γ is not symmetric".into()));
                }
                if gamma.clone().cholesky().is_none() {
                    return Err(Error::InvalidSpec("Γ is not positive definite".into()));
                }
                if kind.is_compact() {
                    Smoothness::SmoothOffCutLocus
                } else {
                    Smoothness::Smooth
                }
            }
            Family::VonMisesFisher { mu, kappa } => {
                check_point(mu)?;
                if !matches!(kind, ManifoldKind::Sphere(_) | ManifoldKind::Circle) {
                    return Err(Error::UnsupportedManifold(format!(
                        "von Mises-Fisher on {}",
                        kind.name()
                    )));
                }
                if !(*kappa >= 0.0 && kappa.is_finite()) {
                    return Err(Error::InvalidSpec(format!("concentration {kappa} < 0")));
                }
                Smoothness::Smooth
            }
            Family::EuclideanGibbs(_) => {
                if !matches!(kind, ManifoldKind::Euclidean(_)) {
                    return Err(Error::UnsupportedManifold(format!(
                        "Gibbs potential on {}",
                        kind.name()
                    )));
                }
                Smoothness::Smooth
            }
        };
        Ok(TargetDensity { manifold, family, smoothness })
    }

    pub fn uniform(manifold: Manifold) -> Self {
        TargetDensity { manifold, family: Family::Uniform, smoothness: Smoothness::Smooth }
    }

    pub fn intrinsic_radial(manifold: Manifold, alpha: f64, mu: Point, sigma: f64) -> Result<Self> {
        Self::new(manifold, Family::IntrinsicRadial { alpha, mu, sigma })
    }

    pub fn riemannian_gaussian(manifold: Manifold, mu: Point, gamma: DMatrix<f64>) -> Result<Self> {
        Self::new(manifold, Family::RiemannianGaussian { mu, gamma })
    }

    pub fn von_mises_fisher(manifold: Manifold, mu: Point, kappa: f64) -> Result<Self> {
        Self::new(manifold, Family::VonMisesFisher { mu, kappa })
    }

    /// Gaussian `N(mean, σ^2 I)` on a (possibly restricted) Euclidean space.
    pub fn gaussian(manifold: Manifold, mean: DVector<f64>, sigma: f64) -> Result<Self> {
        if mean.len() != manifold.dim() {
            return Err(Error::DimensionMismatch { expected: manifold.dim(), got: mean.len() });
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidSpec(format!("scale {sigma} must be positive")));
        }
        Self::new(
            manifold,
            Family::EuclideanGibbs(Arc::new(GaussianPotential { mean, sigma })),
        )
    }

    pub fn manifold(&self) -> &Manifold {
        &self.manifold
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn smoothness(&self) -> Smoothness {
        self.smoothness
    }

    /// True within [`SINGULAR_GUARD`] of the pole (radial, `α < 2`) or of the
    /// cut locus of `μ` (radial and Riemannian Gaussian on compact models).
    pub fn is_singular(&self, x: &Point) -> bool {
        self.singular_within(x, SINGULAR_GUARD)
    }

    fn singular_within(&self, x: &Point, band: f64) -> bool {
        let kind = self.manifold.kind();
        match &self.family {
            Family::IntrinsicRadial { alpha, mu, .. } => {
                (*alpha < 2.0 && kind.distance_raw(mu.coords(), x.coords()) < band)
                    || kind.cut_locus_distance(mu, x) < band
            }
            Family::RiemannianGaussian { mu, .. } => kind.cut_locus_distance(mu, x) < band,
            _ => false,
        }
    }

    /// `φ(x)` without the support check.
    fn phi_raw(&self, x: &Point) -> Result<f64> {
        let kind = self.manifold.kind();
        Ok(match &self.family {
            Family::Uniform => 0.0,
            Family::IntrinsicRadial { alpha, mu, sigma } => {
                (kind.distance_raw(mu.coords(), x.coords()) / sigma).powf(*alpha)
            }
            Family::RiemannianGaussian { mu, gamma } => {
                let v = kind.log_raw(mu.coords(), x.coords()).map_err(|e| match e {
                    Error::CutLocus => Error::SingularPoint,
                    other => other,
                })?;
                let a = kind.frame(mu).coords(&v);
                a.dot(&(gamma * &a))
            }
            Family::VonMisesFisher { mu, kappa } => match kind {
                ManifoldKind::Circle => -kappa * (x.as_slice()[0] - mu.as_slice()[0]).cos(),
                _ => -kappa * x.coords().dot(mu.coords()),
            },
            Family::EuclideanGibbs(p) => p.value(x.coords()),
        })
    }

    /// The potential `φ(x)`.
    pub fn phi(&self, x: &Point) -> Result<f64> {
        if x.kind() != self.manifold.kind() {
            return Err(Error::MixedManifolds);
        }
        if !self.manifold.contains(x) {
            return Err(Error::OutOfSupport);
        }
        if let Family::RiemannianGaussian { mu, .. } = &self.family {
            if self.manifold.kind().cut_locus_distance(mu, x) <= CUT_LOCUS_GUARD {
                return Err(Error::SingularPoint);
            }
        }
        self.phi_raw(x)
    }

    /// Unnormalized log-density `-φ(x)`.
    pub fn log_density(&self, x: &Point) -> Result<f64> {
        self.phi(x).map(|p| -p)
    }

    pub fn grad_phi(&self, x: &Point) -> Result<Tangent> {
        self.grad_phi_with(x, DEFAULT_H_GRAD)
    }

    /// `∇φ(x)`; closed forms where available, otherwise central differences
    /// with step `h`.
    pub fn grad_phi_with(&self, x: &Point, h: f64) -> Result<Tangent> {
        if x.kind() != self.manifold.kind() {
            return Err(Error::MixedManifolds);
        }
        if !self.manifold.contains(x) {
            return Err(Error::OutOfSupport);
        }
        if self.is_singular(x) {
            return Err(Error::SingularPoint);
        }
        let kind = self.manifold.kind();
        let vec = match &self.family {
            Family::Uniform => DVector::zeros(kind.coord_len()),
            Family::IntrinsicRadial { alpha, mu, sigma } => {
                let d = kind.distance_raw(mu.coords(), x.coords());
                if d == 0.0 {
                    DVector::zeros(kind.coord_len())
                } else {
                    // ∇d = -Log_x(μ) / d
                    let log = kind.log_raw(x.coords(), mu.coords())?;
                    log * (-(alpha / sigma.powf(*alpha)) * d.powf(alpha - 2.0))
                }
            }
            Family::RiemannianGaussian { mu, gamma } if kind.is_flat() => {
                let a = kind.log_raw(mu.coords(), x.coords())?;
                (gamma * a) * 2.0
            }
            Family::RiemannianGaussian { .. } => {
                if self.singular_within(x, 2.0 * h) {
                    return Err(Error::SingularPoint);
                }
                let model = Manifold::new(kind)?;
                return model.central_gradient(x, h, |y| self.phi_raw(y));
            }
            Family::VonMisesFisher { mu, kappa } => match kind {
                ManifoldKind::Circle => DVector::from_element(
                    1,
                    kappa * (x.as_slice()[0] - mu.as_slice()[0]).sin(),
                ),
                _ => kind.project_tangent(x.coords(), mu.coords()) * -kappa,
            },
            Family::EuclideanGibbs(p) => p.gradient(x.coords()),
        };
        Ok(Tangent { base: x.clone(), vec })
    }

    /// `Hess φ` at `x` in the frame at `x`, for the families with a closed form.
    pub fn hess_phi(&self, x: &Point) -> Result<DMatrix<f64>> {
        if self.is_singular(x) {
            return Err(Error::SingularPoint);
        }
        let n = self.manifold.dim();
        match &self.family {
            Family::Uniform => Ok(DMatrix::zeros(n, n)),
            Family::IntrinsicRadial { alpha, mu, sigma } if *alpha == 2.0 => Ok(self
                .manifold
                .hess_dist_sq(mu, x)
                .map_err(|e| match e {
                    Error::CutLocus => Error::SingularPoint,
                    other => other,
                })?
                / (sigma * sigma)),
            Family::EuclideanGibbs(p) => p.hessian(x.coords()).ok_or_else(|| {
                Error::UnsupportedFamily("Gibbs potential without a Hessian".into())
            }),
            other => Err(Error::UnsupportedFamily(format!(
                "no closed-form Hessian for {}",
                other.name()
            ))),
        }
    }

    /// `∫ e^{-φ} dv` by the grid's rule.
    pub fn normalizing_quadrature(&self, grid: &QuadratureGrid) -> Result<f64> {
        if grid.kind != self.manifold.kind() {
            return Err(Error::MixedManifolds);
        }
        grid.integrate(|x| Ok((-self.phi(x)?).exp()))
    }

    /// `min_x λ_min(Ric + Hess φ)` over the given points, with `Ric = c g` on
    /// the space forms.
    pub fn bakry_emery_bound(&self, points: &[Point]) -> Result<f64> {
        let ricci = self.manifold.kind().ricci_constant();
        let mut bound = f64::INFINITY;
        for x in points {
            let h = self.hess_phi(x)?;
            let min = h
                .symmetric_eigenvalues()
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min);
            bound = bound.min(ricci + min);
        }
        if points.is_empty() {
            return Err(Error::EmptySample);
        }
        Ok(bound)
    }
}

/// Numerically computed curvature-dimension constant next to the constant
/// stated in closed form for radial targets on the hyperboloid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurvatureCheck {
    /// `min λ_min(Ric + Hess φ)` over the probe points.
    pub kappa_hat: f64,
    /// `σ^2 - n + 1`, reported for `α = 2` radial targets on `H^n`.
    pub stated_kappa: Option<f64>,
    /// Set when the stated constant differs from `kappa_hat` by more than 1e-6.
    pub discrepancy: bool,
}

impl TargetDensity {
    pub fn curvature_check(&self, points: &[Point]) -> Result<CurvatureCheck> {
        let kappa_hat = self.bakry_emery_bound(points)?;
        let stated_kappa = match (&self.family, self.manifold.kind()) {
            (Family::IntrinsicRadial { alpha, sigma, .. }, ManifoldKind::Hyperbolic(n))
                if *alpha == 2.0 =>
            {
                Some(sigma * sigma - n as f64 + 1.0)
            }
            _ => None,
        };
        Ok(CurvatureCheck {
            kappa_hat,
            stated_kappa,
            discrepancy: stated_kappa.is_some_and(|k| (k - kappa_hat).abs() > 1e-6),
        })
    }
}
