//! Kernels on the models, the second-order Stein kernel
//! `k_P(x, y) = L_x L_y k(x, y)`, KSD estimators and a wild-bootstrap
//! goodness-of-fit test.
//!
//! The reported KSD is `E k_P(X, X')`, the squared discrepancy.

use std::cmp::Ordering;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, ManifoldKind, Point, CUT_LOCUS_GUARD};
use crate::measures::TargetDensity;
use crate::operator::{stein_apply, DiffConfig, TestFunction};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    /// `exp(-d(x, y)^2 / (2 ℓ^2))`; not guaranteed positive definite on
    /// curved models.
    GeodesicGaussian,
    /// `exp(-‖x - y‖^2 / (2 ℓ^2))` in the ambient coordinates of the model.
    ChordalGaussian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeMode {
    /// Closed form where one exists, nested differences otherwise.
    Auto,
    ClosedForm,
    NestedFd,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub kind: KernelKind,
    pub lengthscale: f64,
    /// Overall scale; `k(x, x) = amplitude`.
    pub amplitude: f64,
    pub mode: DerivativeMode,
}

impl Kernel {
    pub fn new(kind: KernelKind, lengthscale: f64) -> Result<Self> {
        if !(lengthscale > 0.0 && lengthscale.is_finite()) {
            return Err(Error::InvalidSpec(format!("lengthscale {lengthscale} must be positive")));
        }
        Ok(Kernel { kind, lengthscale, amplitude: 1.0, mode: DerivativeMode::Auto })
    }

    pub fn geodesic(lengthscale: f64) -> Result<Self> {
        Self::new(KernelKind::GeodesicGaussian, lengthscale)
    }

    pub fn chordal(lengthscale: f64) -> Result<Self> {
        Self::new(KernelKind::ChordalGaussian, lengthscale)
    }

    pub fn with_amplitude(mut self, amplitude: f64) -> Result<Self> {
        if !(amplitude > 0.0 && amplitude.is_finite()) {
            return Err(Error::InvalidSpec(format!("amplitude {amplitude} must be positive")));
        }
        self.amplitude = amplitude;
        Ok(self)
    }

    pub fn with_mode(mut self, mode: DerivativeMode) -> Self {
        self.mode = mode;
        self
    }

    /// Whether the closed-form Stein kernel covers this kernel on `kind`.
    pub fn has_closed_form(&self, kind: ManifoldKind) -> bool {
        match kind {
            ManifoldKind::Circle | ManifoldKind::FlatTorus(_) | ManifoldKind::Euclidean(_) => true,
            ManifoldKind::Sphere(_) => self.kind == KernelKind::ChordalGaussian,
            ManifoldKind::Hyperbolic(_) => false,
        }
    }
}

/// Squared ambient distance between the embedded images of two points.
fn chordal_sq(x: &Point, y: &Point) -> f64 {
    match x.kind() {
        // angles embed as (cos θ, sin θ) per coordinate
        ManifoldKind::Circle | ManifoldKind::FlatTorus(_) => x
            .as_slice()
            .iter()
            .zip(y.as_slice())
            .map(|(a, b)| 2.0 - 2.0 * (a - b).cos())
            .sum(),
        _ => (x.coords() - y.coords()).norm_squared(),
    }
}

fn check_cut_locus(k: &Kernel, x: &Point, y: &Point) -> Result<()> {
    if k.kind == KernelKind::GeodesicGaussian
        && x.kind().is_compact()
        && x.kind().cut_locus_distance(x, y) <= CUT_LOCUS_GUARD
    {
        return Err(Error::CutLocus);
    }
    Ok(())
}

/// `k(x, y)`.
pub fn kernel_eval(k: &Kernel, x: &Point, y: &Point) -> Result<f64> {
    if x.kind() != y.kind() {
        return Err(Error::MixedManifolds);
    }
    check_cut_locus(k, x, y)?;
    let sq = match k.kind {
        KernelKind::GeodesicGaussian => crate::geometry::distance(x, y)?.powi(2),
        KernelKind::ChordalGaussian => chordal_sq(x, y),
    };
    Ok(k.amplitude * (-sq / (2.0 * k.lengthscale * k.lengthscale)).exp())
}

/// Derivatives `[κ, κ', κ'', κ''', κ'''']` of `κ = exp(g)` from those of `g`.
fn exp_derivatives(g: [f64; 5]) -> [f64; 5] {
    let [g0, g1, g2, g3, g4] = g;
    let k = g0.exp();
    [
        k,
        g1 * k,
        (g2 + g1 * g1) * k,
        (g3 + 3.0 * g1 * g2 + g1.powi(3)) * k,
        (g4 + 4.0 * g1 * g3 + 3.0 * g2 * g2 + 6.0 * g1 * g1 * g2 + g1.powi(4)) * k,
    ]
}

/// One-dimensional profile of a separable kernel on a flat model at offset `d`.
fn profile(k: &Kernel, periodic: bool, d: f64) -> [f64; 5] {
    let a = 1.0 / (k.lengthscale * k.lengthscale);
    if periodic && k.kind == KernelKind::ChordalGaussian {
        // exp((cos d - 1) / ℓ^2)
        let (s, c) = d.sin_cos();
        exp_derivatives([a * (c - 1.0), -a * s, -a * c, a * s, a * c])
    } else {
        exp_derivatives([-0.5 * a * d * d, -a * d, -a, 0.0, 0.0])
    }
}

/// `Δ²K + (b - a)·∇ΔK - a^T Hess K b` for a product kernel `K(x - y)`.
fn flat_stein_kernel(kappa: &[[f64; 5]], a: &[f64], b: &[f64]) -> f64 {
    let n = kappa.len();
    let except = |skip: &[usize]| -> f64 {
        (0..n).filter(|l| !skip.contains(l)).map(|l| kappa[l][0]).product()
    };
    let mut bilaplacian = 0.0;
    let mut drift = 0.0;
    let mut hess = 0.0;
    for i in 0..n {
        let pi = except(&[i]);
        bilaplacian += kappa[i][4] * pi;
        let mut grad_lap = kappa[i][3] * pi;
        hess += a[i] * b[i] * kappa[i][2] * pi;
        for j in 0..n {
            if j == i {
                continue;
            }
            let pij = except(&[i, j]);
            bilaplacian += kappa[i][2] * kappa[j][2] * pij;
            grad_lap += kappa[i][1] * kappa[j][2] * pij;
            hess += a[i] * b[j] * kappa[i][1] * kappa[j][1] * pij;
        }
        drift += (b[i] - a[i]) * grad_lap;
    }
    bilaplacian + drift - hess
}

fn closed_form(t: &TargetDensity, k: &Kernel, x: &Point, y: &Point, cfg: &DiffConfig) -> Result<f64> {
    let kind = x.kind();
    let a = t.grad_phi_with(x, cfg.h_grad)?.vec;
    let b = t.grad_phi_with(y, cfg.h_grad)?.vec;
    let value = match kind {
        ManifoldKind::Sphere(n) => {
            let n = n as f64;
            let tt = x.coords().dot(y.coords());
            let inv = 1.0 / (k.lengthscale * k.lengthscale);
            // G(t) = exp((t - 1) / ℓ^2) and its derivatives
            let g0 = ((tt - 1.0) * inv).exp();
            let g = [g0, g0 * inv, g0 * inv.powi(2), g0 * inv.powi(3), g0 * inv.powi(4)];
            let q = 1.0 - tt * tt;
            let a1 = q * g[3] - (n + 2.0) * tt * g[2] - n * g[1];
            let a2 = q * g[4] - (n + 4.0) * tt * g[3] - (2.0 * n + 2.0) * g[2];
            let bb = q * a2 - n * tt * a1;
            let bx = b.dot(x.coords());
            let ay = a.dot(y.coords());
            bb - a1 * (bx + ay) + g[2] * ay * bx + g[1] * a.dot(&b)
        }
        _ => {
            let periodic = kind.is_periodic();
            let kappa: Vec<[f64; 5]> = x
                .as_slice()
                .iter()
                .zip(y.as_slice())
                .map(|(xi, yi)| {
                    let d = if periodic { wrap_angle(xi - yi) } else { xi - yi };
                    profile(k, periodic, d)
                })
                .collect();
            flat_stein_kernel(&kappa, a.as_slice(), b.as_slice())
        }
    };
    Ok(k.amplitude * value)
}

fn nested_fd(t: &TargetDensity, k: &Kernel, x: &Point, y: &Point, cfg: &DiffConfig) -> Result<f64> {
    // every derivative uses h_lap: the inner values already carry O(ε/h^2) noise
    let step = DiffConfig { h_grad: cfg.h_lap, h_lap: cfg.h_lap };
    let (t_in, k_in, y_in) = (t.clone(), *k, y.clone());
    let outer = TestFunction::fallible(move |xp: &Point| {
        let xp = xp.clone();
        let f = TestFunction::fallible(move |yp: &Point| kernel_eval(&k_in, &xp, yp));
        stein_apply(&t_in, &f, &y_in, &step)
    });
    stein_apply(t, &outer, x, &step)
}

/// `k_P(x, y)`: `L_P` applied in `y`, then in `x`.
///
/// The pair is put in a canonical order first, so `k_P(x, y)` and
/// `k_P(y, x)` are bitwise equal.
pub fn stein_kernel(t: &TargetDensity, k: &Kernel, x: &Point, y: &Point, cfg: &DiffConfig) -> Result<f64> {
    let kind = t.manifold().kind();
    if x.kind() != kind || y.kind() != kind {
        return Err(Error::MixedManifolds);
    }
    if !t.manifold().contains(x) || !t.manifold().contains(y) {
        return Err(Error::OutOfSupport);
    }
    if t.is_singular(x) || t.is_singular(y) {
        return Err(Error::SingularPoint);
    }
    check_cut_locus(k, x, y)?;
    let (x, y) = if x.lex_cmp(y) == Ordering::Greater { (y, x) } else { (x, y) };
    match k.mode {
        DerivativeMode::NestedFd => nested_fd(t, k, x, y, cfg),
        DerivativeMode::ClosedForm if !k.has_closed_form(kind) => Err(Error::UnsupportedKernel(
            format!("no closed-form Stein kernel for {:?} on {}", k.kind, kind.name()),
        )),
        _ if k.has_closed_form(kind) => closed_form(t, k, x, y, cfg),
        _ => nested_fd(t, k, x, y, cfg),
    }
}

/// Stein kernel matrix over a sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SteinGram {
    pub values: DMatrix<f64>,
    /// Index of each row in the originating sample.
    pub sample_ids: Vec<usize>,
}

impl SteinGram {
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    /// `max |G_ij - G_ji|`.
    pub fn asymmetry(&self) -> f64 {
        (&self.values - self.values.transpose()).amax()
    }

    /// `λ_min / λ_max`; a clearly negative value flags a kernel that is not
    /// positive semidefinite on this sample.
    pub fn min_eigen_ratio(&self) -> f64 {
        let eig = SymmetricEigen::new(self.values.clone()).eigenvalues;
        let max = eig.max();
        if max <= 0.0 {
            return f64::NEG_INFINITY;
        }
        eig.min() / max
    }
}

fn upper_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect()
}

fn assemble(n: usize, pairs: &[(usize, usize)], vals: Vec<f64>) -> SteinGram {
    let mut m = DMatrix::zeros(n, n);
    for (&(i, j), v) in pairs.iter().zip(vals) {
        m[(i, j)] = v;
        m[(j, i)] = v;
    }
    SteinGram { values: m, sample_ids: (0..n).collect() }
}

fn entry(t: &TargetDensity, k: &Kernel, pts: &[Point], i: usize, j: usize, cfg: &DiffConfig) -> Result<f64> {
    stein_kernel(t, k, &pts[i], &pts[j], cfg)
        .map_err(|e| Error::AtPair { i, j, source: Box::new(e) })
}

/// Gram matrix of `k_P`, computed on the upper triangle in parallel and
/// mirrored.
pub fn stein_gram(t: &TargetDensity, k: &Kernel, points: &[Point], cfg: &DiffConfig) -> Result<SteinGram> {
    if points.is_empty() {
        return Err(Error::EmptySample);
    }
    let pairs = upper_pairs(points.len());
    let vals = pairs
        .par_iter()
        .map(|&(i, j)| entry(t, k, points, i, j, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(points.len(), &pairs, vals))
}

/// Sequential build of the same matrix.
pub fn stein_gram_serial(t: &TargetDensity, k: &Kernel, points: &[Point], cfg: &DiffConfig) -> Result<SteinGram> {
    if points.is_empty() {
        return Err(Error::EmptySample);
    }
    let pairs = upper_pairs(points.len());
    let vals = pairs
        .iter()
        .map(|&(i, j)| entry(t, k, points, i, j, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(points.len(), &pairs, vals))
}

/// Removes points that sit on the cut locus of an earlier kept point for a
/// geodesic kernel. Returns the kept points and the dropped indices.
pub fn drop_cut_locus_points(k: &Kernel, points: &[Point]) -> (Vec<Point>, Vec<usize>) {
    let mut kept: Vec<Point> = Vec::with_capacity(points.len());
    let mut dropped = Vec::new();
    for (i, p) in points.iter().enumerate() {
        if kept.iter().any(|q| check_cut_locus(k, q, p).is_err()) {
            dropped.push(i);
        } else {
            kept.push(p.clone());
        }
    }
    (kept, dropped)
}

/// Order-independent sum: the values are sorted before accumulation.
fn sorted_sum(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.into_iter().sum()
}

/// `(1 / n^2) Σ_ij G_ij`.
pub fn v_statistic(g: &SteinGram) -> Result<f64> {
    let n = g.len();
    if n == 0 {
        return Err(Error::EmptySample);
    }
    Ok(sorted_sum(g.values.iter().copied().collect()) / (n * n) as f64)
}

/// `(1 / (n (n - 1))) Σ_{i != j} G_ij`.
pub fn u_statistic(g: &SteinGram) -> Result<f64> {
    let n = g.len();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let off: Vec<f64> = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| g.values[(i, j)])
        .collect();
    Ok(sorted_sum(off) / (n * (n - 1)) as f64)
}

/// `(u_stat, v_stat)`.
pub fn ksd_estimate(g: &SteinGram) -> Result<(f64, f64)> {
    Ok((u_statistic(g)?, v_statistic(g)?))
}

/// Jackknife standard error of the U-statistic (leave-one-out).
pub fn jackknife_se(g: &SteinGram) -> Result<f64> {
    let n = g.len();
    if n < 3 {
        return Err(Error::TooFewSamples { needed: 3, got: n });
    }
    let row_off: Vec<f64> = (0..n)
        .map(|i| (0..n).filter(|&j| j != i).map(|j| g.values[(i, j)]).sum())
        .collect();
    let total: f64 = row_off.iter().sum();
    let denom = ((n - 1) * (n - 2)) as f64;
    let loo: Vec<f64> = row_off.iter().map(|r| (total - 2.0 * r) / denom).collect();
    let mean = loo.iter().sum::<f64>() / n as f64;
    let var = (n - 1) as f64 / n as f64 * loo.iter().map(|u| (u - mean).powi(2)).sum::<f64>();
    Ok(var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GofResult {
    pub ksd_u: f64,
    pub ksd_v: f64,
    pub threshold: f64,
    pub p_value: f64,
    pub reject: bool,
    #[serde(rename = "B")]
    pub b: usize,
    pub seed: u64,
    pub level: f64,
}

/// Wild-bootstrap test of `H_0: sample ~ P` with the V-statistic.
///
/// Replicate `b` draws Rademacher signs from stream `b` of the seed and
/// computes `(1 / n^2) ε^T G ε`. The threshold is the empirical
/// `(1 - level)` quantile of the replicates and `p_value` the fraction of
/// replicates at or above the observed statistic.
pub fn gof_wild_bootstrap(g: &SteinGram, level: f64, b: usize, seed: u64) -> Result<GofResult> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidLevel(level));
    }
    let n = g.len();
    if n < 10 {
        return Err(Error::TooFewSamples { needed: 10, got: n });
    }
    if b == 0 {
        return Err(Error::InvalidSpec("bootstrap count must be positive".into()));
    }
    let (ksd_u, ksd_v) = ksd_estimate(g)?;
    let mut stats: Vec<f64> = (0..b as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r);
            let eps: Vec<f64> = (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
            let mut acc = 0.0;
            for i in 0..n {
                let row: f64 = (0..n).map(|j| g.values[(i, j)] * eps[j]).sum();
                acc += eps[i] * row;
            }
            acc / (n * n) as f64
        })
        .collect();
    let exceed = stats.iter().filter(|&&s| s >= ksd_v).count();
    stats.sort_by(f64::total_cmp);
    let rank = ((1.0 - level) * b as f64).ceil() as usize;
    let threshold = stats[rank.clamp(1, b) - 1];
    Ok(GofResult {
        ksd_u,
        ksd_v,
        threshold,
        p_value: exceed as f64 / b as f64,
        reject: ksd_v > threshold,
        b,
        seed,
        level,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Manifold;
    use nalgebra::DVector;
    use std::f64::consts::PI;

    #[test]
    fn kernel_values() {
        let s2 = Manifold::sphere(2);
        let x = s2.point(&[0.0, 0.0, 1.0]).unwrap();
        let y = s2.point(&[0.0, 0.0, -1.0]).unwrap();
        let k = Kernel::chordal(1.0).unwrap();
        assert_eq!(kernel_eval(&k, &x, &x).unwrap(), 1.0);
        assert!((kernel_eval(&k, &x, &y).unwrap() - (-2.0f64).exp()).abs() < 1e-15);
        let g = Kernel::geodesic(1.0).unwrap();
        assert_eq!(kernel_eval(&g, &x, &y), Err(Error::CutLocus));
        let c = Manifold::circle();
        assert_eq!(
            kernel_eval(&k, &x, &c.origin()),
            Err(Error::MixedManifolds)
        );
    }

    #[test]
    fn exp_derivatives_match_differences() {
        let k = Kernel::chordal(0.8).unwrap();
        for d in [-2.0, -0.3, 0.0, 0.7, 2.9] {
            let p = profile(&k, true, d);
            let h = 1e-4;
            for order in 0..4 {
                let fd = (profile(&k, true, d + h)[order] - profile(&k, true, d - h)[order]) / (2.0 * h);
                assert!((fd - p[order + 1]).abs() < 1e-6, "order {order} at {d}");
            }
        }
    }

    #[test]
    fn closed_form_matches_nested_differences_on_euclidean() {
        let e1 = Manifold::euclidean(1);
        let t = TargetDensity::gaussian(e1.clone(), DVector::zeros(1), 1.0).unwrap();
        let k = Kernel::chordal(1.0).unwrap();
        let x = e1.point(&[0.0]).unwrap();
        let cfg = DiffConfig::new(5e-3, 5e-3).unwrap();
        let closed = stein_kernel(&t, &k, &x, &x, &cfg).unwrap();
        // Δ²K(0) = 3 for the unit Gaussian profile, drift terms vanish at 0
        assert!((closed - 3.0).abs() < 1e-14);
        let nested = stein_kernel(&t, &k.with_mode(DerivativeMode::NestedFd), &x, &x, &cfg).unwrap();
        assert!((closed - nested).abs() < 1e-4, "{closed} vs {nested}");
    }

    #[test]
    fn sphere_closed_form_matches_nested_differences() {
        let s2 = Manifold::sphere(2);
        let t = TargetDensity::von_mises_fisher(s2.clone(), s2.origin(), 2.0).unwrap();
        let k = Kernel::chordal(1.0).unwrap();
        let cfg = DiffConfig::new(5e-3, 5e-3).unwrap();
        let x = s2.point(&[0.6, 0.0, 0.8]).unwrap();
        let y = s2.point(&[0.0, -0.6, 0.8]).unwrap();
        for (a, b) in [(&x, &y), (&x, &x)] {
            let closed = stein_kernel(&t, &k, a, b, &cfg).unwrap();
            let nested = stein_kernel(&t, &k.with_mode(DerivativeMode::NestedFd), a, b, &cfg).unwrap();
            assert!((closed - nested).abs() < 1e-3 * closed.abs().max(1.0), "{closed} vs {nested}");
        }
    }

    #[test]
    fn gram_symmetry_and_statistics() {
        let c = Manifold::circle();
        let t = TargetDensity::von_mises_fisher(c.clone(), c.origin(), 1.0).unwrap();
        let k = Kernel::chordal(1.0).unwrap();
        let cfg = DiffConfig::default();
        let pts: Vec<Point> = (0..12).map(|i| c.point(&[-3.0 + 0.5 * i as f64]).unwrap()).collect();
        let g = stein_gram(&t, &k, &pts, &cfg).unwrap();
        assert_eq!(g.asymmetry(), 0.0);
        assert_eq!(g, stein_gram_serial(&t, &k, &pts, &cfg).unwrap());
        let one = stein_gram(&t, &k, &pts[..1], &cfg).unwrap();
        assert_eq!(v_statistic(&one).unwrap(), one.values[(0, 0)]);
        assert_eq!(u_statistic(&one), Err(Error::TooFewSamples { needed: 2, got: 1 }));
        let twin = stein_gram(&t, &k, &[pts[3].clone(), pts[3].clone()], &cfg).unwrap();
        assert_eq!(u_statistic(&twin).unwrap(), twin.values[(0, 1)]);
        assert!(matches!(gof_wild_bootstrap(&g, 1.5, 10, 0), Err(Error::InvalidLevel(_))));
        assert!(matches!(
            gof_wild_bootstrap(&one, 0.05, 10, 0),
            Err(Error::TooFewSamples { needed: 10, got: 1 })
        ));
        let r1 = gof_wild_bootstrap(&g, 0.05, 200, 9).unwrap();
        assert_eq!(r1, gof_wild_bootstrap(&g, 0.05, 200, 9).unwrap());
        assert_eq!(r1.reject, r1.ksd_v > r1.threshold);
    }

    #[test]
    fn geodesic_kernel_rejects_antipodal_pairs() {
        let c = Manifold::circle();
        let t = TargetDensity::uniform(c.clone());
        let k = Kernel::geodesic(0.5).unwrap();
        let x = c.point(&[0.0]).unwrap();
        let y = c.point(&[PI]).unwrap();
        assert_eq!(stein_kernel(&t, &k, &x, &y, &DiffConfig::default()), Err(Error::CutLocus));
        let (kept, dropped) = drop_cut_locus_points(&k, &[x.clone(), y, x]);
        assert_eq!((kept.len(), dropped), (2, vec![1]));
    }
}
