//! Flux-form finite-volume discretizations of `L_P = e^φ Div(e^{-φ} ∇·)` on
//! structured grids, and the spectral quantities built on them.
//!
//! A discrete operator is stored through its face weights `w_ij` and node
//! masses `p_i` (summing to one):
//!
//! `(L f)_i = (1 / p_i) Σ_j w_ij (f_j - f_i)`.
//!
//! Constants are annihilated exactly and `diag(p) L` is symmetric because the
//! same `w_ij` enters both rows. Boundary faces carry no flux, which is the
//! Neumann closure.

use std::f64::consts::PI;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{Manifold, ManifoldKind, Point};
use crate::measures::TargetDensity;
use crate::sparse::{envelope_order, largest_eigenvalue, smallest_eigenpairs, CsrMatrix, Ldl, LowSpectrum};

/// Smallest accepted number of cells per direction.
pub const MIN_RESOLUTION: usize = 16;

/// Cut cells with a smaller area fraction are dropped.
pub const MIN_AREA_FRACTION: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Domain {
    Circle,
    /// `FlatTorus(dim)` with `dim` in {1, 2}.
    Torus { dim: usize },
    Interval { a: f64, b: f64 },
    Rectangle { lo: [f64; 2], hi: [f64; 2] },
    Disk { center: [f64; 2], radius: f64 },
}

impl Domain {
    pub fn kind(&self) -> ManifoldKind {
        match self {
            Domain::Circle => ManifoldKind::Circle,
            Domain::Torus { dim } => ManifoldKind::FlatTorus(*dim),
            Domain::Interval { .. } => ManifoldKind::Euclidean(1),
            Domain::Rectangle { .. } | Domain::Disk { .. } => ManifoldKind::Euclidean(2),
        }
    }

    pub fn boundary(&self) -> Boundary {
        match self {
            Domain::Circle | Domain::Torus { .. } => Boundary::Periodic,
            _ => Boundary::Neumann,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Periodic,
    Neumann,
}

/// A structured grid: `resolution` cells per direction.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridSpec {
    pub domain: Domain,
    pub resolution: usize,
    pub boundary: Boundary,
}

impl GridSpec {
    pub fn new(domain: Domain, resolution: usize) -> Result<Self> {
        let boundary = domain.boundary();
        let g = GridSpec { domain, resolution, boundary };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution < MIN_RESOLUTION {
            return Err(Error::InvalidSpec(format!(
                "resolution {} below {MIN_RESOLUTION}",
                self.resolution
            )));
        }
        if self.boundary != self.domain.boundary() {
            return Err(Error::InvalidSpec(format!(
                "{:?} boundary handling on {:?}",
                self.boundary, self.domain
            )));
        }
        match &self.domain {
            Domain::Torus { dim } if !(1..=2).contains(dim) => Err(Error::UnsupportedManifold(
                format!("no grid on FlatTorus({dim})"),
            )),
            Domain::Interval { a, b } if !(a < b) => {
                Err(Error::InvalidSpec(format!("empty interval [{a}, {b}]")))
            }
            Domain::Rectangle { lo, hi } if !(lo[0] < hi[0] && lo[1] < hi[1]) => {
                Err(Error::InvalidSpec("empty rectangle".into()))
            }
            Domain::Disk { radius, .. } if !(*radius > 0.0) => {
                Err(Error::InvalidSpec(format!("disk radius {radius}")))
            }
            _ => Ok(()),
        }
    }

    /// The grid covering a model or a Euclidean geodesic ball.
    pub fn for_manifold(m: &Manifold, resolution: usize) -> Result<Self> {
        let domain = match (m.kind(), m.ball()) {
            (ManifoldKind::Circle, None) => Domain::Circle,
            (ManifoldKind::FlatTorus(dim), None) => Domain::Torus { dim },
            (ManifoldKind::Euclidean(1), Some((c, r))) => {
                let c = c.as_slice()[0];
                Domain::Interval { a: c - r, b: c + r }
            }
            (ManifoldKind::Euclidean(2), Some((c, r))) => Domain::Disk {
                center: [c.as_slice()[0], c.as_slice()[1]],
                radius: r,
            },
            (kind, _) => {
                return Err(Error::UnsupportedManifold(format!(
                    "no structured grid on {} with restriction {:?}",
                    kind.name(),
                    m.restriction()
                )))
            }
        };
        Self::new(domain, resolution)
    }
}

/// The discretized operator; see the module documentation.
#[derive(Clone, Debug)]
pub struct DiscreteOperator {
    nodes: Vec<Point>,
    p: Vec<f64>,
    /// Symmetric face weights, no diagonal.
    w: CsrMatrix,
    interior: Vec<bool>,
    domain: Option<Domain>,
}

/// Area of `{(x, y) in [0, x] x [0, y] : x^2 + y^2 <= r^2}`, extended as an
/// odd function in each argument.
fn quadrant_area(x: f64, y: f64, r: f64) -> f64 {
    let sign = x.signum() * y.signum();
    let (x, y) = (x.abs().min(r), y.abs());
    // G(u) = ∫_0^u sqrt(r^2 - s^2) ds
    let g = |u: f64| 0.5 * (u * (r * r - u * u).max(0.0).sqrt() + r * r * (u / r).clamp(-1.0, 1.0).asin());
    let knee = (r * r - y * y).max(0.0).sqrt().min(x);
    sign * (y * knee + g(x) - g(knee))
}

/// Exact area of the intersection of an axis-aligned box with a disk
/// centered at the origin.
fn box_disk_area(x0: f64, x1: f64, y0: f64, y1: f64, r: f64) -> f64 {
    let a = quadrant_area(x1, y1, r) - quadrant_area(x0, y1, r) - quadrant_area(x1, y0, r)
        + quadrant_area(x0, y0, r);
    a.max(0.0)
}

/// The wet part `[lo, hi]` of the segment `{c} x [s0, s1]` inside the
/// origin-centered disk of radius `r`.
fn wet_segment(c: f64, s0: f64, s1: f64, r: f64) -> Option<(f64, f64)> {
    if c.abs() >= r {
        return None;
    }
    let half = (r * r - c * c).sqrt();
    let (lo, hi) = (s0.max(-half), s1.min(half));
    (hi > lo).then_some((lo, hi))
}

struct Assembly {
    nodes: Vec<Point>,
    volume: Vec<f64>,
    /// Face `(i, j, area / distance, face point)`.
    faces: Vec<(usize, usize, f64, Point)>,
    interior: Vec<bool>,
}

fn periodic_grid(dim: usize, n: usize, kind: ManifoldKind) -> Result<Assembly> {
    let h = 2.0 * PI / n as f64;
    let center = |i: usize| -PI + (i as f64 + 0.5) * h;
    let face = |i: usize| -PI + (i + 1) as f64 * h;
    let mut asm = Assembly { nodes: vec![], volume: vec![], faces: vec![], interior: vec![] };
    match dim {
        1 => {
            for i in 0..n {
                asm.nodes.push(kind.point(&[center(i)])?);
                asm.volume.push(h);
                asm.faces.push((i, (i + 1) % n, 1.0 / h, kind.point(&[face(i)])?));
            }
        }
        _ => {
            for i in 0..n {
                for j in 0..n {
                    let k = i * n + j;
                    asm.nodes.push(kind.point(&[center(i), center(j)])?);
                    asm.volume.push(h * h);
                    asm.faces.push((k, ((i + 1) % n) * n + j, 1.0, kind.point(&[face(i), center(j)])?));
                    asm.faces.push((k, i * n + (j + 1) % n, 1.0, kind.point(&[center(i), face(j)])?));
                }
            }
        }
    }
    asm.interior = vec![true; asm.nodes.len()];
    Ok(asm)
}

fn interval_grid(a: f64, b: f64, n: usize) -> Result<Assembly> {
    let kind = ManifoldKind::Euclidean(1);
    let h = (b - a) / n as f64;
    let mut asm = Assembly { nodes: vec![], volume: vec![], faces: vec![], interior: vec![] };
    for i in 0..n {
        asm.nodes.push(kind.point(&[a + (i as f64 + 0.5) * h])?);
        asm.volume.push(h);
        asm.interior.push(i > 0 && i + 1 < n);
        if i + 1 < n {
            asm.faces.push((i, i + 1, 1.0 / h, kind.point(&[a + (i + 1) as f64 * h])?));
        }
    }
    Ok(asm)
}

fn rectangle_grid(lo: [f64; 2], hi: [f64; 2], n: usize) -> Result<Assembly> {
    let kind = ManifoldKind::Euclidean(2);
    let hx = (hi[0] - lo[0]) / n as f64;
    let hy = (hi[1] - lo[1]) / n as f64;
    let mut asm = Assembly { nodes: vec![], volume: vec![], faces: vec![], interior: vec![] };
    for i in 0..n {
        for j in 0..n {
            let k = i * n + j;
            let (x, y) = (lo[0] + (i as f64 + 0.5) * hx, lo[1] + (j as f64 + 0.5) * hy);
            asm.nodes.push(kind.point(&[x, y])?);
            asm.volume.push(hx * hy);
            asm.interior.push(i > 0 && j > 0 && i + 1 < n && j + 1 < n);
            if i + 1 < n {
                asm.faces.push((k, k + n, hy / hx, kind.point(&[x + 0.5 * hx, y])?));
            }
            if j + 1 < n {
                asm.faces.push((k, k + 1, hx / hy, kind.point(&[x, y + 0.5 * hy])?));
            }
        }
    }
    Ok(asm)
}

/// Cut-cell grid on a disk: square cells intersected with the disk, exact
/// cell areas and face apertures.
fn disk_grid(center: [f64; 2], r: f64, n: usize) -> Result<Assembly> {
    let kind = ManifoldKind::Euclidean(2);
    let h = 2.0 * r / n as f64;
    let edge = |i: usize| -r + i as f64 * h;
    let full = h * h;
    // cell areas in local coordinates
    let area: Vec<f64> = (0..n * n)
        .map(|k| {
            let (i, j) = (k / n, k % n);
            box_disk_area(edge(i), edge(i + 1), edge(j), edge(j + 1), r)
        })
        .collect();
    let keep: Vec<bool> = area.iter().map(|&a| a >= MIN_AREA_FRACTION * full).collect();
    // candidate faces between kept cells with positive aperture
    let mut raw_faces = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let k = i * n + j;
            if !keep[k] {
                continue;
            }
            if i + 1 < n && keep[k + n] {
                if let Some((lo, hi)) = wet_segment(edge(i + 1), edge(j), edge(j + 1), r) {
                    raw_faces.push((k, k + n, (hi - lo) / h, [edge(i + 1), 0.5 * (lo + hi)], hi - lo));
                }
            }
            if j + 1 < n && keep[k + 1] {
                if let Some((lo, hi)) = wet_segment(edge(j + 1), edge(i), edge(i + 1), r) {
                    raw_faces.push((k, k + 1, (hi - lo) / h, [0.5 * (lo + hi), edge(j + 1)], hi - lo));
                }
            }
        }
    }
    let mut connected = vec![false; n * n];
    for f in &raw_faces {
        connected[f.0] = true;
        connected[f.1] = true;
    }
    let mut index = vec![usize::MAX; n * n];
    let mut asm = Assembly { nodes: vec![], volume: vec![], faces: vec![], interior: vec![] };
    for k in 0..n * n {
        if !(keep[k] && connected[k]) {
            continue;
        }
        index[k] = asm.nodes.len();
        let (i, j) = (k / n, k % n);
        let mut c = [edge(i) + 0.5 * h, edge(j) + 0.5 * h];
        let rho = (c[0] * c[0] + c[1] * c[1]).sqrt();
        if rho >= r {
            // cut cell whose center lies outside: pull the node inside the disk
            let s = r * (1.0 - 1e-9) / rho;
            c = [c[0] * s, c[1] * s];
        }
        asm.nodes.push(kind.point(&[center[0] + c[0], center[1] + c[1]])?);
        asm.volume.push(area[k]);
    }
    let is_full = |k: usize| area[k] >= full * (1.0 - 1e-12);
    for k in 0..n * n {
        if index[k] == usize::MAX {
            continue;
        }
        let (i, j) = (k / n, k % n);
        let neighbors_full = i > 0
            && j > 0
            && i + 1 < n
            && j + 1 < n
            && [k - n, k + n, k - 1, k + 1].iter().all(|&m| index[m] != usize::MAX && is_full(m));
        asm.interior.push(is_full(k) && neighbors_full);
    }
    for (a, b, weight, mid, _) in raw_faces {
        asm.faces.push((
            index[a],
            index[b],
            weight,
            kind.point(&[center[0] + mid[0], center[1] + mid[1]])?,
        ));
    }
    Ok(asm)
}

fn face_potential(t: &TargetDensity, x: &Point, phi_i: f64, phi_j: f64) -> f64 {
    // interfaces on a singular set fall back to the mean node potential
    t.phi(x).unwrap_or(0.5 * (phi_i + phi_j))
}

/// Builds the flux-form operator of `t` on the grid.
pub fn discretize(t: &TargetDensity, gs: &GridSpec) -> Result<DiscreteOperator> {
    gs.validate()?;
    if t.manifold().kind() != gs.domain.kind() {
        return Err(Error::MixedManifolds);
    }
    let n = gs.resolution;
    let asm = match &gs.domain {
        Domain::Circle => periodic_grid(1, n, ManifoldKind::Circle)?,
        Domain::Torus { dim } => periodic_grid(*dim, n, ManifoldKind::FlatTorus(*dim))?,
        Domain::Interval { a, b } => interval_grid(*a, *b, n)?,
        Domain::Rectangle { lo, hi } => rectangle_grid(*lo, *hi, n)?,
        Domain::Disk { center, radius } => disk_grid(*center, *radius, n)?,
    };
    let phi: Vec<f64> = asm
        .nodes
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            if t.is_singular(x) {
                return Err(Error::SingularNode(i));
            }
            t.phi(x).map_err(|_| Error::SingularNode(i))
        })
        .collect::<Result<_>>()?;
    let shift = phi.iter().copied().fold(f64::INFINITY, f64::min);
    let mut p: Vec<f64> = phi
        .iter()
        .zip(&asm.volume)
        .map(|(f, v)| (shift - f).exp() * v)
        .collect();
    let mut triplets = Vec::with_capacity(2 * asm.faces.len());
    for (i, j, geom, x) in &asm.faces {
        let w = (shift - face_potential(t, x, phi[*i], phi[*j])).exp() * geom;
        if !(w.is_finite() && w >= 0.0) {
            return Err(Error::InvalidSpec(format!("face weight {w} between {i} and {j}")));
        }
        triplets.push((*i, *j, w));
        triplets.push((*j, *i, w));
    }
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= z);
    triplets.iter_mut().for_each(|t| t.2 /= z);
    if p.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::InvalidSpec("node mass underflow".into()));
    }
    let op = DiscreteOperator {
        w: CsrMatrix::from_triplets(asm.nodes.len(), triplets),
        nodes: asm.nodes,
        p,
        interior: asm.interior,
        domain: Some(gs.domain.clone()),
    };
    debug_assert_eq!(op.w.asymmetry(), 0.0);
    Ok(op)
}

impl DiscreteOperator {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    /// Node masses `p_i`, summing to one.
    pub fn masses(&self) -> &[f64] {
        &self.p
    }

    /// Symmetric face weights `w_ij` (no diagonal).
    pub fn face_weights(&self) -> &CsrMatrix {
        &self.w
    }

    /// Nodes whose stencil does not touch the boundary layer.
    pub fn interior(&self) -> &[bool] {
        &self.interior
    }

    pub fn domain(&self) -> Option<&Domain> {
        self.domain.as_ref()
    }

    /// Node values of a function.
    pub fn sample<F: Fn(&Point) -> f64>(&self, f: F) -> Vec<f64> {
        self.nodes.iter().map(f).collect()
    }

    /// `L f` in flux form.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        (0..self.len())
            .map(|i| self.w.row(i).map(|(j, w)| w * (f[j] - f[i])).sum::<f64>() / self.p[i])
            .collect()
    }

    /// `(W f)_i = Σ_j w_ij (f_j - f_i)`, i.e. `diag(p) L f`.
    fn flux(&self, f: &[f64]) -> Vec<f64> {
        (0..self.len())
            .map(|i| self.w.row(i).map(|(j, w)| w * (f[j] - f[i])).sum())
            .collect()
    }

    /// `L` as an explicit sparse matrix.
    pub fn matrix(&self) -> CsrMatrix {
        let mut t = Vec::with_capacity(self.w.nnz() + self.len());
        for i in 0..self.len() {
            let mut diag = 0.0;
            for (j, w) in self.w.row(i) {
                t.push((i, j, w / self.p[i]));
                diag -= w;
            }
            t.push((i, i, diag / self.p[i]));
        }
        CsrMatrix::from_triplets(self.len(), t)
    }

    /// `-P^{-1/2} W P^{-1/2}`, similar to `-L` and symmetric positive semidefinite.
    pub fn symmetric_form(&self) -> CsrMatrix {
        let mut t = Vec::with_capacity(self.w.nnz() + self.len());
        for i in 0..self.len() {
            let mut diag = 0.0;
            for (j, w) in self.w.row(i) {
                t.push((i, j, -w / (self.p[i] * self.p[j]).sqrt()));
                diag += w;
            }
            t.push((i, i, diag / self.p[i]));
        }
        CsrMatrix::from_triplets(self.len(), t)
    }

    /// `max_i |(L 1)_i|`.
    pub fn kernel_residual(&self) -> f64 {
        self.apply(&vec![1.0; self.len()])
            .iter()
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max |(diag(p) L)_ij - (diag(p) L)_ji|`.
    pub fn symmetry_residual(&self) -> f64 {
        let l = self.matrix();
        let mut worst: f64 = 0.0;
        for i in 0..self.len() {
            for (j, v) in l.row(i) {
                worst = worst.max((self.p[i] * v - self.p[j] * l.get(j, i)).abs());
            }
        }
        worst
    }

    /// Number of connected components of the face graph.
    pub fn components(&self) -> usize {
        self.w.components()
    }

    /// `P(f) = Σ p_i f_i`.
    pub fn mean(&self, f: &[f64]) -> f64 {
        self.p.iter().zip(f).map(|(p, v)| p * v).sum()
    }

    /// `‖f‖_{p,2}`.
    pub fn norm(&self, f: &[f64]) -> f64 {
        self.p.iter().zip(f).map(|(p, v)| p * v * v).sum::<f64>().sqrt()
    }

    /// Discrete Dirichlet energy `-<f, L f>_p = Σ_{i<j} w_ij (f_i - f_j)^2`.
    pub fn dirichlet_energy(&self, f: &[f64]) -> f64 {
        let mut e = 0.0;
        for i in 0..self.len() {
            for (j, w) in self.w.row(i) {
                if j > i {
                    e += w * (f[i] - f[j]).powi(2);
                }
            }
        }
        e
    }

    /// Block-diagonal operator on two disconnected grids, each carrying
    /// half of the mass.
    pub fn disjoint_union(a: &DiscreteOperator, b: &DiscreteOperator) -> Result<Self> {
        let kind = |o: &DiscreteOperator| o.nodes.first().map(|p| p.kind());
        if kind(a) != kind(b) {
            return Err(Error::MixedManifolds);
        }
        let off = a.len();
        let n = off + b.len();
        let mut t = Vec::with_capacity(a.w.nnz() + b.w.nnz());
        for i in 0..a.len() {
            t.extend(a.w.row(i).map(|(j, w)| (i, j, 0.5 * w)));
        }
        for i in 0..b.len() {
            t.extend(b.w.row(i).map(|(j, w)| (off + i, off + j, 0.5 * w)));
        }
        Ok(DiscreteOperator {
            nodes: a.nodes.iter().chain(&b.nodes).cloned().collect(),
            p: a.p.iter().chain(&b.p).map(|v| 0.5 * v).collect(),
            w: CsrMatrix::from_triplets(n, t),
            interior: a.interior.iter().chain(&b.interior).copied().collect(),
            domain: None,
        })
    }
}

/// Low end of the spectrum of `-L` in the `p`-weighted inner product.
#[derive(Clone, Debug)]
pub struct LowModes {
    pub values: Vec<f64>,
    /// Node vectors, orthonormal in `<·,·>_p`.
    pub vectors: Vec<Vec<f64>>,
    /// Estimate of the largest eigenvalue.
    pub scale: f64,
}

/// The `k` smallest eigenpairs of `-L`.
pub fn low_modes(op: &DiscreteOperator, k: usize) -> Result<LowModes> {
    let s = op.symmetric_form();
    let scale = largest_eigenvalue(&s);
    let LowSpectrum { values, vectors } = smallest_eigenpairs(&s, k, 1e-8 * scale, scale)?;
    let vectors = (0..values.len())
        .map(|c| {
            vectors
                .column(c)
                .iter()
                .zip(&op.p)
                .map(|(q, p)| q / p.sqrt())
                .collect()
        })
        .collect();
    Ok(LowModes { values, vectors, scale })
}

/// Eigenvalue summary of a discrete operator.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectralReport {
    /// Ascending eigenvalues of `-L`.
    pub eigenvalues: Vec<f64>,
    pub kernel_dim: usize,
    /// First eigenvalue above the kernel tolerance.
    pub gap: f64,
    /// `gap^{-1/2}` when the kernel is one-dimensional.
    pub wpi_constant: Option<f64>,
    pub tol: f64,
    /// `gap / tol`.
    pub separation_ratio: f64,
}

/// Eigenvalues below `tol` (default `1e-8` times the largest eigenvalue),
/// growing the computed block until one eigenvalue clears the tolerance.
pub fn spectral_report(op: &DiscreteOperator, n_eigs: usize, tol: Option<f64>) -> Result<SpectralReport> {
    let mut k = n_eigs.max(4);
    loop {
        let modes = low_modes(op, k)?;
        let tol = tol.unwrap_or(1e-8 * modes.scale);
        let kernel_dim = modes.values.iter().filter(|&&v| v < tol).count();
        if kernel_dim < modes.values.len() {
            let gap = modes.values[kernel_dim];
            if gap < 100.0 * tol {
                return Err(Error::IllSeparatedSpectrum { tol, next: gap });
            }
            let mut eigenvalues = modes.values;
            eigenvalues.truncate(n_eigs.max(kernel_dim + 1));
            return Ok(SpectralReport {
                eigenvalues,
                kernel_dim,
                gap,
                wpi_constant: (kernel_dim == 1).then(|| gap.powf(-0.5)),
                tol,
                separation_ratio: gap / tol,
            });
        }
        if k >= op.len() {
            return Err(Error::IllSeparatedSpectrum { tol, next: f64::INFINITY });
        }
        k = (2 * k).min(op.len());
    }
}

/// Dimension of the numerical kernel of `L`.
pub fn kernel_dimension(op: &DiscreteOperator, tol: Option<f64>) -> Result<usize> {
    spectral_report(op, 1, tol).map(|r| r.kernel_dim)
}

fn require_connected(op: &DiscreteOperator) -> Result<()> {
    match op.components() {
        1 => Ok(()),
        dim => Err(Error::DegenerateKernel { dim }),
    }
}

/// `(λ_1, C_2 = λ_1^{-1/2})`.
pub fn spectral_gap(op: &DiscreteOperator) -> Result<(f64, f64)> {
    require_connected(op)?;
    let modes = low_modes(op, 2)?;
    let l1 = modes.values[1];
    Ok((l1, l1.powf(-0.5)))
}

/// A Stein-equation solution with its residual `‖L f - (h - P(h))‖_{p,2}`.
#[derive(Clone, Debug, PartialEq)]
pub struct SteinSolution {
    pub f: Vec<f64>,
    pub residual: f64,
}

/// Solves `L f = h - P(h)` with `P(f) = 0` through the bordered system
/// `[[-W, p], [p^T, 0]]`, factored without pivoting and refined iteratively.
pub fn solve_stein_equation(op: &DiscreteOperator, h: &[f64]) -> Result<SteinSolution> {
    let n = op.len();
    if h.len() != n {
        return Err(Error::LengthMismatch(n, h.len()));
    }
    require_connected(op)?;
    if h.iter().all(|&v| v == h[0]) {
        return Ok(SteinSolution { f: vec![0.0; n], residual: 0.0 });
    }
    let ph = op.mean(h);
    let centered: Vec<f64> = h.iter().map(|v| v - ph).collect();
    // bordered matrix; the constraint is ordered second to last so that all
    // leading minors are nonsingular
    let mut t = Vec::with_capacity(op.w.nnz() + 3 * n);
    for i in 0..n {
        let mut diag = 0.0;
        for (j, w) in op.w.row(i) {
            t.push((i, j, -w));
            diag += w;
        }
        t.push((i, i, diag));
        t.push((i, n, op.p[i]));
        t.push((n, i, op.p[i]));
    }
    let k = CsrMatrix::from_triplets(n + 1, t);
    let mut order = envelope_order(&op.symmetric_form());
    let last = order.pop().expect("nonempty grid");
    order.push(n);
    order.push(last);
    let factor = Ldl::factor(&k, order)?;

    let rhs: Vec<f64> = (0..n).map(|i| -op.p[i] * centered[i]).chain([0.0]).collect();
    let bordered = |x: &[f64]| -> Vec<f64> {
        let (f, mu) = (&x[..n], x[n]);
        let flux = op.flux(f);
        (0..n)
            .map(|i| -flux[i] + op.p[i] * mu)
            .chain([op.mean(f)])
            .collect()
    };
    let mut x = factor.solve(&rhs);
    let scale = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for _ in 0..10 {
        let r: Vec<f64> = bordered(&x).iter().zip(&rhs).map(|(a, b)| b - a).collect();
        if r.iter().fold(0.0f64, |m, v| m.max(v.abs())) <= 1e-15 * scale {
            break;
        }
        let dx = factor.solve(&r);
        x.iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
    }
    x.truncate(n);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SolverFailure("non-finite solution".into()));
    }
    let lf = op.apply(&x);
    let res: Vec<f64> = lf.iter().zip(&centered).map(|(a, b)| a - b).collect();
    let residual = op.norm(&res);
    if residual > 1e-8 * op.norm(&centered).max(1.0) {
        return Err(Error::SolverFailure(format!("residual {residual:e}")));
    }
    Ok(SteinSolution { f: x, residual })
}

/// Outcome of the weighted Poincaré check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WpiCheck {
    /// Largest `‖f - P(f)‖_p / ‖∇f‖_p` over the trials.
    pub max_ratio: f64,
    /// `λ_1^{-1/2}`.
    pub c2: f64,
    /// Largest `‖f - P(f)‖_p / ‖L f‖_p`.
    pub max_resolvent_ratio: f64,
    /// `1 / λ_1`.
    pub c1: f64,
    pub trials: usize,
}

/// `‖f - P(f)‖_p / ‖∇f‖_p` with `‖∇f‖_p^2` the discrete Dirichlet energy.
pub fn wpi_ratio(op: &DiscreteOperator, f: &[f64]) -> Result<f64> {
    let energy = op.dirichlet_energy(f);
    if !(energy > 0.0) {
        return Err(Error::ZeroGradient);
    }
    let m = op.mean(f);
    let centered: Vec<f64> = f.iter().map(|v| v - m).collect();
    Ok(op.norm(&centered) / energy.sqrt())
}

/// Weighted Poincaré ratios of seeded Gaussian node vectors against the
/// spectral constants.
pub fn wpi_check(op: &DiscreteOperator, trials: usize, seed: u64) -> Result<WpiCheck> {
    if trials == 0 {
        return Err(Error::InvalidSpec("at least one trial".into()));
    }
    let (l1, c2) = spectral_gap(op)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_ratio: f64 = 0.0;
    let mut max_resolvent: f64 = 0.0;
    let mut used = 0;
    for _ in 0..trials {
        let f: Vec<f64> = (0..op.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let ratio = match wpi_ratio(op, &f) {
            Ok(r) => r,
            Err(Error::ZeroGradient) => continue,
            Err(e) => return Err(e),
        };
        let m = op.mean(&f);
        let centered: Vec<f64> = f.iter().map(|v| v - m).collect();
        max_ratio = max_ratio.max(ratio);
        max_resolvent = max_resolvent.max(op.norm(&centered) / op.norm(&op.apply(&f)));
        used += 1;
    }
    if used == 0 {
        return Err(Error::ZeroGradient);
    }
    Ok(WpiCheck {
        max_ratio,
        c2,
        max_resolvent_ratio: max_resolvent,
        c1: 1.0 / l1,
        trials: used,
    })
}

/// One-sided derivative at both ends of an interval grid, from the quadratic
/// through the three nearest nodes; returns the larger magnitude.
pub fn boundary_derivative(op: &DiscreteOperator, f: &[f64]) -> Result<f64> {
    let (a, b) = match op.domain {
        Some(Domain::Interval { a, b }) => (a, b),
        _ => {
            return Err(Error::UnsupportedManifold(
                "boundary derivative needs an interval grid".into(),
            ))
        }
    };
    let n = op.len();
    if f.len() != n {
        return Err(Error::LengthMismatch(n, f.len()));
    }
    let x = |i: usize| op.nodes[i].as_slice()[0];
    let deriv = |at: f64, idx: [usize; 3]| -> f64 {
        let xs = idx.map(x);
        let mut d = 0.0;
        for k in 0..3 {
            let mut num = 0.0;
            let mut den = 1.0;
            for m in 0..3 {
                if m == k {
                    continue;
                }
                den *= xs[k] - xs[m];
                let other = (0..3).find(|&l| l != k && l != m).expect("three nodes");
                num += at - xs[other];
            }
            d += f[idx[k]] * num / den;
        }
        d
    };
    let left = deriv(a, [0, 1, 2]);
    let right = deriv(b, [n - 1, n - 2, n - 3]);
    Ok(left.abs().max(right.abs()))
}

/// Relative residual of the best approximation of `v` by `L u` with `u`
/// vanishing off the interior nodes: `min_u ‖v - L E u‖_p / ‖v‖_p`.
pub fn dirichlet_image_residual(op: &DiscreteOperator, v: &[f64]) -> Result<f64> {
    let n = op.len();
    if v.len() != n {
        return Err(Error::LengthMismatch(n, v.len()));
    }
    let cols: Vec<usize> = (0..n).filter(|&i| op.interior[i]).collect();
    if cols.is_empty() {
        return Ok(1.0);
    }
    let mut col_of = vec![usize::MAX; n];
    for (c, &i) in cols.iter().enumerate() {
        col_of[i] = c;
    }
    // rows of W with the diagonal restored
    let w_row = |k: usize| -> Vec<(usize, f64)> {
        let mut diag = 0.0;
        let mut row: Vec<(usize, f64)> = op
            .w
            .row(k)
            .map(|(j, w)| {
                diag -= w;
                (j, w)
            })
            .collect();
        row.push((k, diag));
        row
    };
    // normal equations E^T W P^{-1} W E u = E^T W v
    let mut t = Vec::new();
    let mut rhs = vec![0.0; cols.len()];
    for k in 0..n {
        let row: Vec<(usize, f64)> = w_row(k).into_iter().filter(|(j, _)| col_of[*j] != usize::MAX).collect();
        for &(a, wa) in &row {
            rhs[col_of[a]] += wa * v[k];
            for &(b, wb) in &row {
                t.push((col_of[a], col_of[b], wa * wb / op.p[k]));
            }
        }
    }
    let normal = CsrMatrix::from_triplets(cols.len(), t);
    let factor = Ldl::factor(&normal, envelope_order(&normal))?;
    let u_int = factor.solve(&rhs);
    let mut u = vec![0.0; n];
    for (c, &i) in cols.iter().enumerate() {
        u[i] = u_int[c];
    }
    let lu = op.apply(&u);
    let r: Vec<f64> = v.iter().zip(&lu).map(|(a, b)| a - b).collect();
    Ok(op.norm(&r) / op.norm(v))
}

/// Relative residual of projecting `v` onto the full image of `L`, computed
/// through a Stein-equation solve.
pub fn neumann_image_residual(op: &DiscreteOperator, v: &[f64]) -> Result<f64> {
    let sol = solve_stein_equation(op, v)?;
    let lf = op.apply(&sol.f);
    let r: Vec<f64> = v.iter().zip(&lf).map(|(a, b)| a - b).collect();
    Ok(op.norm(&r) / op.norm(v))
}

/// Node vector of an eigenfunction, for checks of the equality case.
pub fn eigenvector(op: &DiscreteOperator, index: usize) -> Result<(f64, Vec<f64>)> {
    let mut modes = low_modes(op, index + 1)?;
    let v = modes.vectors.swap_remove(index);
    Ok((modes.values[index], v))
}

/// Convenience for tests and reports: `P^{1/2}`-weighted coordinates of `f`.
pub fn to_symmetric(op: &DiscreteOperator, f: &[f64]) -> DVector<f64> {
    DVector::from_iterator(op.len(), f.iter().zip(&op.p).map(|(v, p)| v * p.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Manifold;

    fn uniform_circle(n: usize) -> DiscreteOperator {
        let t = TargetDensity::uniform(Manifold::circle());
        discretize(&t, &GridSpec::new(Domain::Circle, n).unwrap()).unwrap()
    }

    #[test]
    fn resolution_floor() {
        assert!(GridSpec::new(Domain::Circle, 8).is_err());
        assert!(GridSpec::new(Domain::Interval { a: 1.0, b: 0.0 }, 32).is_err());
        let bad = GridSpec { domain: Domain::Circle, resolution: 32, boundary: Boundary::Neumann };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn circulant_stencil() {
        let n = 16;
        let op = uniform_circle(n);
        let h = 2.0 * PI / n as f64;
        let l = op.matrix();
        for i in 0..n {
            assert!((l.get(i, i) + 2.0 / (h * h)).abs() < 1e-12 / (h * h));
            assert!((l.get(i, (i + 1) % n) - 1.0 / (h * h)).abs() < 1e-12 / (h * h));
            assert!((l.get(i, (i + n - 1) % n) - 1.0 / (h * h)).abs() < 1e-12 / (h * h));
            assert_eq!(l.get(i, (i + 2) % n), 0.0);
        }
        assert_eq!(op.kernel_residual(), 0.0);
    }

    #[test]
    fn box_disk_areas() {
        let r = 1.3;
        assert!((box_disk_area(-r, r, -r, r, r) - PI * r * r).abs() < 1e-13);
        assert!((box_disk_area(0.0, r, 0.0, r, r) - PI * r * r / 4.0).abs() < 1e-13);
        assert!((box_disk_area(-0.1, 0.1, -0.2, 0.3, r) - 0.2 * 0.5).abs() < 1e-15);
        assert_eq!(box_disk_area(r, 2.0 * r, 0.0, 1.0, r), 0.0);
        // sum over a partition recovers the disk
        let n = 37;
        let h = 2.0 * r / n as f64;
        let total: f64 = (0..n * n)
            .map(|k| {
                let (i, j) = ((k / n) as f64, (k % n) as f64);
                box_disk_area(-r + i * h, -r + (i + 1.0) * h, -r + j * h, -r + (j + 1.0) * h, r)
            })
            .sum();
        assert!((total - PI * r * r).abs() < 1e-12);
    }

    #[test]
    fn disk_grid_is_connected_and_symmetric() {
        let e2 = Manifold::euclidean(2);
        let disk = e2.clone().with_geodesic_ball(e2.origin(), 1.0).unwrap();
        let t = TargetDensity::uniform(disk.clone());
        let op = discretize(&t, &GridSpec::for_manifold(&disk, 32).unwrap()).unwrap();
        assert_eq!(op.components(), 1);
        assert!(op.symmetry_residual() <= 1e-12);
        assert_eq!(op.kernel_residual(), 0.0);
        assert!(op.interior().iter().any(|&b| b) && !op.interior().iter().all(|&b| b));
    }

    #[test]
    fn stein_solve_on_circle() {
        let op = uniform_circle(1000);
        let h = op.sample(|x| x.as_slice()[0].cos());
        let sol = solve_stein_equation(&op, &h).unwrap();
        assert!(sol.residual <= 1e-8);
        for (x, f) in op.nodes().iter().zip(&sol.f) {
            assert!((f + x.as_slice()[0].cos()).abs() < 1e-4);
        }
        let zero = solve_stein_equation(&op, &vec![2.5; op.len()]).unwrap();
        assert!(zero.f.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn disconnected_grids() {
        let a = uniform_circle(64);
        let u = DiscreteOperator::disjoint_union(&a, &a).unwrap();
        assert_eq!(u.components(), 2);
        assert_eq!(kernel_dimension(&u, None).unwrap(), 2);
        assert!(matches!(spectral_gap(&u), Err(Error::DegenerateKernel { dim: 2 })));
        assert!(matches!(
            solve_stein_equation(&u, &vec![0.0; u.len()]),
            Err(Error::DegenerateKernel { dim: 2 })
        ));
    }

    #[test]
    fn circle_gap_and_wpi() {
        let op = uniform_circle(256);
        let (l1, c2) = spectral_gap(&op).unwrap();
        let h = 2.0 * PI / 256.0;
        let exact = 4.0 / (h * h) * (h / 2.0).sin().powi(2);
        assert!((l1 - exact).abs() < 1e-10);
        let w = wpi_check(&op, 20, 1).unwrap();
        assert!(w.max_ratio <= c2 * (1.0 + 1e-8));
        let (_, v) = eigenvector(&op, 1).unwrap();
        assert!((wpi_ratio(&op, &v).unwrap() / c2 - 1.0).abs() < 1e-8);
    }
}
