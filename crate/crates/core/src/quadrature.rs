//! Tensor-product quadrature rules on the low-dimensional models.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::{Manifold, ManifoldKind, Point};

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess, then Newton on P_n
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Nodes with volume weights for `∫ f dv ≈ Σ w_i f(x_i)`.
#[derive(Clone, Debug)]
pub struct QuadratureGrid {
    pub kind: ManifoldKind,
    pub nodes: Vec<Point>,
    pub weights: Vec<f64>,
}

impl QuadratureGrid {
    /// Trapezoid rule with `n` equispaced angles, offset half a step from `±π`.
    pub fn circle(n: usize) -> Self {
        let kind = ManifoldKind::Circle;
        let h = 2.0 * PI / n as f64;
        let nodes = (0..n)
            .map(|i| kind.point(&[-PI + h * (i as f64 + 0.5)]).expect("valid angle"))
            .collect();
        QuadratureGrid { kind, nodes, weights: vec![h; n] }
    }

    /// Tensor trapezoid rule on `FlatTorus(dim)`, `dim <= 2`, with the same
    /// half-step offset as [`QuadratureGrid::circle`].
    pub fn torus(dim: usize, n: usize) -> Result<Self> {
        let kind = ManifoldKind::FlatTorus(dim);
        let h = 2.0 * PI / n as f64;
        let angle = |i: usize| -PI + h * (i as f64 + 0.5);
        let (nodes, weights) = match dim {
            1 => (
                (0..n).map(|i| kind.point(&[angle(i)])).collect::<Result<Vec<_>>>()?,
                vec![h; n],
            ),
            2 => (
                (0..n * n)
                    .map(|k| kind.point(&[angle(k / n), angle(k % n)]))
                    .collect::<Result<Vec<_>>>()?,
                vec![h * h; n * n],
            ),
            _ => {
                return Err(Error::UnsupportedManifold(format!(
                    "no quadrature grid on FlatTorus({dim})"
                )))
            }
        };
        Ok(QuadratureGrid { kind, nodes, weights })
    }

    /// Gauss-Legendre in the height `z` times trapezoid in azimuth on `S^2`.
    pub fn sphere2(n_height: usize, n_azimuth: usize) -> Self {
        let kind = ManifoldKind::Sphere(2);
        let (z, wz) = gauss_legendre(n_height);
        let h = 2.0 * PI / n_azimuth as f64;
        let mut nodes = Vec::with_capacity(n_height * n_azimuth);
        let mut weights = Vec::with_capacity(n_height * n_azimuth);
        for (zi, wi) in z.iter().zip(&wz) {
            let r = (1.0 - zi * zi).sqrt();
            for k in 0..n_azimuth {
                let a = h * k as f64;
                nodes.push(kind.point(&[r * a.cos(), r * a.sin(), *zi]).expect("unit vector"));
                weights.push(wi * h);
            }
        }
        QuadratureGrid { kind, nodes, weights }
    }

    /// Gauss-Legendre on `[a, b]` as a subset of `Euclidean(1)`.
    pub fn interval(a: f64, b: f64, n: usize) -> Self {
        let kind = ManifoldKind::Euclidean(1);
        let (x, w) = gauss_legendre(n);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        QuadratureGrid {
            kind,
            nodes: x.iter().map(|t| kind.point(&[mid + half * t]).expect("finite")).collect(),
            weights: w.iter().map(|wi| wi * half).collect(),
        }
    }

    /// Tensor Gauss-Legendre on `[a0, b0] x [a1, b1]` in `Euclidean(2)`.
    pub fn rectangle(lo: [f64; 2], hi: [f64; 2], n: usize) -> Self {
        let kind = ManifoldKind::Euclidean(2);
        let (x, w) = gauss_legendre(n);
        let half = [0.5 * (hi[0] - lo[0]), 0.5 * (hi[1] - lo[1])];
        let mid = [0.5 * (hi[0] + lo[0]), 0.5 * (hi[1] + lo[1])];
        let mut nodes = Vec::with_capacity(n * n);
        let mut weights = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                nodes.push(
                    kind.point(&[mid[0] + half[0] * x[i], mid[1] + half[1] * x[j]])
                        .expect("finite"),
                );
                weights.push(w[i] * w[j] * half[0] * half[1]);
            }
        }
        QuadratureGrid { kind, nodes, weights }
    }

    /// Polar rule (Gauss-Legendre radius, trapezoid angle) on a Euclidean disk.
    pub fn disk(center: [f64; 2], radius: f64, n: usize) -> Self {
        let kind = ManifoldKind::Euclidean(2);
        let (r, wr) = gauss_legendre(n);
        let n_angle = 2 * n;
        let h = 2.0 * PI / n_angle as f64;
        let mut nodes = Vec::with_capacity(n * n_angle);
        let mut weights = Vec::with_capacity(n * n_angle);
        for (ri, wi) in r.iter().zip(&wr) {
            let rho = 0.5 * radius * (ri + 1.0);
            for k in 0..n_angle {
                let a = h * k as f64;
                nodes.push(
                    kind.point(&[center[0] + rho * a.cos(), center[1] + rho * a.sin()])
                        .expect("finite"),
                );
                weights.push(wi * 0.5 * radius * rho * h);
            }
        }
        QuadratureGrid { kind, nodes, weights }
    }

    /// A default grid covering the support of `m` with `n` nodes per direction.
    pub fn for_manifold(m: &Manifold, n: usize) -> Result<Self> {
        let unsupported = || {
            Err(Error::UnsupportedManifold(format!(
                "no quadrature grid on {:?} with restriction {:?}",
                m.kind(),
                m.restriction()
            )))
        };
        // a punctured model differs from the full one by a null set
        match (m.kind(), m.ball()) {
            (ManifoldKind::Circle, None) => Ok(Self::circle(n)),
            (ManifoldKind::FlatTorus(d), None) => Self::torus(d, n),
            (ManifoldKind::Sphere(2), None) => Ok(Self::sphere2(n, 2 * n)),
            (ManifoldKind::Euclidean(1), Some((c, r))) => {
                let c = c.as_slice()[0];
                Ok(Self::interval(c - r, c + r, n))
            }
            (ManifoldKind::Euclidean(2), Some((c, r))) => {
                Ok(Self::disk([c.as_slice()[0], c.as_slice()[1]], r, n))
            }
            _ => unsupported(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `Σ w_i f(x_i)`.
    pub fn integrate<F>(&self, f: F) -> Result<f64>
    where
        F: Fn(&Point) -> Result<f64>,
    {
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(x)?;
        }
        Ok(acc)
    }
}
