//! Geodesic random-walk Metropolis-Hastings, contamination mixtures and
//! effective sample sizes.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{ManifoldKind, Point};
use crate::measures::{Family, TargetDensity};

/// Chain settings. `start` defaults to the mode of the target when it has
/// one, otherwise to the origin of the support.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainConfig {
    pub step: f64,
    pub n_samples: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: u64,
    pub start: Option<Point>,
}

impl ChainConfig {
    /// Random-walk step giving roughly 50% acceptance for unit-scale targets.
    pub fn default_step(kind: ManifoldKind) -> f64 {
        match kind {
            ManifoldKind::Circle | ManifoldKind::FlatTorus(1) | ManifoldKind::Euclidean(1) => 2.4,
            other => 2.4 / (other.dim() as f64).sqrt(),
        }
    }

    pub fn new(kind: ManifoldKind, n_samples: usize, seed: u64) -> Self {
        ChainConfig {
            step: Self::default_step(kind),
            n_samples,
            burn_in: 1000,
            thinning: 1,
            seed,
            start: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::InvalidSpec(format!("step {} must be positive", self.step)));
        }
        if self.n_samples == 0 {
            return Err(Error::InvalidSpec("n_samples must be at least 1".into()));
        }
        if self.thinning == 0 {
            return Err(Error::InvalidSpec("thinning must be at least 1".into()));
        }
        Ok(())
    }
}

/// Provenance of a sample.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SampleMeta {
    pub seed: u64,
    pub chain_length: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub step: f64,
    /// Post-burn-in acceptance rate, averaged over chains for merged sets.
    pub acceptance_rate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub kind: ManifoldKind,
    pub points: Vec<Point>,
    pub meta: Option<SampleMeta>,
}

impl SampleSet {
    /// A sample without chain provenance, e.g. read back from a file.
    pub fn from_points(kind: ManifoldKind, points: Vec<Point>) -> Result<Self> {
        if points.iter().any(|p| p.kind() != kind) {
            return Err(Error::MixedManifolds);
        }
        Ok(SampleSet { kind, points, meta: None })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Concatenates chains in order; acceptance rates are averaged.
    pub fn concat(sets: &[SampleSet]) -> Result<Self> {
        let first = sets.first().ok_or(Error::EmptySample)?;
        if sets.iter().any(|s| s.kind != first.kind) {
            return Err(Error::MixedManifolds);
        }
        let points = sets.iter().flat_map(|s| s.points.iter().cloned()).collect();
        let meta = first.meta.as_ref().map(|m| {
            let rates: Vec<f64> = sets
                .iter()
                .filter_map(|s| s.meta.as_ref().map(|m| m.acceptance_rate))
                .collect();
            SampleMeta {
                acceptance_rate: rates.iter().sum::<f64>() / rates.len() as f64,
                ..m.clone()
            }
        });
        Ok(SampleSet { kind: first.kind, points, meta })
    }
}

fn default_start(t: &TargetDensity) -> Point {
    let m = t.manifold();
    let mode = match t.family() {
        Family::IntrinsicRadial { mu, .. }
        | Family::RiemannianGaussian { mu, .. }
        | Family::VonMisesFisher { mu, .. } => Some(mu.clone()),
        _ => None,
    };
    match mode {
        Some(mu) if m.contains(&mu) && !t.is_singular(&mu) => mu,
        _ => m.origin(),
    }
}

fn chain(t: &TargetDensity, cfg: &ChainConfig, stream: u64) -> Result<SampleSet> {
    cfg.validate()?;
    let m = t.manifold();
    let x0 = cfg.start.clone().unwrap_or_else(|| default_start(t));
    if x0.kind() != m.kind() {
        return Err(Error::MixedManifolds);
    }
    if !m.contains(&x0) || t.is_singular(&x0) {
        return Err(Error::OutOfSupport);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let n = m.dim();
    let mut x = x0;
    let mut phi_x = t.phi(&x)?;
    let total = cfg.burn_in + cfg.n_samples * cfg.thinning;
    let mut points = Vec::with_capacity(cfg.n_samples);
    let mut accepted = 0usize;
    for iter in 0..total {
        let xi = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let u: f64 = rng.random();
        let v = m.frame(&x).vector(&xi) * cfg.step;
        // exp_at rejects proposals leaving the support
        let proposal = m
            .exp_at(&x, &v)
            .ok()
            .filter(|y| !t.is_singular(y))
            .and_then(|y| t.phi(&y).ok().map(|p| (y, p)));
        if let Some((y, phi_y)) = proposal {
            if u < (phi_x - phi_y).exp() {
                x = y;
                phi_x = phi_y;
                if iter >= cfg.burn_in {
                    accepted += 1;
                }
            }
        }
        if iter >= cfg.burn_in && (iter - cfg.burn_in).is_multiple_of(cfg.thinning) {
            points.push(x.clone());
        }
    }
    if accepted == 0 {
        return Err(Error::NeverAccepted);
    }
    let kept = total - cfg.burn_in;
    Ok(SampleSet {
        kind: m.kind(),
        points,
        meta: Some(SampleMeta {
            seed: cfg.seed,
            chain_length: total,
            burn_in: cfg.burn_in,
            thinning: cfg.thinning,
            step: cfg.step,
            acceptance_rate: accepted as f64 / kept as f64,
        }),
    })
}

/// One geodesic random-walk Metropolis-Hastings chain.
///
/// Proposals are `exp_x(ε ξ)` with `ξ` standard normal in the frame at `x`;
/// the proposal is symmetric on every model, so no Jacobian term enters the
/// acceptance ratio `min(1, e^{φ(x) - φ(y)})`.
pub fn geodesic_rw_mh(t: &TargetDensity, cfg: &ChainConfig) -> Result<SampleSet> {
    chain(t, cfg, 0)
}

/// Independent chains in parallel; chain `c` uses stream `c` of the seed, so
/// chain 0 reproduces [`geodesic_rw_mh`].
pub fn run_chains(t: &TargetDensity, cfg: &ChainConfig, n_chains: usize) -> Result<Vec<SampleSet>> {
    (0..n_chains as u64)
        .into_par_iter()
        .map(|c| chain(t, cfg, c))
        .collect()
}

/// Replaces each point of `p` by the matching point of `q` with probability `t`.
pub fn contaminate(p: &SampleSet, q: &SampleSet, t: f64, seed: u64) -> Result<SampleSet> {
    if p.kind != q.kind {
        return Err(Error::MixedManifolds);
    }
    if p.len() != q.len() {
        return Err(Error::LengthMismatch(p.len(), q.len()));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidSpec(format!("contamination level {t} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = p
        .points
        .iter()
        .zip(&q.points)
        .map(|(a, b)| {
            let u: f64 = rng.random();
            if u < t { b.clone() } else { a.clone() }
        })
        .collect();
    Ok(SampleSet { kind: p.kind, points, meta: p.meta.clone() })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Ess {
    pub ess: f64,
    /// Set when the trace is constant; `ess` is then the trace length.
    pub zero_variance: bool,
}

/// Effective sample size of a scalar trace by Geyer's initial monotone
/// positive sequence.
pub fn integrated_ess(trace: &[f64]) -> Ess {
    let n = trace.len();
    let mean = trace.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = trace.iter().map(|v| v - mean).collect();
    let autocov = |lag: usize| -> f64 {
        centered[..n - lag]
            .iter()
            .zip(&centered[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n as f64
    };
    let c0 = autocov(0);
    if !(c0 > 0.0) {
        return Ess { ess: n as f64, zero_variance: true };
    }
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = (autocov(2 * k) + autocov(2 * k + 1)) / c0;
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        sum += pair;
        prev = pair;
        k += 1;
    }
    let tau = (2.0 * sum - 1.0).max(1.0 / n as f64);
    Ess { ess: n as f64 / tau, zero_variance: false }
}

/// ESS of `statistic` along a chain of at least 100 points.
pub fn effective_sample_size<F>(s: &SampleSet, statistic: F) -> Result<Ess>
where
    F: Fn(&Point) -> f64,
{
    if s.len() < 100 {
        return Err(Error::TooShort { needed: 100, got: s.len() });
    }
    let trace: Vec<f64> = s.points.iter().map(statistic).collect();
    Ok(integrated_ess(&trace))
}
