//! Command dispatch. Each command returns a JSON payload; sample files are
//! written next to the report.

use std::path::Path;

use nalgebra::DVector;
use serde_json::{json, Value};

use geostein::geometry::{Manifold, Point};
use geostein::ksd::{drop_cut_locus_points, gof_wild_bootstrap, jackknife_se, ksd_estimate, stein_gram};
use geostein::measures::TargetDensity;
use geostein::operator::{neumann_defect, stein_identity_mc, symmetry_defect};
use geostein::quadrature::QuadratureGrid;
use geostein::sampling::{effective_sample_size, run_chains, SampleSet};
use geostein::spectral::{
    boundary_derivative, discretize, solve_stein_equation, spectral_report, wpi_check, GridSpec,
};

use crate::config::{build_density, build_function, build_points, Command, ExperimentConfig};
use crate::{csv, write_atomic, CliError};

/// Offset separating the bootstrap stream from the sampler stream.
const BOOTSTRAP_SEED_OFFSET: u64 = 0x9e37_79b9_7f4a_7c15;

const CONVERGENCE_NOTE: &str = "samples witness convergence in distribution only; \
     L2(P) convergence of the density ratio is not assessed";

pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<Value, CliError> {
    let t = build_density(cfg)?;
    match cfg.command {
        Command::Sample => sample(cfg, &t, out),
        Command::Ksd => ksd(cfg, &t),
        Command::Gof => gof(cfg, &t),
        Command::SteinCheck => stein_check(cfg, &t),
        Command::SymmetryCheck => symmetry_check(cfg, &t),
        Command::Spectrum => spectrum(cfg, &t),
        Command::SolveStein => solve_stein(cfg, &t),
        Command::CurvatureCheck => curvature_check(cfg, &t),
    }
}

fn draw(cfg: &ExperimentConfig, t: &TargetDensity) -> Result<(SampleSet, Vec<SampleSet>), CliError> {
    let chains = run_chains(t, &cfg.chain_config(cfg.seed, t), cfg.chain.chains)?;
    Ok((SampleSet::concat(&chains)?, chains))
}

/// Samples from `input` when given, otherwise fresh chains.
fn samples(cfg: &ExperimentConfig, t: &TargetDensity) -> Result<SampleSet, CliError> {
    match &cfg.input {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{path}: {e}")))?;
            let s = csv::read_samples(&text)?;
            if s.kind != t.manifold().kind() {
                return Err(geostein::Error::MixedManifolds.into());
            }
            Ok(s)
        }
        None => Ok(draw(cfg, t)?.0),
    }
}

fn sample(cfg: &ExperimentConfig, t: &TargetDensity, out: &Path) -> Result<Value, CliError> {
    let (all, chains) = draw(cfg, t)?;
    write_atomic(&out.join(&cfg.samples_file), &csv::write_samples(&all))?;
    // ESS of each ambient coordinate, worst coordinate, summed over chains
    let mut ess = Some(0.0);
    for c in &chains {
        let mut worst = f64::INFINITY;
        for i in 0..c.kind.coord_len() {
            match effective_sample_size(c, |p| p.as_slice()[i]) {
                Ok(e) if !e.zero_variance => worst = worst.min(e.ess),
                Ok(_) => {}
                Err(_) => {
                    ess = None;
                    break;
                }
            }
        }
        ess = ess.map(|s: f64| s + if worst.is_finite() { worst } else { c.len() as f64 });
    }
    let rates: Vec<f64> = chains.iter().filter_map(|c| c.meta.as_ref()).map(|m| m.acceptance_rate).collect();
    Ok(json!({
        "samples_file": cfg.samples_file,
        "n": all.len(),
        "chains": chains.len(),
        "acceptance_rates": rates,
        "ess": ess,
        "convergence_note": CONVERGENCE_NOTE,
    }))
}

fn gram_for(cfg: &ExperimentConfig, t: &TargetDensity) -> Result<(geostein::ksd::SteinGram, Vec<usize>), CliError> {
    let k = cfg.kernel.expect("kernel checked at parse time");
    let s = samples(cfg, t)?;
    let (kept, dropped) = drop_cut_locus_points(&k, &s.points);
    Ok((stein_gram(t, &k, &kept, &cfg.diff())?, dropped))
}

fn ksd(cfg: &ExperimentConfig, t: &TargetDensity) -> Result<Value, CliError> {
    let (g, dropped) = gram_for(cfg, t)?;
    let (u, v) = ksd_estimate(&g)?;
    let se = jackknife_se(&g)?;
    let ratio = g.min_eigen_ratio();
    Ok(json!({
        "ksd_u": u,
        "ksd_v": v,
        "jackknife_se": se,
        "n": g.len(),
        "dropped": dropped,
        "min_eigen_ratio": ratio,
        "psd": ratio >= -1e-6,
        "convergence_note": CONVERGENCE_NOTE,
    }))
}

fn gof(cfg: &ExperimentConfig, t: &TargetDensity) -> Result<Value, CliError> {
    let (g, dropped) = gram_for(cfg, t)?;
    let r = gof_wild_bootstrap(&g, cfg.level, cfg.bootstrap, cfg.seed.wrapping_add(BOOTSTRAP_SEED_OFFSET))?;
    let mut payload = serde_json::to_value(r).map_err(|e| CliError::Output(e.to_string()))?;
    payload["n"] = json!(g.len());
    payload["dropped"] = json!(dropped);
    Ok(payload)
}

fn stein_check(cfg: &ExperimentConfig, t: &TargetDensity) -> Result<Value, CliError> {
    let f = build_function(cfg.f.as_ref().expect("checked at parse time"), t.manifold())?;
    let s = samples(cfg, t)?;
    let e = stein_identity_mc(t, &f, &s.points, &cfg.diff())?;
    Ok(json!({
        "estimate": e.estimate,
        "stderr": e.stderr,
        "n": e.n,
        "ess": e.ess,
        "within_three_stderr": e.estimate.abs() <= 3.0 * e.stderr,
        "convergence_note": CONVERGENCE_NOTE,
    }))
}

fn symmetry_check(cfg: &ExperimentConfig, t: &TargetDensity) -> Result<Value, CliError> {
    let m = t.manifold();
    let f = build_function(cfg.f.as_ref().expect("checked at parse time"), m)?;
    let h = build_function(cfg.h.as_ref().expect("checked at parse time"), m)?;
    let grid = QuadratureGrid::for_manifold(m, cfg.resolution)?;
    let diff = cfg.diff();
    let defect = symmetry_defect(t, &f, &h, &grid, &diff)?;
    let neumann = match m.ball() {
        Some(_) => Some(neumann_defect(&f, m, &m.boundary_points(64)?, &diff)?),
        None => None,
    };
    Ok(json!({
        "defect": defect,
        "quadrature_nodes": grid.len(),
        "neumann_defect_f": neumann,
    }))
}

fn grid(cfg: &ExperimentConfig, t: &TargetDensity) -> Result<GridSpec, CliError> {
    Ok(GridSpec::for_manifold(t.manifold(), cfg.resolution)?)
}

fn spectrum(cfg: &ExperimentConfig, t: &TargetDensity) -> Result<Value, CliError> {
    let gs = grid(cfg, t)?;
    let op = discretize(t, &gs)?;
    let report = spectral_report(&op, cfg.n_eigs, cfg.tol)?;
    let wpi = if report.kernel_dim == 1 && cfg.wpi_trials > 0 {
        Some(wpi_check(&op, cfg.wpi_trials, cfg.seed)?)
    } else {
        None
    };
    Ok(json!({
        "grid": gs,
        "nodes": op.len(),
        "kernel_residual": op.kernel_residual(),
        "symmetry_residual": op.symmetry_residual(),
        "spectrum": report,
        "wpi": wpi,
    }))
}

fn solve_stein(cfg: &ExperimentConfig, t: &TargetDensity) -> Result<Value, CliError> {
    let gs = grid(cfg, t)?;
    let op = discretize(t, &gs)?;
    let h_fn = build_function(cfg.h.as_ref().expect("checked at parse time"), t.manifold())?;
    let h = op
        .nodes()
        .iter()
        .map(|x| h_fn.eval(x))
        .collect::<geostein::Result<Vec<f64>>>()?;
    let sol = solve_stein_equation(&op, &h)?;
    let slope = match boundary_derivative(&op, &sol.f) {
        Ok(v) => Some(v),
        Err(geostein::Error::UnsupportedManifold(_)) => None,
        Err(e) => return Err(e.into()),
    };
    let nodes: Vec<&[f64]> = op.nodes().iter().map(Point::as_slice).collect();
    Ok(json!({
        "grid": gs,
        "residual": sol.residual,
        "mean_h": op.mean(&h),
        "boundary_derivative": slope,
        "nodes": nodes,
        "h": h,
        "f": sol.f,
    }))
}

/// The mode and rings of points at radii 0.5, 1, ..., 2.5 around it.
fn default_probes(m: &Manifold, mu: &Point) -> geostein::Result<Vec<Point>> {
    let frame = m.frame(mu);
    let dim = frame.dim();
    let mut probes = vec![mu.clone()];
    let directions: Vec<DVector<f64>> = if dim >= 2 {
        (0..8)
            .map(|k| {
                let a = k as f64 * std::f64::consts::FRAC_PI_4;
                DVector::from_fn(dim, |i, _| match i {
                    0 => a.cos(),
                    1 => a.sin(),
                    _ => 0.0,
                })
            })
            .collect()
    } else {
        vec![DVector::from_element(1, 1.0), DVector::from_element(1, -1.0)]
    };
    for r in [0.5, 1.0, 1.5, 2.0, 2.5] {
        for d in &directions {
            probes.push(m.exp_at(mu, &frame.vector(&(d * r)))?);
        }
    }
    Ok(probes)
}

fn curvature_check(cfg: &ExperimentConfig, t: &TargetDensity) -> Result<Value, CliError> {
    let m = Manifold::new(t.manifold().kind())?;
    let probes = match &cfg.probes {
        Some(rows) => build_points(&m, rows, "/probes")?,
        None => {
            let mu = cfg
                .density
                .mu
                .as_ref()
                .map(|c| m.kind().point(c))
                .transpose()?
                .unwrap_or_else(|| m.origin());
            default_probes(&m, &mu)?
        }
    };
    let check = t.curvature_check(&probes)?;
    Ok(json!({
        "check": check,
        "probes": probes.len(),
    }))
}
