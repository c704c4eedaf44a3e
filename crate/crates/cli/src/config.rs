//! Experiment configuration: strict parsing with JSON-pointer error paths.

use std::cell::RefCell;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::{Map, Value};

use geostein::geometry::{Manifold, ManifoldKind, Point};
use geostein::ksd::{DerivativeMode, Kernel, KernelKind};
use geostein::measures::TargetDensity;
use geostein::operator::{DiffConfig, TestFunction};
use geostein::sampling::ChainConfig;

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Sample,
    Ksd,
    Gof,
    SteinCheck,
    SymmetryCheck,
    Spectrum,
    SolveStein,
    CurvatureCheck,
}

impl Command {
    const NAMES: [(&'static str, Command); 8] = [
        ("sample", Command::Sample),
        ("ksd", Command::Ksd),
        ("gof", Command::Gof),
        ("stein-check", Command::SteinCheck),
        ("symmetry-check", Command::SymmetryCheck),
        ("spectrum", Command::Spectrum),
        ("solve-stein", Command::SolveStein),
        ("curvature-check", Command::CurvatureCheck),
    ];

    pub fn name(self) -> &'static str {
        Self::NAMES.iter().find(|(_, c)| *c == self).map(|(n, _)| *n).unwrap_or("?")
    }

    fn uses_samples(self) -> bool {
        matches!(self, Command::Sample | Command::Ksd | Command::Gof | Command::SteinCheck)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BallSpec {
    pub center: Vec<f64>,
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ManifoldSpec {
    pub kind: String,
    pub dim: usize,
    pub ball: Option<BallSpec>,
    pub puncture: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DensitySpec {
    pub family: String,
    pub mu: Option<Vec<f64>>,
    pub kappa: Option<f64>,
    pub alpha: Option<f64>,
    pub sigma: Option<f64>,
    pub gamma: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChainSpec {
    pub step: f64,
    pub burn_in: usize,
    pub thinning: usize,
    pub chains: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FunctionSpec {
    /// Ambient coordinate `x_i` (sphere, hyperboloid, Euclidean).
    Coordinate { index: usize },
    /// `cos(k θ + phase)` in the first angle or coordinate.
    Fourier { frequency: f64, phase: f64 },
    ZonalBump { center: Vec<f64>, radius: f64 },
    IntervalBump { center: f64, half_width: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub command: Command,
    pub manifold: ManifoldSpec,
    pub density: DensitySpec,
    pub kernel: Option<Kernel>,
    /// Draws per chain.
    pub n: usize,
    pub seed: u64,
    pub chain: ChainSpec,
    pub h_grad: f64,
    pub h_lap: f64,
    pub level: f64,
    #[serde(rename = "B")]
    pub bootstrap: usize,
    /// CSV sample file used instead of drawing a chain.
    pub input: Option<String>,
    pub samples_file: String,
    pub resolution: usize,
    pub n_eigs: usize,
    pub tol: Option<f64>,
    pub wpi_trials: usize,
    pub f: Option<FunctionSpec>,
    pub h: Option<FunctionSpec>,
    pub probes: Option<Vec<Vec<f64>>>,
    pub strict: bool,
    pub ignored_fields: Vec<String>,
}

fn pointer_join(base: &str, key: &str) -> String {
    format!("{base}/{}", key.replace('~', "~0").replace('/', "~1"))
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> CliError {
    CliError::Schema { path: path.into(), message: message.into() }
}

/// A JSON object being consumed key by key; leftovers are unknown fields.
struct Obj<'a> {
    map: &'a Map<String, Value>,
    path: String,
    seen: RefCell<Vec<String>>,
}

impl<'a> Obj<'a> {
    fn new(v: &'a Value, path: &str) -> Result<Self, CliError> {
        match v {
            Value::Object(map) => Ok(Obj { map, path: path.to_string(), seen: RefCell::new(Vec::new()) }),
            _ => Err(schema(path, "expected an object")),
        }
    }

    fn at(&self, key: &str) -> String {
        pointer_join(&self.path, key)
    }

    fn get(&self, key: &str) -> Option<&'a Value> {
        self.seen.borrow_mut().push(key.to_string());
        self.map.get(key).filter(|v| !v.is_null())
    }

    fn str(&self, key: &str) -> Result<Option<&'a str>, CliError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(_) => Err(schema(self.at(key), "expected a string")),
        }
    }

    fn req_str(&self, key: &str) -> Result<&'a str, CliError> {
        self.str(key)?.ok_or_else(|| schema(self.at(key), "required"))
    }

    fn f64(&self, key: &str) -> Result<Option<f64>, CliError> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_f64()
                .filter(|x| x.is_finite())
                .map(Some)
                .ok_or_else(|| schema(self.at(key), "expected a finite number")),
        }
    }

    fn u64(&self, key: &str) -> Result<Option<u64>, CliError> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_u64()
                .map(Some)
                .ok_or_else(|| schema(self.at(key), "expected a non-negative integer")),
        }
    }

    fn usize(&self, key: &str) -> Result<Option<usize>, CliError> {
        Ok(self.u64(key)?.map(|v| v as usize))
    }

    fn bool(&self, key: &str) -> Result<Option<bool>, CliError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Bool(b)) => Ok(Some(*b)),
            Some(_) => Err(schema(self.at(key), "expected a boolean")),
        }
    }

    fn vec(&self, key: &str) -> Result<Option<Vec<f64>>, CliError> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => number_list(v, &self.at(key)).map(Some),
        }
    }

    fn matrix(&self, key: &str) -> Result<Option<Vec<Vec<f64>>>, CliError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Array(rows)) => rows
                .iter()
                .enumerate()
                .map(|(i, r)| number_list(r, &pointer_join(&self.at(key), &i.to_string())))
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
            Some(_) => Err(schema(self.at(key), "expected an array of arrays")),
        }
    }

    fn obj(&self, key: &str) -> Result<Option<Obj<'a>>, CliError> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => Obj::new(v, &self.at(key)).map(Some),
        }
    }

    /// Unknown keys: an error in strict mode, otherwise collected.
    fn finish(self, strict: bool, ignored: &mut Vec<String>) -> Result<(), CliError> {
        let seen = self.seen.borrow();
        for key in self.map.keys() {
            if !seen.iter().any(|s| s == key) {
                let path = self.at(key);
                if strict {
                    return Err(CliError::UnknownField { path });
                }
                ignored.push(path);
            }
        }
        Ok(())
    }
}

fn number_list(v: &Value, path: &str) -> Result<Vec<f64>, CliError> {
    let items = v.as_array().ok_or_else(|| schema(path, "expected an array of numbers"))?;
    items
        .iter()
        .enumerate()
        .map(|(i, x)| {
            x.as_f64()
                .filter(|x| x.is_finite())
                .ok_or_else(|| schema(pointer_join(path, &i.to_string()), "expected a finite number"))
        })
        .collect()
}

fn positive(v: f64, path: String) -> Result<f64, CliError> {
    if v > 0.0 {
        Ok(v)
    } else {
        Err(schema(path, format!("{v} must be positive")))
    }
}

fn parse_manifold(o: &Obj, strict: bool, ignored: &mut Vec<String>) -> Result<ManifoldSpec, CliError> {
    let kind = o.req_str("kind")?.to_string();
    let default_dim = match kind.as_str() {
        "circle" => 1,
        "sphere" | "hyperbolic" | "torus" | "euclidean" => 2,
        other => return Err(schema(o.at("kind"), format!("unknown manifold kind '{other}'"))),
    };
    let dim = o.usize("dim")?.unwrap_or(default_dim);
    if dim == 0 || (kind == "circle" && dim != 1) {
        return Err(schema(o.at("dim"), format!("invalid dimension {dim} for {kind}")));
    }
    let ball = match o.obj("ball")? {
        None => None,
        Some(b) => {
            let center = b.vec("center")?.ok_or_else(|| schema(b.at("center"), "required"))?;
            let radius = b.f64("radius")?.ok_or_else(|| schema(b.at("radius"), "required"))?;
            let radius = positive(radius, b.at("radius"))?;
            b.finish(strict, ignored)?;
            Some(BallSpec { center, radius })
        }
    };
    let puncture = o.vec("puncture")?;
    if ball.is_some() && puncture.is_some() {
        return Err(schema(o.at("puncture"), "a manifold takes a ball or a puncture, not both"));
    }
    Ok(ManifoldSpec { kind, dim, ball, puncture })
}

fn parse_density(o: &Obj) -> Result<DensitySpec, CliError> {
    let family = o.req_str("family")?.to_string();
    let spec = DensitySpec {
        family: family.clone(),
        mu: o.vec("mu")?,
        kappa: o.f64("kappa")?,
        alpha: o.f64("alpha")?,
        sigma: o.f64("sigma")?,
        gamma: o.matrix("gamma")?,
    };
    let needs = |key: &str, present: bool| {
        if present {
            Ok(())
        } else {
            Err(schema(o.at(key), format!("required for {family}")))
        }
    };
    match family.as_str() {
        "uniform" => {}
        "von-mises-fisher" => needs("kappa", spec.kappa.is_some())?,
        "intrinsic-radial" | "gaussian" => {}
        "riemannian-gaussian" => needs("gamma", spec.gamma.is_some())?,
        other => return Err(schema(o.at("family"), format!("unknown density family '{other}'"))),
    }
    Ok(spec)
}

fn parse_kernel(o: &Obj) -> Result<Kernel, CliError> {
    let kind = match o.str("kind")?.unwrap_or("chordal_gaussian") {
        "chordal_gaussian" => KernelKind::ChordalGaussian,
        "geodesic_gaussian" => KernelKind::GeodesicGaussian,
        other => return Err(schema(o.at("kind"), format!("unknown kernel '{other}'"))),
    };
    let mode = match o.str("mode")?.unwrap_or("auto") {
        "auto" => DerivativeMode::Auto,
        "closed_form" => DerivativeMode::ClosedForm,
        "nested_fd" => DerivativeMode::NestedFd,
        other => return Err(schema(o.at("mode"), format!("unknown derivative mode '{other}'"))),
    };
    let lengthscale = positive(o.f64("lengthscale")?.unwrap_or(1.0), o.at("lengthscale"))?;
    let amplitude = positive(o.f64("amplitude")?.unwrap_or(1.0), o.at("amplitude"))?;
    Kernel::new(kind, lengthscale)
        .and_then(|k| k.with_amplitude(amplitude))
        .map(|k| k.with_mode(mode))
        .map_err(|e| schema(o.path.clone(), e.to_string()))
}

fn parse_function(o: &Obj) -> Result<FunctionSpec, CliError> {
    let need = |key: &str, v: Option<f64>| v.ok_or_else(|| schema(o.at(key), "required"));
    match o.req_str("kind")? {
        "coordinate" => Ok(FunctionSpec::Coordinate {
            index: o.usize("index")?.ok_or_else(|| schema(o.at("index"), "required"))?,
        }),
        "fourier" => Ok(FunctionSpec::Fourier {
            frequency: need("frequency", o.f64("frequency")?)?,
            phase: o.f64("phase")?.unwrap_or(0.0),
        }),
        "zonal_bump" => Ok(FunctionSpec::ZonalBump {
            center: o.vec("center")?.ok_or_else(|| schema(o.at("center"), "required"))?,
            radius: positive(need("radius", o.f64("radius")?)?, o.at("radius"))?,
        }),
        "interval_bump" => Ok(FunctionSpec::IntervalBump {
            center: o.f64("center")?.unwrap_or(0.0),
            half_width: positive(need("half_width", o.f64("half_width")?)?, o.at("half_width"))?,
        }),
        other => Err(schema(o.at("kind"), format!("unknown test function '{other}'"))),
    }
}

/// Parses and validates a configuration, materializing every default.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, CliError> {
    let root: Value = serde_json::from_str(text).map_err(|e| CliError::Json(e.to_string()))?;
    let o = Obj::new(&root, "")?;
    let strict = o.bool("strict")?.unwrap_or(true);
    let mut ignored = Vec::new();

    let command_name = o.req_str("command")?;
    let command = Command::NAMES
        .iter()
        .find(|(n, _)| *n == command_name)
        .map(|(_, c)| *c)
        .ok_or_else(|| schema("/command", format!("unknown command '{command_name}'")))?;

    let mo = o.obj("manifold")?.ok_or_else(|| schema("/manifold", "required"))?;
    let manifold = parse_manifold(&mo, strict, &mut ignored)?;
    mo.finish(strict, &mut ignored)?;

    let dob = o.obj("density")?.ok_or_else(|| schema("/density", "required"))?;
    let mut density = parse_density(&dob)?;
    dob.finish(strict, &mut ignored)?;

    let kernel = match o.obj("kernel")? {
        Some(ko) => {
            let k = parse_kernel(&ko)?;
            ko.finish(strict, &mut ignored)?;
            Some(k)
        }
        None if matches!(command, Command::Ksd | Command::Gof) => return Err(schema("/kernel", "required")),
        None => None,
    };

    let n = o.usize("n")?.unwrap_or(1000);
    if n == 0 {
        return Err(schema("/n", "must be at least 1"));
    }
    let seed = o.u64("seed")?.unwrap_or(0);

    let m = build_manifold(&manifold)?;
    let chain = match o.obj("chain")? {
        Some(co) => {
            let c = ChainSpec {
                step: positive(
                    co.f64("step")?.unwrap_or_else(|| ChainConfig::default_step(m.kind())),
                    co.at("step"),
                )?,
                burn_in: co.usize("burn_in")?.unwrap_or(1000),
                thinning: co.usize("thinning")?.unwrap_or(1),
                chains: co.usize("chains")?.unwrap_or(1),
            };
            if c.thinning == 0 {
                return Err(schema(co.at("thinning"), "must be at least 1"));
            }
            if c.chains == 0 {
                return Err(schema(co.at("chains"), "must be at least 1"));
            }
            co.finish(strict, &mut ignored)?;
            c
        }
        None => ChainSpec { step: ChainConfig::default_step(m.kind()), burn_in: 1000, thinning: 1, chains: 1 },
    };

    let defaults = DiffConfig::default();
    let h_grad = o.f64("h_grad")?.unwrap_or(defaults.h_grad);
    let h_lap = o.f64("h_lap")?.unwrap_or(defaults.h_lap);
    DiffConfig::new(h_grad, h_lap).map_err(|e| schema("/h_grad", e.to_string()))?;

    let level = o.f64("level")?.unwrap_or(0.05);
    if !(level > 0.0 && level < 1.0) {
        return Err(schema("/level", format!("{level} outside (0, 1)")));
    }
    let bootstrap = o.usize("B")?.unwrap_or(500);
    if bootstrap == 0 {
        return Err(schema("/B", "must be at least 1"));
    }
    let input = o.str("input")?.map(str::to_string);
    let samples_file = o.str("samples_file")?.unwrap_or("samples.csv").to_string();
    if samples_file.is_empty() || samples_file.contains(['/', '\\']) {
        return Err(schema("/samples_file", "must be a plain file name"));
    }
    let resolution = o.usize("resolution")?.unwrap_or(256);
    let n_eigs = o.usize("n_eigs")?.unwrap_or(6);
    if n_eigs < 2 {
        return Err(schema("/n_eigs", "must be at least 2"));
    }
    let tol = match o.f64("tol")? {
        Some(t) => Some(positive(t, "/tol".into())?),
        None => None,
    };
    let wpi_trials = o.usize("wpi_trials")?.unwrap_or(100);

    let mut function = |key: &str| -> Result<Option<FunctionSpec>, CliError> {
        match o.obj(key)? {
            Some(fo) => {
                let f = parse_function(&fo)?;
                fo.finish(strict, &mut ignored)?;
                Ok(Some(f))
            }
            None => Ok(None),
        }
    };
    let f = function("f")?;
    let h = function("h")?;
    let required: &[(&str, bool)] = match command {
        Command::SteinCheck => &[("/f", f.is_some())],
        Command::SymmetryCheck => &[("/f", f.is_some()), ("/h", h.is_some())],
        Command::SolveStein => &[("/h", h.is_some())],
        _ => &[],
    };
    if let Some((path, _)) = required.iter().find(|(_, ok)| !ok) {
        return Err(schema(*path, format!("required for {}", command.name())));
    }
    let probes = o.matrix("probes")?;
    o.finish(strict, &mut ignored)?;

    // materialize the mode so the echoed config is complete
    if density.mu.is_none() && density.family != "uniform" && density.family != "gaussian" {
        density.mu = Some(m.origin().as_slice().to_vec());
    }
    if density.family == "gaussian" && density.mu.is_none() {
        density.mu = Some(vec![0.0; m.kind().coord_len()]);
    }
    if density.family == "intrinsic-radial" {
        density.alpha.get_or_insert(2.0);
    }
    if matches!(density.family.as_str(), "intrinsic-radial" | "gaussian") {
        density.sigma.get_or_insert(1.0);
    }

    let cfg = ExperimentConfig {
        command,
        manifold,
        density,
        kernel,
        n,
        seed,
        chain,
        h_grad,
        h_lap,
        level,
        bootstrap,
        input,
        samples_file,
        resolution,
        n_eigs,
        tol,
        wpi_trials,
        f,
        h,
        probes,
        strict,
        ignored_fields: ignored,
    };
    // every cross-reference must resolve before anything runs
    let t = build_density(&cfg)?;
    for (key, spec) in [("/f", &cfg.f), ("/h", &cfg.h)] {
        if let Some(spec) = spec {
            build_function(spec, t.manifold()).map_err(|e| schema(key, e.to_string()))?;
        }
    }
    if let Some(probes) = &cfg.probes {
        build_points(t.manifold(), probes, "/probes")?;
    }
    if command.uses_samples() && cfg.input.is_none() {
        cfg.chain_config(0, &t).validate().map_err(|e| schema("/chain", e.to_string()))?;
    }
    Ok(cfg)
}

pub fn kind_of(spec: &ManifoldSpec) -> ManifoldKind {
    match spec.kind.as_str() {
        "circle" => ManifoldKind::Circle,
        "sphere" => ManifoldKind::Sphere(spec.dim),
        "hyperbolic" => ManifoldKind::Hyperbolic(spec.dim),
        "torus" => ManifoldKind::FlatTorus(spec.dim),
        _ => ManifoldKind::Euclidean(spec.dim),
    }
}

pub fn build_manifold(spec: &ManifoldSpec) -> Result<Manifold, CliError> {
    let m = Manifold::new(kind_of(spec)).map_err(|e| schema("/manifold", e.to_string()))?;
    if let Some(b) = &spec.ball {
        let c = m.point(&b.center).map_err(|e| schema("/manifold/ball/center", e.to_string()))?;
        return m.with_geodesic_ball(c, b.radius).map_err(|e| schema("/manifold/ball", e.to_string()));
    }
    if let Some(p) = &spec.puncture {
        let pole = m.point(p).map_err(|e| schema("/manifold/puncture", e.to_string()))?;
        return m.punctured(pole).map_err(|e| schema("/manifold/puncture", e.to_string()));
    }
    Ok(m)
}

pub fn build_points(m: &Manifold, rows: &[Vec<f64>], path: &str) -> Result<Vec<Point>, CliError> {
    rows.iter()
        .enumerate()
        .map(|(i, r)| m.kind().point(r).map_err(|e| schema(pointer_join(path, &i.to_string()), e.to_string())))
        .collect()
}

pub fn build_density(cfg: &ExperimentConfig) -> Result<TargetDensity, CliError> {
    let m = build_manifold(&cfg.manifold)?;
    let d = &cfg.density;
    let mu = || -> Result<Point, CliError> {
        let coords = d.mu.clone().unwrap_or_else(|| m.origin().as_slice().to_vec());
        m.kind().point(&coords).map_err(|e| schema("/density/mu", e.to_string()))
    };
    let lib = |e: geostein::Error| schema("/density", e.to_string());
    match d.family.as_str() {
        "uniform" => Ok(TargetDensity::uniform(m)),
        "von-mises-fisher" => TargetDensity::von_mises_fisher(m.clone(), mu()?, d.kappa.unwrap_or(0.0)).map_err(lib),
        "intrinsic-radial" => TargetDensity::intrinsic_radial(
            m.clone(),
            d.alpha.unwrap_or(2.0),
            mu()?,
            d.sigma.unwrap_or(1.0),
        )
        .map_err(lib),
        "riemannian-gaussian" => {
            let rows = d.gamma.clone().unwrap_or_default();
            let n = rows.len();
            if rows.iter().any(|r| r.len() != n) {
                return Err(schema("/density/gamma", "must be square"));
            }
            let gamma = DMatrix::from_row_iterator(n, n, rows.into_iter().flatten());
            TargetDensity::riemannian_gaussian(m.clone(), mu()?, gamma).map_err(lib)
        }
        _ => {
            let mean = DVector::from_vec(d.mu.clone().unwrap_or_else(|| vec![0.0; m.kind().coord_len()]));
            TargetDensity::gaussian(m, mean, d.sigma.unwrap_or(1.0)).map_err(lib)
        }
    }
}

pub fn build_function(spec: &FunctionSpec, m: &Manifold) -> geostein::Result<TestFunction> {
    match spec {
        FunctionSpec::Coordinate { index } => TestFunction::coordinate(m.kind(), *index),
        FunctionSpec::Fourier { frequency, phase } => {
            let (k, p) = (*frequency, *phase);
            if !matches!(m.kind(), ManifoldKind::Circle | ManifoldKind::FlatTorus(_) | ManifoldKind::Euclidean(_)) {
                return Err(geostein::Error::UnsupportedManifold(format!("fourier mode on {}", m.kind().name())));
            }
            Ok(TestFunction::univariate(
                move |t| (k * t + p).cos(),
                move |t| -k * (k * t + p).sin(),
                move |t| -k * k * (k * t + p).cos(),
            ))
        }
        FunctionSpec::ZonalBump { center, radius } => TestFunction::zonal_bump(m.kind().point(center)?, *radius),
        FunctionSpec::IntervalBump { center, half_width } => {
            TestFunction::interval_bump(m.kind().point(&[*center])?, *half_width)
        }
    }
}

impl ExperimentConfig {
    pub fn diff(&self) -> DiffConfig {
        DiffConfig::new(self.h_grad, self.h_lap).expect("validated at parse time")
    }

    pub fn chain_config(&self, seed: u64, t: &TargetDensity) -> ChainConfig {
        let mut c = ChainConfig::new(t.manifold().kind(), self.n, seed);
        c.step = self.chain.step;
        c.burn_in = self.chain.burn_in;
        c.thinning = self.chain.thinning;
        c
    }
}
