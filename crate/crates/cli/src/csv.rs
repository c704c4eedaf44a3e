//! Sample files: a `# manifold=<kind>;n=<dim>` header, then one point per
//! row in model coordinates, comma separated.
//!
//! Values are written in Rust's shortest round-trip notation. Reading
//! re-projects sphere and hyperboloid rows onto the model, which can move a
//! coordinate by one unit in the last place.

use std::fmt::Write as _;

use geostein::geometry::{ManifoldKind, Point};
use geostein::sampling::SampleSet;

use crate::CliError;

pub fn header(kind: ManifoldKind) -> String {
    format!("# manifold={};n={}", kind.name(), kind.dim())
}

pub fn write_samples(s: &SampleSet) -> String {
    let mut out = header(s.kind);
    out.push('\n');
    for p in &s.points {
        let row: Vec<String> = p.as_slice().iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

fn parse_header(line: &str) -> Option<ManifoldKind> {
    let rest = line.strip_prefix("# manifold=")?;
    let (name, dim) = rest.split_once(";n=")?;
    let dim: usize = dim.trim().parse().ok()?;
    match name {
        "circle" if dim == 1 => Some(ManifoldKind::Circle),
        "sphere" => Some(ManifoldKind::Sphere(dim)),
        "hyperbolic" => Some(ManifoldKind::Hyperbolic(dim)),
        "torus" => Some(ManifoldKind::FlatTorus(dim)),
        "euclidean" => Some(ManifoldKind::Euclidean(dim)),
        _ => None,
    }
}

pub fn read_samples(text: &str) -> Result<SampleSet, CliError> {
    let err = |line: usize, message: String| CliError::Csv { line, message };
    let mut lines = text.lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let kind = parse_header(first).ok_or_else(|| err(1, format!("bad header '{first}'")))?;
    let mut points: Vec<Point> = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let coords = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| err(i + 1, e.to_string()))?;
        points.push(kind.point(&coords).map_err(|e| err(i + 1, e.to_string()))?);
    }
    SampleSet::from_points(kind, points).map_err(CliError::Compute)
}
