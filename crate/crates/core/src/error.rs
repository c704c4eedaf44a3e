use thiserror::Error;

/// Errors raised by the geometry, density, operator and estimation layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("expected {expected} coordinates, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("model constraint violated (residual {residual:e})")]
    ConstraintViolation { residual: f64 },

    #[error("point lies outside the support")]
    OutOfSupport,

    #[error("points or vectors belong to different manifolds")]
    MixedManifolds,

    #[error("point lies on (or within the guard band of) the cut locus")]
    CutLocus,

    #[error("point is not on the boundary (offset {offset:e})")]
    NotOnBoundary { offset: f64 },

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("point lies on the singular set of the density")]
    SingularPoint,

    #[error("unsupported manifold: {0}")]
    UnsupportedManifold(String),

    #[error("unsupported density family: {0}")]
    UnsupportedFamily(String),

    #[error("unsupported kernel: {0}")]
    UnsupportedKernel(String),

    #[error("finite-difference stencil leaves the support")]
    SupportBoundary,

    #[error("empty sample")]
    EmptySample,

    #[error("TooFewSamples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("significance level {0} outside (0, 1)")]
    InvalidLevel(f64),

    #[error("grid node {0} hits the singular set of the density")]
    SingularNode(usize),

    #[error("spectrum is not separated at tol {tol:e} (next eigenvalue {next:e})")]
    IllSeparatedSpectrum { tol: f64, next: f64 },

    #[error("operator kernel has dimension {dim}, expected 1")]
    DegenerateKernel { dim: usize },

    #[error("solver failure: {0}")]
    SolverFailure(String),

    #[error("every trial vector had zero Dirichlet energy")]
    ZeroGradient,

    #[error("chain never accepted a proposal after burn-in")]
    NeverAccepted,

    #[error("sample sets have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),

    #[error("chain too short: need at least {needed}, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("at pair ({i}, {j}): {source}")]
    AtPair {
        i: usize,
        j: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
