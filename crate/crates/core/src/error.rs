use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unknown boundary tag `{0}`")]
    UnknownTag(String),
    #[error("conflicting constraint on dof {dof}: {first} vs {second}")]
    ConflictingConstraint { dof: usize, first: f64, second: f64 },
    #[error("active-set entry {0} is not a phase-field dof")]
    NotPhaseField(usize),
    #[error("level {level} out of range (hierarchy has {n_levels} levels)")]
    LevelOutOfRange { level: usize, n_levels: usize },
    #[error("quadrature cache is stale (built for version {cache}, state is at {state})")]
    StaleCache { cache: u64, state: u64 },
    #[error("missing eigenvalue estimate for Chebyshev iteration")]
    MissingEigenvalueEstimate,
    #[error("non-positive lumped mass entry {value} at phase-field node {node}")]
    NonPositiveMass { node: usize, value: f64 },
    #[error("linear solver did not converge: relative residual {residual:e} after {iterations} iterations")]
    LinearSolver { iterations: usize, residual: f64 },
    #[error("time step {step} failed: {reason}")]
    StepFailed { step: usize, reason: String },
    #[error("resource limit: {0}")]
    Resource(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
