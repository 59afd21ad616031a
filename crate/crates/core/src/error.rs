use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("root finder did not converge after {iters} iterations (r = {r}, residual = {residual:e})")]
    RootNotConverged { r: f64, iters: usize, residual: f64 },

    #[error("non-finite input {0} rejected")]
    NonFiniteInput(f64),

    #[error("invalid potential: {0}")]
    InvalidPotential(String),

    #[error("invalid grid dimensions: {0}")]
    InvalidDimensions(String),

    #[error("fields live on different grids ({expected} vs {found} nodes)")]
    GridMismatch { expected: usize, found: usize },

    #[error("linear solve failed: {0}")]
    LinearSolveFailed(String),

    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("semismooth Newton did not converge in {iters} iterations (residual {residual:e}); try a smaller time step or a larger epsilon")]
    NewtonDiverged { iters: usize, residual: f64 },

    #[error("phenomenological source needs the chemical potential")]
    MissingChemicalPotential,

    #[error("initial datum leaves the domain of the convex potential at node {node} (phi = {value})")]
    InadmissibleInitialData { node: usize, value: f64 },

    #[error("energy is infinite: node {node} has phi = {value} outside the potential's domain")]
    EnergyInfinite { node: usize, value: f64 },

    #[error("incompatible data: {0}")]
    IncompatibleData(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("step {step} failed: {source}")]
    StepFailed {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("configuration error:\n{0}")]
    Config(crate::config::ConfigErrors),

    #[error("snapshot format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Strips `StepFailed` wrappers.
    pub fn root_cause(&self) -> &Error {
        match self {
            Error::StepFailed { source, .. } => source.root_cause(),
            other => other,
        }
    }
}
