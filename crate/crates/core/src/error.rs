use std::io;

use thiserror::Error;

use crate::hamiltonian::Wave;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("symbol is not Hermitian-symmetric: {0}")]
    SymmetryViolation(String),

    #[error("invalid Hamiltonian: {0}")]
    InvalidHamiltonian(String),

    #[error("frequency map is degenerate at I = {at:?} (Hessian determinant {det:e})")]
    DegenerateFrequencyMap { at: [f64; 2], det: f64 },

    #[error("grid spacing {spacing:e} cannot resolve a tube of radius {radius:e}")]
    Resolution { spacing: f64, radius: f64 },

    #[error("action {action:?} lies outside the domain")]
    OutOfDomain { action: [f64; 2] },

    #[error("eta map is not injective: eta({a:?}) = eta({b:?})")]
    SingularEta { a: [f64; 2], b: [f64; 2] },

    #[error("small divisor <omega, k> = {divisor:e} for k = {k:?}")]
    SmallDivisor { k: Wave, divisor: f64 },

    #[error("quasieigenvalues of {m:?} and {n:?} coincide identically in t")]
    DegeneratePair { m: Wave, n: Wave },

    #[error("unperturbed level of {m:?} is nearly degenerate with its k = {k:?} neighbour (gap {gap:e})")]
    NearDegeneracy { m: Wave, k: Wave, gap: f64 },

    #[error("lattice index {m:?} is not part of the basis truncation")]
    OutOfBasis { m: Wave },

    #[error("eigenvector at E = {eigenvalue} carries {shell_mass:e} of its mass on the truncation shell")]
    BoundaryContamination { eigenvalue: f64, shell_mass: f64 },

    #[error("eigensolver failure: {0}")]
    SolverFailure(String),

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("spectral coverage: {0}")]
    Coverage(String),

    #[error("nonresonant action set is empty")]
    EmptyNonresonantSet,

    #[error("need at least {needed} data points, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("hypothesis violated: {quantity} = {value:e} at I = {at:?}")]
    HypothesisViolation {
        quantity: &'static str,
        at: [f64; 2],
        value: f64,
    },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed data file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Process exit code used by the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::HypothesisViolation { .. } => 2,
            Error::Config(_) | Error::InvalidHamiltonian(_) | Error::Format(_) => 4,
            _ => 3,
        }
    }
}
