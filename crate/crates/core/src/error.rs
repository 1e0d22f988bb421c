use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("transfer matrices carry different wavenumbers ({0} vs {1})")]
    MismatchedWavenumber(f64, f64),
    #[error("matrix element M22 vanishes (|M22| = {0:e})")]
    SingularMatrix(f64),
    #[error("multiple-reflection denominator vanishes (|1 - rL2 rR1| = {0:e})")]
    ResonancePole(f64),
    #[error("matrix is not unimodular (|det - 1| = {0:e})")]
    NotUnimodular(f64),
    #[error("asymptotic solutions are degenerate (|W| = {0:e})")]
    DegenerateSolutions(f64),
    #[error("K vanishes for species {species} at energy {energy}")]
    SingularK { species: usize, energy: f64 },
    #[error("recursion value overflowed ({0:e}); rescale the state")]
    Overflow(f64),
    #[error("energy {energy} lies outside the band of a pure chain with on-site energy {epsilon}")]
    OutOfBand { epsilon: f64, energy: f64 },
    #[error("invalid disorder specification: {0}")]
    InvalidSpec(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("transfer-matrix product could not be kept finite")]
    UnstableProduct,
    #[error("transmission underflowed; use the log-transmission accumulator")]
    ZeroTransmission,
    #[error("state has zero norm")]
    ZeroState,
    #[error("canonical coefficients are not real (imaginary part {0:e})")]
    ComplexCoefficients(f64),
    #[error("fixed-point iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("phase distribution for species {species} decreases by {drop:e}")]
    NonMonotone { species: usize, drop: f64 },
}
