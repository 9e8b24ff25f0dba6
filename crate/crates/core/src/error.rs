use thiserror::Error;

/// Broad classification used by front ends to map failures onto exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Inputs violate a documented precondition.
    Validation,
    /// A numerical procedure failed or produced an unusable result.
    Numerical,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("extremal or invalid parameters: m = {m}, lambda = {lambda} ({reason})")]
    ExtremalOrInvalidParams { m: f64, lambda: f64, reason: &'static str },

    #[error("argument {value} outside domain {domain}")]
    OutOfDomain { value: f64, domain: String },

    #[error("{what} did not converge after {iterations} iterations")]
    NoConvergence { what: &'static str, iterations: usize },

    #[error("point is not covered by chart {chart}")]
    OutsideOverlap { chart: &'static str },

    #[error("chart {chart} frame degenerates at the requested point")]
    ChartDegenerate { chart: &'static str },

    #[error("spherical quadrature under-resolved: Parseval defect {defect:e} exceeds {threshold:e}")]
    QuadratureUnderResolved { defect: f64, threshold: f64 },

    #[error("CFL ratio {ratio} exceeds 1")]
    CflViolation { ratio: f64 },

    #[error("non-finite value detected at step {step}")]
    NonFiniteDetected { step: usize },

    #[error("|W(sigma)| = {wronskian:e} below threshold at sigma = {re} + {im}i")]
    NearResonance { re: f64, im: f64, wronskian: f64 },

    #[error("linear system is numerically singular")]
    SingularSystem,

    #[error("argument-principle contour passes too close to a zero")]
    ContourThroughZero,

    #[error("outgoing series does not converge: {0}")]
    SeriesDivergence(String),

    #[error("tail fit unstable: relative window variation {variation:e}")]
    FitUnstable { variation: f64 },

    #[error("fit window too short: {length} < {required}")]
    WindowTooShort { length: f64, required: f64 },

    #[error("contour Im sigma = {height} outside the region of analyticity")]
    ContourOutsideAnalyticity { height: f64 },

    #[error("residue constant {residue} differs from fitted constant {fitted}")]
    ResidueMismatch { residue: f64, fitted: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::ExtremalOrInvalidParams { .. }
            | Error::OutOfDomain { .. }
            | Error::OutsideOverlap { .. }
            | Error::ChartDegenerate { .. }
            | Error::CflViolation { .. }
            | Error::WindowTooShort { .. }
            | Error::ContourOutsideAnalyticity { .. }
            | Error::InvalidInput(_) => ErrorClass::Validation,
            _ => ErrorClass::Numerical,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
