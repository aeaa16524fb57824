use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Everything that can go wrong between problem setup and validation.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {what} at entry {index}")]
    Evaluation { what: &'static str, index: usize },

    #[error("unknown problem `{name}`; registered: {available:?}")]
    UnknownProblem { name: String, available: Vec<String> },

    #[error("step size underflow at t = {t} (h = {h:e}); problem may be stiff")]
    StepUnderflow { t: f64, h: f64 },

    #[error("solution blew up; last finite state at t = {last_good_t}")]
    BlowUp { last_good_t: f64 },

    #[error("maximum number of integration steps ({0}) exceeded")]
    MaxSteps(usize),

    #[error("missing capability: {0}")]
    Capability(&'static str),

    #[error("evaluation point {t} outside of [{lo}, {hi}]")]
    OutOfRange { t: f64, lo: f64, hi: f64 },

    #[error("no periodic orbit found after {iterations} Newton iterations; residuals {history:?}")]
    NoCycle { iterations: usize, history: Vec<f64> },

    #[error("bordered shooting system is singular (sigma_min = {sigma_min:e})")]
    DegeneratePhase { sigma_min: f64 },

    #[error("adjoint eigenvector is orthogonal to the cycle tangent (pairing = {pairing:e})")]
    NonGenericAdjoint { pairing: f64 },

    #[error("projector normalization defect {defect:e} exceeds {limit:e}")]
    Normalization { defect: f64, limit: f64 },

    #[error("restricted operator is singular (sigma_min = {sigma_min:e}); a nontrivial multiplier is at 1")]
    Resonance { sigma_min: f64 },

    #[error("invertibility condition fails on the projector range (sigma_min = {sigma_min:e})")]
    Degeneracy { sigma_min: f64 },

    #[error("parameter must be non-negative, got {0}")]
    Domain(f64),

    #[error("eigenvalue |mu| = {modulus} too close to contour radius {radius}; try radius {suggested}")]
    ContourPlacement {
        radius: f64,
        modulus: f64,
        suggested: f64,
    },

    #[error("contour encloses {0} eigenvalues, expected exactly one")]
    Multiplicity(usize),

    #[error("operation needs a rank-one projector, got rank {0}")]
    UnsupportedMultiplicity(usize),

    #[error("hypothesis `{hypothesis}` violated: residual {residual:e} against threshold {threshold:e}")]
    Audit {
        hypothesis: &'static str,
        residual: f64,
        threshold: f64,
    },

    #[error("fixed-point Jacobian is nearly singular (sigma_min = {sigma_min:e})")]
    NearResonance { sigma_min: f64 },

    #[error("Newton did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: String, message: String },

    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}
