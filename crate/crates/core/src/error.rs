//! Error type shared by every module of the crate.

use thiserror::Error;

/// Errors raised by grid construction, operator assembly, the solver and the
/// analysis routines.
#[derive(Debug, Error)]
pub enum MilneError {
    /// A caller-supplied parameter is outside its admissible range.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// The discrete collision operator is too inaccurate to be corrected.
    #[error("assembly-quality error: {0}")]
    AssemblyQuality(String),

    /// The assembled operator violates a structural property (e.g. its gap).
    #[error("operator-assembly error: {0}")]
    OperatorAssembly(String),

    /// The force/potential pair fails one of its structural inequalities.
    #[error("force-construction error: {0}")]
    ForceConstruction(String),

    /// A characteristic turns before reaching the requested distance.
    #[error("turning-point error: path turns at eta+ = {eta_plus:.6e} before reaching {requested:.6e}; use eta_plus")]
    TurningPoint { eta_plus: f64, requested: f64 },

    /// A characteristic never turns (Case II rather than Case III).
    #[error("no-turn: {0}")]
    NoTurn(String),

    /// The fixed-point iteration did not converge.
    #[error("divergence: no convergence after {iterations} sweeps (last residuals {history:?})")]
    Divergence { iterations: usize, history: Vec<f64> },

    /// Fluid coefficients did not settle while the slab was lengthened.
    #[error("slab-length error: {0}")]
    SlabLength(String),

    /// The slab tail has not decayed enough to read off the fluid limit.
    #[error("extraction error: {0}")]
    Extraction(String),

    /// The endomorphism on the fluid modes is singular.
    #[error("correction-impossible error: {0}")]
    CorrectionImpossible(String),

    /// The auxiliary mass-flux response is numerically zero.
    #[error("degenerate-response error: {0}")]
    DegenerateResponse(String),

    /// A decay fit found no decay.
    #[error("no-decay error: {0}")]
    NoDecay(String),

    /// A probe ladder is finer than the discretization can resolve.
    #[error("resolution error: {0}")]
    Resolution(String),

    /// A comparison cannot be certified at the requested configuration.
    #[error("inconclusive configuration: {0}")]
    Inconclusive(String),

    /// Invalid configuration file or flag.
    #[error("config error: {0}")]
    Config(String),

    /// Filesystem or serialization failure.
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for MilneError {
    fn from(e: std::io::Error) -> Self {
        MilneError::Io(e.to_string())
    }
}

impl From<csv::Error> for MilneError {
    fn from(e: csv::Error) -> Self {
        MilneError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for MilneError {
    fn from(e: serde_json::Error) -> Self {
        MilneError::Io(e.to_string())
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, MilneError>;
