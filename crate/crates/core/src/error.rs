use thiserror::Error;

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter violates its documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An input left the mathematical domain of an operation (e.g. a
    /// nonpositive wealth fed to a CRRA utility).
    #[error("domain error: {0}")]
    Domain(String),

    /// A query time fell outside the solved or simulated range.
    #[error("out of range: {0}")]
    Range(String),

    /// The two-state chain has no jumps at all, so no unique stationary
    /// distribution exists.
    #[error("lambda1 = lambda2 = 0: stationary distribution is not unique")]
    NoStationaryDistribution,

    /// The conditioning event has probability zero from the given start.
    #[error("terminal regime {regime} is unreachable from the start configuration")]
    UnreachableRegime { regime: u8 },

    /// The integrator produced a nonpositive growth factor. The true solution
    /// is strictly positive, so this signals a numerical failure.
    #[error("growth factor became nonpositive at t = {t}; step control failed")]
    PositivityLoss { t: f64 },

    /// Adaptive step control drove the step size below representable
    /// resolution.
    #[error("step size underflow at t = {t}")]
    StepSizeUnderflow { t: f64 },

    /// The solved trajectory escaped its certified ratio bounds.
    #[error("ratio-bound certificate violated at t = {t}: {detail}")]
    CertificateViolation { t: f64, detail: String },

    /// A simulated wealth path produced a non-finite value.
    #[error("simulation produced a non-finite value at step {step}")]
    Simulation { step: usize },

    /// Too few paths hit the conditioning event to form an estimate.
    #[error("no paths reached terminal regime {regime}; cannot form a conditional estimate")]
    NoEffectiveSamples { regime: u8 },

    /// CSV serialization failure.
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    /// Underlying I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed solution file.
    #[error("could not parse solution file: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
