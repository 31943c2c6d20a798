use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not Hermitian (max |A - A^dagger| = {0:e})")]
    NotHermitian(f64),

    #[error("non-finite value encountered during integration at t = {0} us")]
    NotFinite(f64),

    #[error("unknown basis label `{0}`")]
    UnknownLabel(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("intermediate-state detuning must be nonzero")]
    ZeroDetuning,

    #[error("T2 exceeds lifetime limit (1/T2 must exceed excited_fraction/T1)")]
    LifetimeLimit,

    #[error("trap-off time {0} us is outside the f_g table range")]
    TrapOffOutOfRange(f64),

    #[error("unknown pulse element kind `{0}`")]
    UnknownElement(String),

    #[error("unknown preset `{name}`{}", suggestion.as_ref().map(|s| format!(" (did you mean `{s}`?)")).unwrap_or_default())]
    UnknownPreset { name: String, suggestion: Option<String> },

    #[error("fit did not converge after {0} iterations")]
    NoConvergence(usize),

    #[error("rank-deficient fit: {0}")]
    RankDeficient(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("malformed distribution: {0}")]
    MalformedDistribution(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code: 1 for validation/configuration problems, 2 for
    /// numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NotFinite(_)
            | Error::NoConvergence(_)
            | Error::RankDeficient(_)
            | Error::NotHermitian(_) => 2,
            _ => 1,
        }
    }
}
