//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A weight family was constructed with parameters outside its admissible
    /// range (for example `|beta| >= n` for the power weight).
    #[error("invalid weight: {0}")]
    InvalidWeight(String),

    /// Point evaluation was requested exactly on the singular set of the
    /// weight. Callers must fall back to cell/face averages there.
    #[error("weight is singular at ({0:?}); use cell-averaged access")]
    SingularPoint([f64; 3]),

    /// A cell/face/ball average came out nonpositive or non-finite, which
    /// signals a weight that is not locally integrable at the sampled scale.
    #[error("weight average is not positive and finite ({what}: {value})")]
    DegenerateAverage { what: &'static str, value: f64 },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid boundary data: {0}")]
    InvalidBoundary(String),

    /// Configuration/parameter validation; `key` names the offending entry.
    #[error("invalid parameter `{key}`: {reason}")]
    InvalidParam { key: String, reason: String },

    #[error("linear solve did not converge: residual {residual:.3e} after {iterations} iterations")]
    SolveDiverged { residual: f64, iterations: usize },

    #[error("eigenvalue iteration did not converge after {0} iterations")]
    EigenDiverged(usize),

    #[error("harmonic replacement ball too small: radius {radius:.3e} < 4h = {min:.3e}")]
    BallTooSmall { radius: f64, min: f64 },

    #[error("replacement ball is not contained in the unit ball")]
    BallOutsideDomain,

    #[error("positivity precondition violated: infimum {0:.3e} is not positive")]
    NotPositive(f64),

    #[error("field is not discretely harmonic enough for this check (relative residual {0:.3e})")]
    NotHarmonic(f64),

    /// Every sampled level of the isoperimetric check had an empty level set.
    #[error("all sampled levels were empty; no isoperimetric ratio available")]
    AllLevelsEmpty,

    #[error("bisection for the initial radius failed: {0}")]
    BisectionFailed(String),

    /// Dyadic scan for the decay radius found no admissible value.
    #[error("no dyadic radius in (0, 1/4) satisfies the decay inequality (need lambda^alpha <= {bound:.3e})")]
    NoDecayRadius { bound: f64 },

    #[error("campanato trace needs at least two usable levels (got {0})")]
    TooFewLevels(usize),

    #[error("field dump does not match the configured grid: {0}")]
    FieldMismatch(String),

    #[error("malformed field dump: {0}")]
    MalformedDump(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
