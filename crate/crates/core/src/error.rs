use thiserror::Error;

/// Errors raised by the bound, key-rate and simulation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("intensity must be positive and finite, got {0}")]
    InvalidIntensity(f64),

    #[error("photon-number cutoff must be at least 2, got {0}")]
    CutoffTooSmall(usize),

    #[error("invalid intensity window [{low}, {high}]")]
    InvalidWindow { low: f64, high: f64 },

    #[error("invalid coefficient at k={k}: {reason}")]
    InvalidCoefficient { k: usize, reason: String },

    #[error("{name} = {value} is outside [0, 1]")]
    OutOfUnitRange { name: &'static str, value: f64 },

    #[error("source probabilities sum to {0}, expected 1")]
    ProbabilitySum(f64),

    #[error("{0} source has zero selection probability")]
    MissingSource(&'static str),

    #[error("pulse count must be positive")]
    NoPulses,

    #[error("pulse index {index} out of range for {len} pulses")]
    PulseIndexOutOfRange { index: u64, len: u64 },

    #[error(
        "pattern intensity ({decoy}, {signal}) at pulse {index} lies outside the declared window"
    )]
    PatternOutsideWindow { index: u64, decoy: f64, signal: f64 },

    #[error("source ordering condition violated at k={k}")]
    ConditionViolated { k: usize },

    #[error("bound denominator {0:e} is not positive")]
    DegenerateDenominator(f64),

    #[error("vacuum source absent (p0 = 0); supply an external vacuum-rate interval")]
    NoVacuumSource,

    #[error("single-photon fraction must be positive")]
    ZeroSingleFraction,

    #[error("repetition rate must be positive, got {0}")]
    InvalidRepetitionRate(f64),

    #[error("invalid channel: {0}")]
    InvalidChannel(String),

    #[error("no source can emit {0} photons at this pulse")]
    ZeroLikelihood(u32),

    #[error("tally carries no per-pulse bookkeeping")]
    MissingBookkeeping,

    #[error("run mismatch: {0}")]
    RunMismatch(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_unit(name: &'static str, value: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(Error::OutOfUnitRange { name, value })
    }
}
