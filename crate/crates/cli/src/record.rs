use std::path::Path;

use decoy_core::{ObservedRates, SourceMix};
use serde::{Deserialize, Serialize};

/// Fraction sums within this distance of 1 are accepted and renormalized.
pub const FRACTION_SUM_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fractions {
    pub p_prime: f64,
    pub p: f64,
    pub p0: f64,
}

/// Observed rates of one experiment plus the sweep to run over them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentRecord {
    pub name: String,
    pub duration_s: f64,
    pub repetition_hz: f64,
    #[serde(rename = "S")]
    pub s: f64,
    #[serde(rename = "S_prime")]
    pub s_prime: f64,
    #[serde(rename = "S0")]
    pub s0: f64,
    pub qber_signal: f64,
    pub qber_decoy: f64,
    pub fractions: Fractions,
    pub mu: f64,
    pub mu_prime: f64,
    #[serde(default = "default_deltas")]
    pub delta_m: Vec<f64>,
    /// Treat the intensities as exactly nominal: a single zero-width row.
    #[serde(default)]
    pub error_free: bool,
}

fn default_deltas() -> Vec<f64> {
    vec![0.0]
}

#[derive(Debug)]
pub enum RecordError {
    Io(std::io::Error),
    Parse(serde_json::Error),
    Invalid(String),
}

impl std::fmt::Display for RecordError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Io(e) => write!(f, "cannot read record: {e}"),
            Self::Parse(e) => write!(f, "malformed record: {e}"),
            Self::Invalid(msg) => write!(f, "invalid record: {msg}"),
        }
    }
}

impl std::error::Error for RecordError {}

impl ExperimentRecord {
    pub fn load(path: &Path) -> Result<Self, RecordError> {
        let text = std::fs::read_to_string(path).map_err(RecordError::Io)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, RecordError> {
        let record: Self = serde_json::from_str(text).map_err(RecordError::Parse)?;
        record.validate()?;
        Ok(record)
    }

    fn validate(&self) -> Result<(), RecordError> {
        let bad = |msg: String| Err(RecordError::Invalid(msg));
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return bad(format!("duration_s = {} must be positive", self.duration_s));
        }
        if !(self.repetition_hz.is_finite() && self.repetition_hz > 0.0) {
            return bad(format!(
                "repetition_hz = {} must be positive",
                self.repetition_hz
            ));
        }
        if !(self.mu > 0.0 && self.mu < self.mu_prime && self.mu_prime.is_finite()) {
            return bad(format!(
                "need 0 < mu < mu_prime, got {} and {}",
                self.mu, self.mu_prime
            ));
        }
        let f = self.fractions;
        let sum = f.p_prime + f.p + f.p0;
        if (sum - 1.0).abs() > FRACTION_SUM_TOL {
            return bad(format!("fractions sum to {sum}, expected 1"));
        }
        if self.delta_m.is_empty() {
            return bad("delta_m list is empty".into());
        }
        if let Some(d) = self.delta_m.iter().find(|d| !(0.0..1.0).contains(*d)) {
            return bad(format!("delta_m entry {d} outside [0, 1)"));
        }
        Ok(())
    }

    /// Total pulses `M = repetition_hz * duration_s`.
    pub fn pulses(&self) -> f64 {
        (self.repetition_hz * self.duration_s).round()
    }

    pub fn mix(&self) -> decoy_core::Result<SourceMix> {
        let f = self.fractions;
        let sum = f.p_prime + f.p + f.p0;
        SourceMix::new(f.p0 / sum, f.p / sum, f.p_prime / sum)
    }

    pub fn rates(&self) -> decoy_core::Result<ObservedRates> {
        ObservedRates::new(self.s, self.s_prime, self.s0, self.mix()?, self.pulses())?
            .with_qber(self.qber_signal, self.qber_decoy)
    }

    /// The sweep list; a single zero entry for error-free records.
    pub fn deltas(&self) -> Vec<f64> {
        if self.error_free {
            vec![0.0]
        } else {
            self.delta_m.clone()
        }
    }
}
