//! Photon-number sources: exact diagonal distributions, interval-bounded
//! distributions, coherent-state intensity windows and per-pulse error
//! patterns.
//!
//! Source pairs are always ordered `(decoy, signal)`. Ratio conditions use the
//! signal's lower coefficient over the decoy's upper coefficient,
//! `a'_k^L / a_k^U`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_unit, Error, Result};

/// Tolerance on `sum(a_k) + tail` for a normalized distribution.
pub const TAIL_TOL: f64 = 1e-12;

/// Relative slack used when comparing ratios and window membership.
const REL_EPS: f64 = 1e-12;

/// `e^{-mu} mu^k / k!`.
pub fn poisson_term(mu: f64, k: usize) -> f64 {
    let mut term = (-mu).exp();
    for j in 1..=k {
        term *= mu / j as f64;
    }
    term
}

/// Cutoff used for Poisson truncations: `max(25, ceil(10 * mu_max))`.
pub fn default_cutoff(mu_max: f64) -> usize {
    25usize.max((10.0 * mu_max).ceil() as usize)
}

/// Diagonal photon-number distribution `a_0..=a_J`, plus the probability mass
/// dropped beyond the cutoff `J`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhotonDistribution {
    coeffs: Vec<f64>,
    #[serde(default)]
    tail: f64,
}

impl PhotonDistribution {
    pub fn new(coeffs: Vec<f64>, tail: f64) -> Result<Self> {
        if coeffs.len() < 3 {
            return Err(Error::CutoffTooSmall(coeffs.len().saturating_sub(1)));
        }
        for (k, &a) in coeffs.iter().enumerate() {
            if !(a.is_finite() && a >= 0.0) {
                return Err(Error::InvalidCoefficient {
                    k,
                    reason: format!("a_k = {a} must be finite and nonnegative"),
                });
            }
        }
        if !(tail.is_finite() && tail >= 0.0) {
            return Err(Error::InvalidCoefficient {
                k: coeffs.len(),
                reason: format!("tail mass {tail} must be finite and nonnegative"),
            });
        }
        let total: f64 = coeffs.iter().sum::<f64>() + tail;
        if !(1.0 - TAIL_TOL..=1.0 + TAIL_TOL).contains(&total) {
            return Err(Error::InvalidCoefficient {
                k: 0,
                reason: format!("coefficients plus tail sum to {total}, expected 1"),
            });
        }
        Ok(Self { coeffs, tail })
    }

    /// Poisson (coherent-state) distribution of mean `mu`, truncated at `cutoff`.
    pub fn poisson(mu: f64, cutoff: usize) -> Result<Self> {
        if !(mu.is_finite() && mu > 0.0) {
            return Err(Error::InvalidIntensity(mu));
        }
        if cutoff < 2 {
            return Err(Error::CutoffTooSmall(cutoff));
        }
        let mut coeffs = Vec::with_capacity(cutoff + 1);
        let mut term = (-mu).exp();
        coeffs.push(term);
        for k in 1..=cutoff {
            term *= mu / k as f64;
            coeffs.push(term);
        }
        let mut tail = 0.0;
        let mut k = cutoff;
        loop {
            k += 1;
            term *= mu / k as f64;
            tail += term;
            if term <= tail * f64::EPSILON || term < f64::MIN_POSITIVE {
                break;
            }
        }
        Ok(Self { coeffs, tail })
    }

    pub fn cutoff(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// `a_k`, zero beyond the cutoff.
    pub fn coeff(&self, k: usize) -> f64 {
        self.coeffs.get(k).copied().unwrap_or(0.0)
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn tail_mass(&self) -> f64 {
        self.tail
    }
}

/// Per-photon-number coefficient intervals `[a_k^L, a_k^U]`: the minimum and
/// maximum of `a_{ki}` over every pulse `i` a source emits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundedDistribution {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoundedDistribution {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::InvalidCoefficient {
                k: lower.len().min(upper.len()),
                reason: "lower and upper sequences differ in length".into(),
            });
        }
        if lower.len() < 3 {
            return Err(Error::CutoffTooSmall(lower.len().saturating_sub(1)));
        }
        for (k, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                return Err(Error::InvalidCoefficient {
                    k,
                    reason: format!("need 0 <= {lo} <= {hi} <= 1"),
                });
            }
        }
        Ok(Self { lower, upper })
    }

    /// Zero-width intervals around an exactly known distribution.
    pub fn exact(dist: &PhotonDistribution) -> Self {
        Self {
            lower: dist.coeffs.clone(),
            upper: dist.coeffs.clone(),
        }
    }

    pub fn cutoff(&self) -> usize {
        self.lower.len() - 1
    }

    pub fn lower(&self, k: usize) -> f64 {
        self.lower.get(k).copied().unwrap_or(0.0)
    }

    pub fn upper(&self, k: usize) -> f64 {
        self.upper.get(k).copied().unwrap_or(0.0)
    }

    pub fn lowers(&self) -> &[f64] {
        &self.lower
    }

    pub fn uppers(&self) -> &[f64] {
        &self.upper
    }

    /// True when every `a` lies inside the corresponding interval.
    pub fn contains(&self, dist: &[f64]) -> bool {
        dist.iter().enumerate().all(|(k, &a)| {
            let slack = REL_EPS * self.upper(k).max(f64::MIN_POSITIVE);
            a >= self.lower(k) - slack && a <= self.upper(k) + slack
        })
    }
}

/// Intensity interval `[mu_low, mu_high]` of a coherent-state source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoherentWindow {
    pub mu_low: f64,
    pub mu_high: f64,
}

impl CoherentWindow {
    pub fn new(mu_low: f64, mu_high: f64) -> Result<Self> {
        let window = Self { mu_low, mu_high };
        window.validate()?;
        Ok(window)
    }

    /// `[mu (1 - delta), mu (1 + delta)]`.
    pub fn relative(mu: f64, delta: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&delta) {
            return Err(Error::OutOfUnitRange {
                name: "relative intensity error",
                value: delta,
            });
        }
        Self::new(mu * (1.0 - delta), mu * (1.0 + delta))
    }

    pub fn exact(mu: f64) -> Result<Self> {
        Self::new(mu, mu)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.mu_low.is_finite()
            && self.mu_high.is_finite()
            && self.mu_low > 0.0
            && self.mu_low <= self.mu_high;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidWindow {
                low: self.mu_low,
                high: self.mu_high,
            })
        }
    }

    pub fn contains(&self, mu: f64) -> bool {
        let slack = REL_EPS * self.mu_high;
        mu >= self.mu_low - slack && mu <= self.mu_high + slack
    }

    /// Minimum and maximum of `x^k e^{-x} / k!` for `x` in the window.
    ///
    /// The function rises on `[0, k]` and falls after, so the maximum sits at
    /// `k` clamped into the window and the minimum at one of the endpoints.
    pub fn coefficient_range(&self, k: usize) -> (f64, f64) {
        let at_low = poisson_term(self.mu_low, k);
        let at_high = poisson_term(self.mu_high, k);
        let peak = (k as f64).clamp(self.mu_low, self.mu_high);
        let max = poisson_term(peak, k).max(at_low).max(at_high);
        (at_low.min(at_high), max)
    }

    pub fn bounded(&self, cutoff: usize) -> Result<BoundedDistribution> {
        self.validate()?;
        if cutoff < 2 {
            return Err(Error::CutoffTooSmall(cutoff));
        }
        let (lower, upper) = (0..=cutoff).map(|k| self.coefficient_range(k)).unzip();
        BoundedDistribution::new(lower, upper)
    }
}

/// Bounded distributions for a decoy and a signal coherent source.
///
/// For `k = 0` this gives `a_0^L = e^{-mu^U}`, `a_0^U = e^{-mu^L}`; for
/// `k = 1, 2` with windows below 1 it reduces to plugging the window ends into
/// `x^k e^{-x} / k!`. Windows crossing `x = k` use the interior maximum.
pub fn coherent_bounds(
    decoy: &CoherentWindow,
    signal: &CoherentWindow,
    cutoff: usize,
) -> Result<(BoundedDistribution, BoundedDistribution)> {
    Ok((decoy.bounded(cutoff)?, signal.bounded(cutoff)?))
}

/// Outcome of a ratio-ordering check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub holds: bool,
    /// Smallest `k` at which the ordering fails.
    pub first_violation: Option<usize>,
}

impl ConditionReport {
    fn from_violation(first_violation: Option<usize>) -> Self {
        Self {
            holds: first_violation.is_none(),
            first_violation,
        }
    }

    pub fn into_result(self) -> Result<()> {
        match self.first_violation {
            None => Ok(()),
            Some(k) => Err(Error::ConditionViolated { k }),
        }
    }
}

/// `num / den` with the zero conventions: `x/0 = +inf` for `x > 0`, `0/0`
/// vacuous (`None`).
fn ratio(num: f64, den: f64) -> Option<f64> {
    if den > 0.0 {
        Some(num / den)
    } else if num > 0.0 {
        Some(f64::INFINITY)
    } else {
        None
    }
}

fn at_least(lhs: f64, rhs: f64) -> bool {
    lhs >= rhs || (rhs.is_finite() && lhs >= rhs - REL_EPS * rhs.abs())
}

/// Checks `num_k/den_k >= num_2/den_2 >= num_1/den_1` for `2 <= k <= k_max`.
fn ratio_ordering(num: &[f64], den: &[f64], k_max: usize) -> ConditionReport {
    let k_max = k_max.min(num.len() - 1).min(den.len() - 1);
    let r1 = ratio(num[1], den[1]);
    let r2 = ratio(num[2], den[2]);
    if let (Some(r1), Some(r2)) = (r1, r2) {
        if !at_least(r2, r1) {
            return ConditionReport::from_violation(Some(2));
        }
    }
    if let Some(r2) = r2 {
        for k in 3..=k_max {
            if let Some(rk) = ratio(num[k], den[k]) {
                if !at_least(rk, r2) {
                    return ConditionReport::from_violation(Some(k));
                }
            }
        }
    }
    ConditionReport::from_violation(None)
}

/// Ordering condition on bounded sources:
/// `a'_k^L / a_k^U >= a'_2^L / a_2^U >= a'_1^L / a_1^U` for all `2 <= k <= k_max`.
pub fn check_bounded_ordering(
    decoy: &BoundedDistribution,
    signal: &BoundedDistribution,
    k_max: usize,
) -> ConditionReport {
    ratio_ordering(&signal.lower, &decoy.upper, k_max)
}

/// Ordering condition on exact sources: `a'_k / a_k >= a'_2 / a_2 >= a'_1 / a_1`.
pub fn check_exact_ordering(
    decoy: &PhotonDistribution,
    signal: &PhotonDistribution,
    k_max: usize,
) -> ConditionReport {
    ratio_ordering(&signal.coeffs, &decoy.coeffs, k_max)
}

/// Selection probabilities of the vacuum, decoy and signal sources.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceMix {
    pub p0: f64,
    pub p: f64,
    pub p_prime: f64,
}

impl SourceMix {
    pub const SUM_TOL: f64 = 1e-9;

    pub fn new(p0: f64, p: f64, p_prime: f64) -> Result<Self> {
        let mix = Self { p0, p, p_prime };
        mix.validate()?;
        Ok(mix)
    }

    pub fn validate(&self) -> Result<()> {
        check_unit("p0", self.p0)?;
        check_unit("p", self.p)?;
        check_unit("p_prime", self.p_prime)?;
        let sum = self.p0 + self.p + self.p_prime;
        if (sum - 1.0).abs() > Self::SUM_TOL {
            return Err(Error::ProbabilitySum(sum));
        }
        Ok(())
    }
}

/// Per-pulse intensity generator: pulse index to `(decoy, signal)` intensity.
pub type IntensityFn = Arc<dyn Fn(u64) -> (f64, f64) + Send + Sync>;

#[derive(Clone)]
pub enum PatternKind {
    /// Every pulse at the nominal intensities.
    Exact {
        decoy: f64,
        signal: f64,
    },
    /// Alternating blocks of `block_len` pulses: even blocks at
    /// `(1 + strength)` times nominal, odd blocks at `(1 - strength)`.
    TwoBlock {
        decoy: f64,
        signal: f64,
        strength: f64,
        block_len: u64,
    },
    PerPulseList(Arc<Vec<(f64, f64)>>),
    Custom(IntensityFn),
}

impl fmt::Debug for PatternKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Exact { decoy, signal } => f
                .debug_struct("Exact")
                .field("decoy", decoy)
                .field("signal", signal)
                .finish(),
            Self::TwoBlock {
                decoy,
                signal,
                strength,
                block_len,
            } => f
                .debug_struct("TwoBlock")
                .field("decoy", decoy)
                .field("signal", signal)
                .field("strength", strength)
                .field("block_len", block_len)
                .finish(),
            Self::PerPulseList(list) => write!(f, "PerPulseList({} pulses)", list.len()),
            Self::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// True per-pulse intensities of the decoy and signal emissions over a run of
/// `pulses` slots. Known to the adversary.
#[derive(Debug, Clone)]
pub struct ErrorPattern {
    pulses: u64,
    kind: PatternKind,
}

impl ErrorPattern {
    pub fn exact(decoy: f64, signal: f64, pulses: u64) -> Result<Self> {
        check_intensity(decoy)?;
        check_intensity(signal)?;
        Self::with_kind(pulses, PatternKind::Exact { decoy, signal })
    }

    pub fn two_block(
        decoy: f64,
        signal: f64,
        strength: f64,
        block_len: u64,
        pulses: u64,
    ) -> Result<Self> {
        check_intensity(decoy)?;
        check_intensity(signal)?;
        if !(strength > 0.0 && strength < 1.0) {
            return Err(Error::OutOfUnitRange {
                name: "block strength fraction",
                value: strength,
            });
        }
        if block_len == 0 {
            return Err(Error::NoPulses);
        }
        Self::with_kind(
            pulses,
            PatternKind::TwoBlock {
                decoy,
                signal,
                strength,
                block_len,
            },
        )
    }

    pub fn per_pulse(list: Vec<(f64, f64)>) -> Result<Self> {
        for &(d, s) in &list {
            check_intensity(d)?;
            check_intensity(s)?;
        }
        Self::with_kind(list.len() as u64, PatternKind::PerPulseList(Arc::new(list)))
    }

    /// Intensities from a callback. Values are checked when the pattern is
    /// validated or simulated.
    pub fn custom(pulses: u64, f: IntensityFn) -> Result<Self> {
        Self::with_kind(pulses, PatternKind::Custom(f))
    }

    fn with_kind(pulses: u64, kind: PatternKind) -> Result<Self> {
        if pulses == 0 {
            return Err(Error::NoPulses);
        }
        Ok(Self { pulses, kind })
    }

    pub fn pulses(&self) -> u64 {
        self.pulses
    }

    pub fn kind(&self) -> &PatternKind {
        &self.kind
    }

    /// `(decoy, signal)` intensity at slot `index`.
    pub fn intensity(&self, index: u64) -> Result<(f64, f64)> {
        if index >= self.pulses {
            return Err(Error::PulseIndexOutOfRange {
                index,
                len: self.pulses,
            });
        }
        Ok(self.intensity_unchecked(index))
    }

    #[inline]
    pub(crate) fn intensity_unchecked(&self, index: u64) -> (f64, f64) {
        match &self.kind {
            PatternKind::Exact { decoy, signal } => (*decoy, *signal),
            PatternKind::TwoBlock {
                decoy,
                signal,
                strength,
                block_len,
            } => {
                let scale = if (index / block_len).is_multiple_of(2) {
                    1.0 + strength
                } else {
                    1.0 - strength
                };
                (decoy * scale, signal * scale)
            }
            PatternKind::PerPulseList(list) => list[index as usize],
            PatternKind::Custom(f) => f(index),
        }
    }

    /// Errors unless every per-pulse intensity lies in its source's window.
    pub fn check_within(&self, decoy: &CoherentWindow, signal: &CoherentWindow) -> Result<()> {
        let check = |index: u64, (d, s): (f64, f64)| {
            if decoy.contains(d) && signal.contains(s) {
                Ok(())
            } else {
                Err(Error::PatternOutsideWindow {
                    index,
                    decoy: d,
                    signal: s,
                })
            }
        };
        match &self.kind {
            PatternKind::Exact { .. } => check(0, self.intensity_unchecked(0)),
            PatternKind::TwoBlock { block_len, .. } => {
                check(0, self.intensity_unchecked(0))?;
                if self.pulses > *block_len {
                    check(*block_len, self.intensity_unchecked(*block_len))?;
                }
                Ok(())
            }
            _ => (0..self.pulses).try_for_each(|i| check(i, self.intensity_unchecked(i))),
        }
    }
}

fn check_intensity(mu: f64) -> Result<()> {
    if mu.is_finite() && mu > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidIntensity(mu))
    }
}

/// Explicit coefficient intervals for one source, as read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// JSON description of a decoy/signal source pair: either intensity windows
/// of coherent sources or explicit coefficient bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SourceSpec {
    Coherent {
        decoy: CoherentWindow,
        signal: CoherentWindow,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cutoff: Option<usize>,
    },
    Explicit {
        decoy: CoefficientBounds,
        signal: CoefficientBounds,
    },
}

impl SourceSpec {
    pub fn bounds(&self) -> Result<(BoundedDistribution, BoundedDistribution)> {
        match self {
            Self::Coherent {
                decoy,
                signal,
                cutoff,
            } => {
                let cutoff = cutoff.unwrap_or_else(|| default_cutoff(signal.mu_high));
                coherent_bounds(decoy, signal, cutoff)
            }
            Self::Explicit { decoy, signal } => Ok((
                BoundedDistribution::new(decoy.lower.clone(), decoy.upper.clone())?,
                BoundedDistribution::new(signal.lower.clone(), signal.upper.clone())?,
            )),
        }
    }
}
