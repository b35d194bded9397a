//! Lower bounds on single-photon counts and fractions.
//!
//! Two routes are provided. The error-free route assumes the decoy and signal
//! states are known exactly, so `k`-photon pulses of both sources share one
//! counting rate. The error-tolerant route only assumes interval bounds on
//! each coefficient and never equates counting rates across sources; it
//! bounds `D_1 = sum_{i in c_1} 1 / (p a_{1i} + p' a'_{1i})` instead.
//!
//! All arithmetic is plain `f64`. Inputs are O(1) coefficients and O(1e-4)
//! rates, and denominators are rejected when smaller than `1e-12` of their
//! own scale, so rounding error stays many orders below the bound slack.
//! Bounds are clamped into their valid range and flagged when clamping
//! happened; a vacuous bound means "no secure key", not an error.

use serde::{Deserialize, Serialize};

use crate::error::{check_unit, Error, Result};
use crate::source::{
    check_bounded_ordering, check_exact_ordering, BoundedDistribution, PhotonDistribution,
    SourceMix,
};

/// Denominators below this fraction of their scale are treated as zero.
const DENOM_REL_TOL: f64 = 1e-12;

/// Directly measured experiment quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservedRates {
    /// Counting rate of the decoy source.
    pub s: f64,
    /// Counting rate of the signal source.
    pub s_prime: f64,
    /// Counting rate of the vacuum source.
    pub s0: f64,
    pub p0: f64,
    pub p: f64,
    pub p_prime: f64,
    /// Total pulse count `M`.
    pub m: f64,
    #[serde(default)]
    pub qber_signal: f64,
    #[serde(default)]
    pub qber_decoy: f64,
}

impl ObservedRates {
    pub fn new(s: f64, s_prime: f64, s0: f64, mix: SourceMix, m: f64) -> Result<Self> {
        let rates = Self {
            s,
            s_prime,
            s0,
            p0: mix.p0,
            p: mix.p,
            p_prime: mix.p_prime,
            m,
            qber_signal: 0.0,
            qber_decoy: 0.0,
        };
        rates.validate()?;
        Ok(rates)
    }

    /// Rates from raw counts: `S = N_d / (p M)` and so on.
    pub fn from_counts(n0: f64, nd: f64, ns: f64, mix: SourceMix, m: f64) -> Result<Self> {
        let rate = |n: f64, q: f64| if q > 0.0 { n / (q * m) } else { 0.0 };
        Self::new(
            rate(nd, mix.p),
            rate(ns, mix.p_prime),
            rate(n0, mix.p0),
            mix,
            m,
        )
    }

    pub fn with_qber(mut self, signal: f64, decoy: f64) -> Result<Self> {
        self.qber_signal = check_unit("qber_signal", signal)?;
        self.qber_decoy = check_unit("qber_decoy", decoy)?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        check_unit("S", self.s)?;
        check_unit("S_prime", self.s_prime)?;
        check_unit("S0", self.s0)?;
        check_unit("qber_signal", self.qber_signal)?;
        check_unit("qber_decoy", self.qber_decoy)?;
        self.mix().validate()?;
        if !(self.m.is_finite() && self.m > 0.0) {
            return Err(Error::NoPulses);
        }
        Ok(())
    }

    pub fn mix(&self) -> SourceMix {
        SourceMix {
            p0: self.p0,
            p: self.p,
            p_prime: self.p_prime,
        }
    }

    /// `N_0 = S0 p0 M`.
    pub fn n_vacuum(&self) -> f64 {
        self.s0 * self.p0 * self.m
    }

    /// `N_d = S p M`.
    pub fn n_decoy(&self) -> f64 {
        self.s * self.p * self.m
    }

    /// `N_s = S' p' M`.
    pub fn n_signal(&self) -> f64 {
        self.s_prime * self.p_prime * self.m
    }
}

/// Closed interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }

    pub fn point(x: f64) -> Self {
        Self::new(x, x)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

/// A lower bound clamped into its valid range, keeping the unclamped value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClampedBound {
    pub raw: f64,
    pub value: f64,
}

impl ClampedBound {
    fn clamp(raw: f64, max: f64) -> Self {
        Self {
            raw,
            value: raw.clamp(0.0, max),
        }
    }

    fn nonnegative(raw: f64) -> Self {
        Self::clamp(raw, f64::INFINITY)
    }

    /// The bound carries no information (raw value at or below zero).
    pub fn is_vacuous(&self) -> bool {
        self.raw <= 0.0
    }

    pub fn was_clamped(&self) -> bool {
        self.raw != self.value
    }
}

fn checked_denominator(den: f64, scale: f64) -> Result<f64> {
    if den.is_finite() && den > DENOM_REL_TOL * scale.abs() && den > 0.0 {
        Ok(den)
    } else {
        Err(Error::DegenerateDenominator(den))
    }
}

/// Lower bound on the single-photon counting rate `s_1 = s'_1` for exactly
/// known sources, taking `s_0 = S_0`.
pub fn errorfree_s1_lower(
    rates: &ObservedRates,
    decoy: &PhotonDistribution,
    signal: &PhotonDistribution,
) -> Result<ClampedBound> {
    let k_max = decoy.cutoff().min(signal.cutoff());
    check_exact_ordering(decoy, signal, k_max).into_result()?;
    let (a0, a1, a2) = (decoy.coeff(0), decoy.coeff(1), decoy.coeff(2));
    let (b0, b1, b2) = (signal.coeff(0), signal.coeff(1), signal.coeff(2));
    let den = checked_denominator(b2 * a1 - b1 * a2, b2 * a1 + b1 * a2)?;
    let num = b2 * (rates.s - a0 * rates.s0) - a2 * (rates.s_prime - b0 * rates.s0);
    Ok(ClampedBound::nonnegative(num / den))
}

/// Error-free single-photon fractions `(signal, decoy)`:
/// `a'_1 s_1 / S'` and `a_1 s_1 / S`.
pub fn errorfree_fractions(
    rates: &ObservedRates,
    decoy: &PhotonDistribution,
    signal: &PhotonDistribution,
) -> Result<(ClampedBound, ClampedBound)> {
    let s1 = errorfree_s1_lower(rates, decoy, signal)?;
    let frac = |a1: f64, total: f64| {
        if total > 0.0 {
            ClampedBound::clamp(a1 * s1.raw / total, 1.0)
        } else {
            ClampedBound::clamp(0.0, 1.0)
        }
    };
    Ok((
        frac(signal.coeff(1), rates.s_prime),
        frac(decoy.coeff(1), rates.s),
    ))
}

/// Intervals on `n_0d` and `n'_0s`, the counts caused by vacuum pulses of the
/// decoy and signal sources, from the vacuum source's counting rate.
pub fn vacuum_count_bounds(
    rates: &ObservedRates,
    a0: Interval,
    a0_prime: Interval,
) -> Result<(Interval, Interval)> {
    if rates.p0 <= 0.0 {
        return Err(Error::NoVacuumSource);
    }
    Ok(vacuum_counts_from_rate(
        rates,
        a0,
        a0_prime,
        Interval::point(rates.s0),
    ))
}

fn vacuum_counts_from_rate(
    rates: &ObservedRates,
    a0: Interval,
    a0_prime: Interval,
    s0: Interval,
) -> (Interval, Interval) {
    let decoy = rates.p * rates.m;
    let signal = rates.p_prime * rates.m;
    (
        Interval::new(a0.lower * decoy * s0.lower, a0.upper * decoy * s0.upper),
        Interval::new(
            a0_prime.lower * signal * s0.lower,
            a0_prime.upper * signal * s0.upper,
        ),
    )
}

/// Coefficients entering the error-tolerant bound, kept for error budgeting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCoefficients {
    pub a0_upper: f64,
    pub a1_lower: f64,
    pub a1_upper: f64,
    pub a2_upper: f64,
    pub a0p_lower: f64,
    pub a1p_lower: f64,
    pub a2p_lower: f64,
    /// `a_1^U a'_2^L - a'_1^L a_2^U`.
    pub denominator: f64,
}

impl BoundCoefficients {
    fn new(decoy: &BoundedDistribution, signal: &BoundedDistribution) -> Result<Self> {
        let k_max = decoy.cutoff().min(signal.cutoff());
        check_bounded_ordering(decoy, signal, k_max).into_result()?;
        let a1_upper = decoy.upper(1);
        let a2_upper = decoy.upper(2);
        let a1p_lower = signal.lower(1);
        let a2p_lower = signal.lower(2);
        let denominator = checked_denominator(
            a1_upper * a2p_lower - a1p_lower * a2_upper,
            a1_upper * a2p_lower + a1p_lower * a2_upper,
        )?;
        Ok(Self {
            a0_upper: decoy.upper(0),
            a1_lower: decoy.lower(1),
            a1_upper,
            a2_upper,
            a0p_lower: signal.lower(0),
            a1p_lower,
            a2p_lower,
            denominator,
        })
    }

    /// Weights `(w_d, w_s, w_0)` with `D_1^L = w_d N_d + w_s N_s + w_0 N_0`
    /// when the vacuum source is present.
    pub fn count_weights(&self, mix: &SourceMix) -> (f64, f64, f64) {
        let den = self.denominator;
        let w_d = self.a2p_lower / (mix.p * den);
        let w_s = -self.a2_upper / (mix.p_prime * den);
        let w_0 =
            (self.a2_upper * self.a0p_lower - self.a2p_lower * self.a0_upper) / (mix.p0 * den);
        (w_d, w_s, w_0)
    }
}

/// Verified single-photon lower bounds for one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingletBound {
    /// Lower bound on `D_1`.
    pub d1_lower: ClampedBound,
    /// Lower bound on single-photon counts of the signal source, `p' a'_1^L D_1^L`.
    pub n1s_lower: f64,
    /// Lower bound on single-photon counts of the decoy source, `p a_1^L D_1^L`.
    pub n1d_lower: f64,
    pub delta1_signal: ClampedBound,
    pub delta1_decoy: ClampedBound,
    pub n0d_interval: Interval,
    pub n0s_interval: Interval,
    /// Observed counts the bound was computed from.
    pub n_decoy: f64,
    pub n_signal: f64,
    pub n_vacuum: f64,
    pub coefficients: BoundCoefficients,
}

fn require_sources(rates: &ObservedRates) -> Result<()> {
    if rates.p <= 0.0 {
        return Err(Error::MissingSource("decoy"));
    }
    if rates.p_prime <= 0.0 {
        return Err(Error::MissingSource("signal"));
    }
    Ok(())
}

fn d1_from_vacuum(
    rates: &ObservedRates,
    c: &BoundCoefficients,
    n0d: Interval,
    n0s: Interval,
) -> ClampedBound {
    // Worst case: decoy vacuum counts at their upper bound, signal vacuum
    // counts at their lower bound.
    let num = c.a2p_lower * rates.n_decoy() / rates.p
        - c.a2_upper * rates.n_signal() / rates.p_prime
        - c.a2p_lower * n0d.upper / rates.p
        + c.a2_upper * n0s.lower / rates.p_prime;
    ClampedBound::nonnegative(num / c.denominator)
}

/// Lower bound on `D_1` from interval-bounded sources.
pub fn d1_lower(
    rates: &ObservedRates,
    decoy: &BoundedDistribution,
    signal: &BoundedDistribution,
) -> Result<ClampedBound> {
    Ok(delta1_bounds(rates, decoy, signal)?.d1_lower)
}

/// Full error-tolerant bound set: `D_1`, single-photon counts and fractions
/// for both sources, and the vacuum-count intervals. One `D_1` feeds both
/// projections.
pub fn delta1_bounds(
    rates: &ObservedRates,
    decoy: &BoundedDistribution,
    signal: &BoundedDistribution,
) -> Result<SingletBound> {
    if rates.p0 <= 0.0 {
        return Err(Error::NoVacuumSource);
    }
    delta1_bounds_with_vacuum_rate(rates, decoy, signal, Interval::point(rates.s0))
}

/// As [`delta1_bounds`], but with the vacuum counting rate taken from an
/// externally supplied interval instead of a vacuum source. Usable with
/// `p0 = 0`.
pub fn delta1_bounds_with_vacuum_rate(
    rates: &ObservedRates,
    decoy: &BoundedDistribution,
    signal: &BoundedDistribution,
    s0: Interval,
) -> Result<SingletBound> {
    require_sources(rates)?;
    if !(0.0 <= s0.lower && s0.lower <= s0.upper && s0.upper <= 1.0) {
        return Err(Error::OutOfUnitRange {
            name: "vacuum rate interval",
            value: if s0.lower < 0.0 { s0.lower } else { s0.upper },
        });
    }
    let c = BoundCoefficients::new(decoy, signal)?;
    let (n0d, n0s) = vacuum_counts_from_rate(
        rates,
        Interval::new(decoy.lower(0), decoy.upper(0)),
        Interval::new(signal.lower(0), signal.upper(0)),
        s0,
    );
    let d1 = d1_from_vacuum(rates, &c, n0d, n0s);
    let n1s = rates.p_prime * c.a1p_lower * d1.value;
    let n1d = rates.p * c.a1_lower * d1.value;
    let fraction = |bound_raw: f64, total: f64| {
        if total > 0.0 {
            ClampedBound::clamp(bound_raw / total, 1.0)
        } else {
            ClampedBound::clamp(0.0, 1.0)
        }
    };
    Ok(SingletBound {
        d1_lower: d1,
        n1s_lower: n1s,
        n1d_lower: n1d,
        delta1_signal: fraction(rates.p_prime * c.a1p_lower * d1.raw, rates.n_signal()),
        delta1_decoy: fraction(rates.p * c.a1_lower * d1.raw, rates.n_decoy()),
        n0d_interval: n0d,
        n0s_interval: n0s,
        n_decoy: rates.n_decoy(),
        n_signal: rates.n_signal(),
        n_vacuum: rates.n_vacuum(),
        coefficients: c,
    })
}
