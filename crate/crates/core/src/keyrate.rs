//! Final key rates from single-photon fractions and error rates, and sweeps
//! over the relative intensity error.

use std::fmt::Write as _;
use std::io;

use serde::{Deserialize, Serialize};

use crate::bounds::{delta1_bounds, ObservedRates, SingletBound};
use crate::error::{check_unit, Error, Result};
use crate::source::{coherent_bounds, default_cutoff, CoherentWindow};

/// Shannon binary entropy in bits, with `H(0) = H(1) = 0`.
pub fn binary_entropy(x: f64) -> Result<f64> {
    check_unit("entropy argument", x)?;
    let h = |p: f64| if p > 0.0 { -p * p.log2() } else { 0.0 };
    Ok(h(x) + h(1.0 - x))
}

/// Secure key rate in bits per signal count; negative means no key.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyRate {
    pub bits: f64,
}

impl KeyRate {
    pub fn is_secure(&self) -> bool {
        self.bits > 0.0
    }

    /// `max(bits, 0)`.
    pub fn secure_bits(&self) -> f64 {
        self.bits.max(0.0)
    }
}

/// `R_s = Delta'_1 [1 - H(t_1)] - H(t)`.
pub fn key_rate_per_count(delta1: f64, t1: f64, t: f64) -> Result<KeyRate> {
    key_rate_per_count_with_efficiency(delta1, t1, t, 1.0)
}

/// As [`key_rate_per_count`] with an error-correction inefficiency
/// `f >= 1` multiplying `H(t)`.
pub fn key_rate_per_count_with_efficiency(
    delta1: f64,
    t1: f64,
    t: f64,
    ec_efficiency: f64,
) -> Result<KeyRate> {
    check_unit("single-photon fraction", delta1)?;
    if !(ec_efficiency.is_finite() && ec_efficiency >= 1.0) {
        return Err(Error::OutOfUnitRange {
            name: "error-correction efficiency (must be >= 1)",
            value: ec_efficiency,
        });
    }
    let bits = delta1 * (1.0 - binary_entropy(t1)?) - ec_efficiency * binary_entropy(t)?;
    Ok(KeyRate { bits })
}

/// How the single-photon error rate `t_1` is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum T1Convention {
    /// `t_1 = t / Delta'_1`: every error charged to single-photon counts.
    CaptionRatio,
    /// `t_1 = (t S' - a'_0^L S0 / 2) / (Delta'_1 S')`: vacuum-pulse counts
    /// carry a 50% error rate and are removed first.
    #[default]
    DarkCountCorrected,
}

impl T1Convention {
    pub fn name(self) -> &'static str {
        match self {
            Self::CaptionRatio => "caption",
            Self::DarkCountCorrected => "darkcorrected",
        }
    }
}

/// Upper bound on the single-photon QBER, clamped to `[0, 0.5]`.
pub fn single_photon_qber(
    t: f64,
    delta1: f64,
    s_prime: f64,
    a0p_lower: f64,
    s0: f64,
    convention: T1Convention,
) -> Result<f64> {
    check_unit("qber", t)?;
    check_unit("single-photon fraction", delta1)?;
    if delta1 <= 0.0 {
        return Err(Error::ZeroSingleFraction);
    }
    let t1 = match convention {
        T1Convention::CaptionRatio => t / delta1,
        T1Convention::DarkCountCorrected => {
            if s_prime <= 0.0 {
                return Err(Error::ZeroSingleFraction);
            }
            (t * s_prime - 0.5 * a0p_lower * s0) / (delta1 * s_prime)
        }
    };
    Ok(t1.clamp(0.0, 0.5))
}

/// Key rate per second: `repetition_rate * p' * S' * R_s`.
pub fn key_rate_hz(per_count: KeyRate, rates: &ObservedRates, repetition_rate: f64) -> Result<f64> {
    if !(repetition_rate.is_finite() && repetition_rate > 0.0) {
        return Err(Error::InvalidRepetitionRate(repetition_rate));
    }
    Ok(repetition_rate * rates.p_prime * rates.s_prime * per_count.bits)
}

/// Inputs of the final key-rate formula for the signal source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyRateInput {
    pub delta1_signal: f64,
    pub qber_total: f64,
    pub qber_single: f64,
    pub repetition_rate: f64,
    pub p_prime: f64,
    pub s_prime: f64,
}

impl KeyRateInput {
    pub fn validate(&self) -> Result<()> {
        check_unit("delta1_signal", self.delta1_signal)?;
        check_unit("qber_total", self.qber_total)?;
        check_unit("qber_single", self.qber_single)?;
        check_unit("p_prime", self.p_prime)?;
        check_unit("s_prime", self.s_prime)?;
        if !(self.repetition_rate.is_finite() && self.repetition_rate > 0.0) {
            return Err(Error::InvalidRepetitionRate(self.repetition_rate));
        }
        Ok(())
    }

    pub fn per_count(&self) -> Result<KeyRate> {
        self.validate()?;
        key_rate_per_count(self.delta1_signal, self.qber_single, self.qber_total)
    }

    pub fn per_second(&self) -> Result<f64> {
        Ok(self.repetition_rate * self.p_prime * self.s_prime * self.per_count()?.bits)
    }
}

/// Settings shared by every row of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSettings {
    pub mu: f64,
    pub mu_prime: f64,
    pub repetition_rate: f64,
    pub convention: T1Convention,
    pub ec_efficiency: f64,
}

impl SweepSettings {
    pub fn new(mu: f64, mu_prime: f64, repetition_rate: f64, convention: T1Convention) -> Self {
        Self {
            mu,
            mu_prime,
            repetition_rate,
            convention,
            ec_efficiency: 1.0,
        }
    }
}

/// One row of a relative-intensity-error sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub delta_m: f64,
    pub delta1_signal: f64,
    pub delta1_decoy: f64,
    pub t1: f64,
    pub r_per_count: f64,
    pub r_hz: f64,
    /// The signal single-photon bound was vacuous.
    pub vacuous: bool,
}

impl SweepRow {
    pub fn is_secure(&self) -> bool {
        self.r_per_count > 0.0
    }
}

/// Key rate from a computed bound under the given convention.
pub fn evaluate_bound(
    bound: &SingletBound,
    rates: &ObservedRates,
    settings: &SweepSettings,
) -> Result<(f64, KeyRate)> {
    let delta1 = bound.delta1_signal.value;
    let t1 = if delta1 > 0.0 {
        single_photon_qber(
            rates.qber_signal,
            delta1,
            rates.s_prime,
            bound.coefficients.a0p_lower,
            rates.s0,
            settings.convention,
        )?
    } else {
        0.5
    };
    let rate =
        key_rate_per_count_with_efficiency(delta1, t1, rates.qber_signal, settings.ec_efficiency)?;
    Ok((t1, rate))
}

/// One sweep row at relative intensity error `delta`.
pub fn sweep_row(rates: &ObservedRates, delta: f64, settings: &SweepSettings) -> Result<SweepRow> {
    let decoy = CoherentWindow::relative(settings.mu, delta)?;
    let signal = CoherentWindow::relative(settings.mu_prime, delta)?;
    let (db, sb) = coherent_bounds(&decoy, &signal, default_cutoff(signal.mu_high))?;
    let bound = delta1_bounds(rates, &db, &sb)?;
    let (t1, rate) = evaluate_bound(&bound, rates, settings)?;
    Ok(SweepRow {
        delta_m: delta,
        delta1_signal: bound.delta1_signal.value,
        delta1_decoy: bound.delta1_decoy.value,
        t1,
        r_per_count: rate.bits,
        r_hz: key_rate_hz(rate, rates, settings.repetition_rate)?,
        vacuous: bound.delta1_signal.is_vacuous(),
    })
}

/// Evaluates every `delta` independently; rows keep the input order.
pub fn sweep_rows(
    rates: &ObservedRates,
    deltas: &[f64],
    settings: &SweepSettings,
) -> Vec<Result<SweepRow>> {
    deltas
        .iter()
        .map(|&d| sweep_row(rates, d, settings))
        .collect()
}

/// Like [`sweep_rows`] but stops at the first failing row.
pub fn sweep_delta_m(
    rates: &ObservedRates,
    deltas: &[f64],
    settings: &SweepSettings,
) -> Result<Vec<SweepRow>> {
    sweep_rows(rates, deltas, settings).into_iter().collect()
}

pub const CSV_HEADER: &str = "delta_m,delta1_signal,delta1_decoy,t1,R_per_count,R_hz";

/// Decimal rendering with 6 significant digits and no exponent.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x.is_finite() {
            "0".into()
        } else {
            x.to_string()
        };
    }
    let sci = format!("{:.5e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent format");
    let exp: i32 = exp.parse().expect("integer exponent");
    let (sign, mantissa) = match mantissa.strip_prefix('-') {
        Some(m) => ("-", m),
        None => ("", mantissa),
    };
    let digits: String = mantissa.chars().filter(|c| *c != '.').collect();
    let mut out = String::from(sign);
    if exp < 0 {
        out.push_str("0.");
        out.extend(std::iter::repeat_n('0', (-exp - 1) as usize));
        out.push_str(&digits);
    } else if (exp as usize) < digits.len() - 1 {
        let split = exp as usize + 1;
        out.push_str(&digits[..split]);
        out.push('.');
        out.push_str(&digits[split..]);
    } else {
        out.push_str(&digits);
        out.extend(std::iter::repeat_n('0', exp as usize + 1 - digits.len()));
    }
    out
}

pub fn write_csv<W: io::Write>(rows: &[SweepRow], mut out: W) -> io::Result<()> {
    out.write_all(CSV_HEADER.as_bytes())?;
    out.write_all(b"\n")?;
    for r in rows {
        let fields = [
            r.delta_m,
            r.delta1_signal,
            r.delta1_decoy,
            r.t1,
            r.r_per_count,
            r.r_hz,
        ];
        let line: Vec<String> = fields.iter().map(|&v| format_sig6(v)).collect();
        out.write_all(line.join(",").as_bytes())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn to_csv(rows: &[SweepRow]) -> String {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("csv is ASCII")
}

/// Aligned plain-text table. Negative rates print as 0 with an `insecure`
/// marker.
pub fn format_table(rows: &[SweepRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:>8} {:>10} {:>10} {:>9} {:>11} {:>10}",
        "delta_M", "Delta'_1", "Delta_1", "t1", "R/count", "R (Hz)"
    );
    for r in rows {
        let _ = write!(
            s,
            "{:>7.2}% {:>10.6} {:>10.6} {:>9.6} {:>11.6} {:>10.3}",
            100.0 * r.delta_m,
            r.delta1_signal,
            r.delta1_decoy,
            r.t1,
            r.r_per_count.max(0.0),
            r.r_hz.max(0.0)
        );
        if !r.is_secure() {
            s.push_str("  insecure");
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::source::SourceMix;

    #[test]
    fn entropy_values() {
        assert_eq!(binary_entropy(0.5).unwrap(), 1.0);
        assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(1.0).unwrap(), 0.0);
        assert!((binary_entropy(0.04247).unwrap() - 0.253_504_633_739_006_6).abs() < 1e-14);
        assert!(binary_entropy(-0.1).is_err());
        assert!(binary_entropy(1.1).is_err());
    }

    #[test]
    fn entropy_symmetry_grid() {
        for i in 0..=1000 {
            let x = i as f64 / 1000.0;
            let a = binary_entropy(x).unwrap();
            let b = binary_entropy(1.0 - x).unwrap();
            assert!((a - b).abs() < 1e-14, "x = {x}");
        }
    }

    #[test]
    fn rate_per_count_cases() {
        assert_eq!(key_rate_per_count(1.0, 0.0, 0.0).unwrap().bits, 1.0);
        let t = 0.04247;
        let r = key_rate_per_count(0.0, 0.3, t).unwrap();
        assert_eq!(r.bits, -binary_entropy(t).unwrap());
        assert!(!r.is_secure());
        assert_eq!(r.secure_bits(), 0.0);

        let caption = single_photon_qber(
            t,
            0.5733,
            3.817e-4,
            (-0.6f64).exp(),
            2.609e-5,
            T1Convention::CaptionRatio,
        )
        .unwrap();
        let dark = single_photon_qber(
            t,
            0.5733,
            3.817e-4,
            (-0.6f64).exp(),
            2.609e-5,
            T1Convention::DarkCountCorrected,
        )
        .unwrap();
        let rc = key_rate_per_count(0.5733, caption, t).unwrap().bits;
        let rd = key_rate_per_count(0.5733, dark, t).unwrap().bits;
        assert!((rc - 0.101_386_542_692_623_5).abs() < 1e-12);
        assert!((rd - 0.177_324_617_716_143_6).abs() < 1e-12);
    }

    #[test]
    fn efficiency_multiplier() {
        let base = key_rate_per_count(0.6, 0.05, 0.03).unwrap().bits;
        let ec = key_rate_per_count_with_efficiency(0.6, 0.05, 0.03, 1.2)
            .unwrap()
            .bits;
        assert!((base - ec - 0.2 * binary_entropy(0.03).unwrap()).abs() < 1e-15);
        assert!(key_rate_per_count_with_efficiency(0.6, 0.05, 0.03, 0.9).is_err());
    }

    #[test]
    fn qber_conventions() {
        let t = 0.04247;
        let a0p = (-0.6f64).exp();
        let c = single_photon_qber(
            t,
            0.5733,
            3.817e-4,
            a0p,
            2.609e-5,
            T1Convention::CaptionRatio,
        )
        .unwrap();
        assert!((c - 0.074_079_888_365_602_65).abs() < 1e-14);
        let d = single_photon_qber(
            t,
            0.5733,
            3.817e-4,
            a0p,
            2.609e-5,
            T1Convention::DarkCountCorrected,
        )
        .unwrap();
        assert!((d - 0.041_363_655_360_939_44).abs() < 1e-14);
        assert_eq!(
            single_photon_qber(0.0, 0.4, 1e-3, a0p, 1e-5, T1Convention::CaptionRatio).unwrap(),
            0.0
        );
        assert_eq!(
            single_photon_qber(t, 0.0, 1e-3, a0p, 1e-5, T1Convention::CaptionRatio),
            Err(Error::ZeroSingleFraction)
        );
        // Large t over a small fraction clamps at 1/2.
        assert_eq!(
            single_photon_qber(0.2, 0.1, 1e-3, a0p, 0.0, T1Convention::CaptionRatio).unwrap(),
            0.5
        );
    }

    #[test]
    fn hz_conversion() {
        let mix = SourceMix::new(0.09005, 0.40726, 0.50269).unwrap();
        let rates = ObservedRates::new(1.548e-4, 3.817e-4, 2.609e-5, mix, 1.0).unwrap();
        let hz = key_rate_hz(KeyRate { bits: 0.1013 }, &rates, 4e6).unwrap();
        assert!((hz - 77.748_468_419_6).abs() < 1e-8);
        assert_eq!(
            key_rate_hz(KeyRate { bits: 0.0 }, &rates, 4e6).unwrap(),
            0.0
        );
        assert!(key_rate_hz(KeyRate { bits: 0.1 }, &rates, 0.0).is_err());

        let input = KeyRateInput {
            delta1_signal: 0.5733,
            qber_total: 0.04247,
            qber_single: 0.074_079_888_365_602_65,
            repetition_rate: 4e6,
            p_prime: 0.50269,
            s_prime: 3.817e-4,
        };
        let expected = 4e6 * 0.50269 * 3.817e-4 * 0.101_386_542_692_623_5;
        assert!((input.per_second().unwrap() - expected).abs() < 1e-8);
    }

    #[test]
    fn keyrate_monotone_on_grid() {
        let grid: Vec<f64> = (0..=20).map(|i| i as f64 * 0.02).collect();
        let h = 1e-6;
        for &d in &[0.2, 0.5, 0.9] {
            for &t1 in &grid {
                for &t in &grid {
                    let r = key_rate_per_count(d, t1, t).unwrap().bits;
                    assert!(key_rate_per_count(d + h, t1, t).unwrap().bits > r);
                    assert!(key_rate_per_count(d, t1 + h, t).unwrap().bits < r);
                    assert!(key_rate_per_count(d, t1, t + h).unwrap().bits < r);
                }
            }
        }
    }

    #[test]
    fn sig6_formatting() {
        assert_eq!(format_sig6(136.083_460_111), "136.083");
        assert_eq!(format_sig6(0.05), "0.0500000");
        assert_eq!(format_sig6(0.0), "0");
        assert_eq!(format_sig6(-0.253_504_633), "-0.253505");
        assert_eq!(format_sig6(9.999_999), "10.0000");
        assert_eq!(format_sig6(1_234_567.0), "1234570");
        assert_eq!(format_sig6(123_456.0), "123456");
        assert_eq!(format_sig6(1.0), "1.00000");
        assert_eq!(format_sig6(4.1e-7), "0.000000410000");
    }

    #[test]
    fn csv_layout() {
        let row = SweepRow {
            delta_m: 0.01,
            delta1_signal: 0.556_147_778,
            delta1_decoy: 0.679_204_837,
            t1: 0.042_841_1,
            r_per_count: 0.160_730_788,
            r_hz: 123.362_019_7,
            vacuous: false,
        };
        assert_eq!(
            to_csv(&[row]),
            "delta_m,delta1_signal,delta1_decoy,t1,R_per_count,R_hz\n\
             0.0100000,0.556148,0.679205,0.0428411,0.160731,123.362\n"
        );
        let table = format_table(&[
            row,
            SweepRow {
                r_per_count: -0.1,
                r_hz: -5.0,
                ..row
            },
        ]);
        assert_eq!(table.lines().count(), 3);
        assert!(table.lines().nth(2).unwrap().ends_with("insecure"));
        assert!(!table.lines().nth(1).unwrap().contains("insecure"));
    }
}
