//! Ground truth from simulated runs, and checks that the analytic lower
//! bounds never exceed it.
//!
//! The bounds are asymptotic statements about posterior-weighted counts; a
//! finite run adds label noise. Each check therefore allows
//! `sigma_allowance` standard deviations, where the deviation of an observed
//! count `X` out of `|C|` detections is budgeted as `sqrt(X (1 - X/|C|)) + 1`
//! and combined linearly (never in quadrature) across the counts a bound
//! depends on.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{delta1_bounds, SingletBound};
use crate::error::{Error, Result};
use crate::sim::{
    simulate, source_posterior, ChannelModel, SimConfig, SimTally, Source, TruthSums,
};
use crate::source::{
    check_bounded_ordering, coherent_bounds, default_cutoff, BoundedDistribution, CoherentWindow,
    ErrorPattern, PhotonDistribution, SourceMix,
};

/// A count known both from the realized source labels and as the
/// posterior-weighted expectation given the detected photon numbers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub realized: u64,
    pub posterior: f64,
    /// Sum of `P (1 - P)` over the contributing detections.
    pub variance: f64,
}

impl Attribution {
    fn from_sums(tally: &SimTally, truth: &TruthSums, s: Source, k: usize) -> Self {
        Self {
            realized: tally.count(s, k),
            posterior: truth.posterior(s, k),
            variance: truth.variance(s, k),
        }
    }

    /// `(realized - posterior) / sqrt(variance)`; zero when both agree exactly.
    pub fn z_score(&self) -> f64 {
        let diff = self.realized as f64 - self.posterior;
        if self.variance > 0.0 {
            diff / self.variance.sqrt()
        } else if diff.abs() < 1e-9 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// True single-photon quantities of one simulated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub pulses: u64,
    pub seed: u64,
    pub mix: SourceMix,
    /// `sum_{i in c_1} d_{1i}`.
    pub true_d1: f64,
    /// `sum_{i in c_0} d_{0i}`.
    pub vacuum_weight: f64,
    pub detections: u64,
    pub n_vacuum: u64,
    pub n_decoy: u64,
    pub n_signal: u64,
    /// Single-photon counts of the signal source.
    pub n1s: Attribution,
    /// Single-photon counts of the decoy source.
    pub n1d: Attribution,
    /// Vacuum-pulse counts of the decoy source.
    pub n0d: Attribution,
    /// Vacuum-pulse counts of the signal source.
    pub n0s: Attribution,
    /// Counts of the vacuum source.
    pub n0_vacuum: Attribution,
    pub true_delta1_signal: f64,
    pub true_delta1_decoy: f64,
}

fn sums_from_events(
    tally: &SimTally,
    pattern: &ErrorPattern,
    mix: &SourceMix,
) -> Result<TruthSums> {
    let mut sums = TruthSums::default();
    let bump = |v: &mut Vec<f64>, k: usize, x: f64| {
        if v.len() <= k {
            v.resize(k + 1, 0.0);
        }
        v[k] += x;
    };
    for e in tally.events.as_deref().unwrap_or_default() {
        let post = source_posterior(e.photons, pattern.intensity(e.index)?, mix)?;
        let k = e.photons as usize;
        bump(&mut sums.weight, k, post.weight);
        for (s, pr) in [
            (Source::Vacuum, post.vacuum),
            (Source::Decoy, post.decoy),
            (Source::Signal, post.signal),
        ] {
            bump(sums.posterior.get_mut(s), k, pr);
            bump(sums.variance.get_mut(s), k, pr * (1.0 - pr));
        }
    }
    Ok(sums)
}

/// Extracts ground truth from a tally. When the tally recorded individual
/// detections the posterior sums are recomputed from them and the pattern;
/// otherwise the sums accumulated during the run are used.
pub fn extract_ground_truth(
    tally: &SimTally,
    pattern: &ErrorPattern,
    mix: &SourceMix,
) -> Result<GroundTruth> {
    if tally.mix != *mix {
        return Err(Error::RunMismatch(format!(
            "tally mix {:?} differs from {:?}",
            tally.mix, mix
        )));
    }
    if pattern.pulses() < tally.pulses {
        return Err(Error::RunMismatch(format!(
            "pattern covers {} pulses, tally has {}",
            pattern.pulses(),
            tally.pulses
        )));
    }
    let truth = match (&tally.events, &tally.truth) {
        (Some(_), _) => sums_from_events(tally, pattern, mix)?,
        (None, Some(t)) => t.clone(),
        (None, None) => return Err(Error::MissingBookkeeping),
    };
    let n_decoy = tally.source_counts(Source::Decoy);
    let n_signal = tally.source_counts(Source::Signal);
    let n1s = Attribution::from_sums(tally, &truth, Source::Signal, 1);
    let n1d = Attribution::from_sums(tally, &truth, Source::Decoy, 1);
    let frac = |n: u64, total: u64| {
        if total > 0 {
            n as f64 / total as f64
        } else {
            0.0
        }
    };
    Ok(GroundTruth {
        pulses: tally.pulses,
        seed: tally.seed,
        mix: *mix,
        true_d1: truth.weight(1),
        vacuum_weight: truth.weight(0),
        detections: tally.detections(),
        n_vacuum: tally.source_counts(Source::Vacuum),
        n_decoy,
        n_signal,
        n1s,
        n1d,
        n0d: Attribution::from_sums(tally, &truth, Source::Decoy, 0),
        n0s: Attribution::from_sums(tally, &truth, Source::Signal, 0),
        n0_vacuum: Attribution::from_sums(tally, &truth, Source::Vacuum, 0),
        true_delta1_signal: frac(n1s.realized, n_signal),
        true_delta1_decoy: frac(n1d.realized, n_decoy),
    })
}

/// One bound-versus-truth comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyCheck {
    pub name: String,
    pub bound: f64,
    pub truth: f64,
    pub sigma: f64,
    /// `truth + allowance * sigma - bound`; negative means failure.
    pub slack: f64,
    /// `(truth - bound) / sigma`.
    pub slack_sigma: f64,
    pub pass: bool,
}

impl SafetyCheck {
    fn lower_bound(name: &str, bound: f64, truth: f64, sigma: f64, allowance: f64) -> Self {
        let slack = truth + allowance * sigma - bound;
        Self {
            name: name.to_string(),
            bound,
            truth,
            sigma,
            slack,
            slack_sigma: (truth - bound) / sigma,
            pass: slack >= 0.0,
        }
    }

    fn interval(
        name: &str,
        lower: f64,
        upper: f64,
        truth: f64,
        sigma: f64,
        allowance: f64,
    ) -> Self {
        let below = truth - lower + allowance * sigma;
        let above = upper + allowance * sigma - truth;
        let slack = below.min(above);
        Self {
            name: name.to_string(),
            bound: if below < above { lower } else { upper },
            truth,
            sigma,
            slack,
            slack_sigma: slack / sigma - allowance,
            pass: slack >= 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyReport {
    pub sigma_allowance: f64,
    /// Lower-bound checks on `D_1`, `n'_1s`, `n_1d`, `Delta'_1`, `Delta_1`.
    pub checks: Vec<SafetyCheck>,
    /// Containment of the realized vacuum counts in their intervals.
    pub vacuum: Vec<SafetyCheck>,
    pub pass: bool,
}

impl SafetyReport {
    /// Smallest `slack_sigma` among the lower-bound checks.
    pub fn worst_slack(&self) -> f64 {
        self.checks
            .iter()
            .map(|c| c.slack_sigma)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn vacuum_pass(&self) -> bool {
        self.vacuum.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&SafetyCheck> {
        self.checks
            .iter()
            .chain(&self.vacuum)
            .find(|c| c.name == name)
    }
}

/// Standard deviation budget of an observed count.
fn count_sigma(x: f64, detections: f64) -> f64 {
    let spread = if detections > 0.0 {
        (x * (1.0 - x / detections)).max(0.0).sqrt()
    } else {
        0.0
    };
    spread + 1.0
}

/// Compares a bound set with the ground truth of the run it was computed
/// from.
pub fn check_safety(
    bounds: &SingletBound,
    truth: &GroundTruth,
    sigma_allowance: f64,
) -> Result<SafetyReport> {
    let same = |a: f64, b: u64| (a - b as f64).abs() <= 0.5 + 1e-9 * a.abs();
    if !(same(bounds.n_decoy, truth.n_decoy)
        && same(bounds.n_signal, truth.n_signal)
        && same(bounds.n_vacuum, truth.n_vacuum))
    {
        return Err(Error::RunMismatch(format!(
            "bound counts ({}, {}, {}) do not match run counts ({}, {}, {})",
            bounds.n_vacuum,
            bounds.n_decoy,
            bounds.n_signal,
            truth.n_vacuum,
            truth.n_decoy,
            truth.n_signal
        )));
    }
    let mix = truth.mix;
    let c = &bounds.coefficients;
    let detections = truth.detections as f64;
    let (w_d, w_s, w_0) = c.count_weights(&mix);
    let sd = count_sigma(truth.n_decoy as f64, detections);
    let ss = count_sigma(truth.n_signal as f64, detections);
    let s0 = count_sigma(truth.n_vacuum as f64, detections);
    let sigma_d1 = w_d.abs() * sd + w_s.abs() * ss + w_0.abs() * s0;
    let label = |n: u64| (n as f64).sqrt() + 1.0;
    let sigma_n1s = mix.p_prime * c.a1p_lower * sigma_d1 + label(truth.n1s.realized);
    let sigma_n1d = mix.p * c.a1_lower * sigma_d1 + label(truth.n1d.realized);
    let per = |sigma: f64, n: u64| if n > 0 { sigma / n as f64 } else { 1.0 };

    let a = sigma_allowance;
    let checks = vec![
        SafetyCheck::lower_bound("d1", bounds.d1_lower.value, truth.true_d1, sigma_d1, a),
        SafetyCheck::lower_bound(
            "n1s",
            bounds.n1s_lower,
            truth.n1s.realized as f64,
            sigma_n1s,
            a,
        ),
        SafetyCheck::lower_bound(
            "n1d",
            bounds.n1d_lower,
            truth.n1d.realized as f64,
            sigma_n1d,
            a,
        ),
        SafetyCheck::lower_bound(
            "delta1_signal",
            bounds.delta1_signal.value,
            truth.true_delta1_signal,
            per(sigma_n1s, truth.n_signal),
            a,
        ),
        SafetyCheck::lower_bound(
            "delta1_decoy",
            bounds.delta1_decoy.value,
            truth.true_delta1_decoy,
            per(sigma_n1d, truth.n_decoy),
            a,
        ),
    ];
    let vac_scale = |q: f64, a0: f64| if mix.p0 > 0.0 { q * a0 / mix.p0 } else { 0.0 };
    let vacuum = vec![
        SafetyCheck::interval(
            "n0d_interval",
            bounds.n0d_interval.lower,
            bounds.n0d_interval.upper,
            truth.n0d.realized as f64,
            vac_scale(mix.p, c.a0_upper) * s0 + label(truth.n0d.realized),
            a,
        ),
        SafetyCheck::interval(
            "n0s_interval",
            bounds.n0s_interval.lower,
            bounds.n0s_interval.upper,
            truth.n0s.realized as f64,
            vac_scale(mix.p_prime, 1.0) * s0 + label(truth.n0s.realized),
            a,
        ),
    ];
    let pass = checks.iter().all(|c| c.pass);
    Ok(SafetyReport {
        sigma_allowance,
        checks,
        vacuum,
        pass,
    })
}

/// How true intensities vary across blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PatternFamily {
    Exact,
    /// Alternating blocks at `1 +- strength` times nominal.
    TwoBlock {
        strength: f64,
    },
    /// Independent uniform scale per block and source within the window.
    RandomBlocks,
}

/// How the adversary's transmittance varies across blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelFamily {
    Linear {
        eta: f64,
    },
    /// `2 eta_e` on even blocks, blocked on odd blocks.
    BlockAttack {
        eta_e: f64,
    },
    /// Uniform random transmittance in `[0, eta_max]` per block.
    RandomBlocks {
        eta_max: f64,
    },
    /// Transmittance grows with the block's signal intensity scale.
    PatternAware {
        eta_max: f64,
    },
}

/// A fully specified verification run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: u64,
    pub seed: u64,
    pub pulses: u64,
    pub mu: f64,
    pub mu_prime: f64,
    /// Relative half-width of the declared intensity windows.
    pub width: f64,
    pub p0: f64,
    pub p: f64,
    pub p_prime: f64,
    pub block_len: u64,
    pub dark_count: f64,
    pub pattern: PatternFamily,
    pub channel: ChannelFamily,
}

/// Declared windows, realized pattern and channel of a scenario.
pub struct Materialized {
    pub decoy_window: CoherentWindow,
    pub signal_window: CoherentWindow,
    pub decoy: BoundedDistribution,
    pub signal: BoundedDistribution,
    pub pattern: ErrorPattern,
    pub channel: ChannelModel,
    pub mix: SourceMix,
}

const SCENARIO_STREAM: u64 = 0x5ce0_a210;

impl Scenario {
    pub fn mix(&self) -> Result<SourceMix> {
        SourceMix::new(self.p0, self.p, self.p_prime)
    }

    pub fn windows(&self) -> Result<(CoherentWindow, CoherentWindow)> {
        Ok((
            CoherentWindow::relative(self.mu, self.width)?,
            CoherentWindow::relative(self.mu_prime, self.width)?,
        ))
    }

    pub fn bounds(&self) -> Result<(BoundedDistribution, BoundedDistribution)> {
        let (d, s) = self.windows()?;
        coherent_bounds(&d, &s, default_cutoff(s.mu_high))
    }

    pub fn materialize(&self) -> Result<Materialized> {
        let (decoy_window, signal_window) = self.windows()?;
        let (decoy, signal) = self.bounds()?;
        let blocks = self.pulses.div_ceil(self.block_len.max(1)) as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(SCENARIO_STREAM);
        let w = self.width;
        let scales: Vec<(f64, f64)> = (0..blocks)
            .map(|_| {
                let a: f64 = rng.random();
                let b: f64 = rng.random();
                (1.0 + w * (2.0 * a - 1.0), 1.0 + w * (2.0 * b - 1.0))
            })
            .collect();
        let (mu, mu_p, len) = (self.mu, self.mu_prime, self.block_len);
        let pattern = match &self.pattern {
            PatternFamily::Exact => ErrorPattern::exact(mu, mu_p, self.pulses)?,
            PatternFamily::TwoBlock { strength } => {
                ErrorPattern::two_block(mu, mu_p, *strength, len, self.pulses)?
            }
            PatternFamily::RandomBlocks => {
                let scales = Arc::new(scales.clone());
                ErrorPattern::custom(
                    self.pulses,
                    Arc::new(move |i| {
                        let (a, b) = scales[(i / len) as usize];
                        (mu * a, mu_p * b)
                    }),
                )?
            }
        };
        let dark = self.dark_count;
        let channel = match &self.channel {
            ChannelFamily::Linear { eta } => ChannelModel::linear(*eta, dark)?,
            ChannelFamily::BlockAttack { eta_e } => ChannelModel::block_attack(*eta_e, len, dark)?,
            ChannelFamily::RandomBlocks { eta_max } => {
                let etas = (0..blocks).map(|_| eta_max * rng.random::<f64>()).collect();
                ChannelModel::block_transmittance(len, etas, dark)?
            }
            ChannelFamily::PatternAware { eta_max } => {
                let etas = (0..blocks)
                    .map(|b| {
                        let signal_scale = match &self.pattern {
                            PatternFamily::Exact => 1.0,
                            PatternFamily::TwoBlock { strength } => {
                                if b % 2 == 0 {
                                    1.0 + strength
                                } else {
                                    1.0 - strength
                                }
                            }
                            PatternFamily::RandomBlocks => scales[b].1,
                        };
                        let t = if w > 0.0 {
                            (signal_scale - (1.0 - w)) / (2.0 * w)
                        } else {
                            0.5
                        };
                        eta_max * t.clamp(0.0, 1.0)
                    })
                    .collect();
                ChannelModel::block_transmittance(len, etas, dark)?
            }
        };
        Ok(Materialized {
            decoy_window,
            signal_window,
            decoy,
            signal,
            pattern,
            channel,
            mix: self.mix()?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum VerdictStatus {
    Pass,
    Fail,
    /// The declared windows violate the source ordering condition at `k`;
    /// the bounds do not apply.
    PreconditionRejected {
        k: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioVerdict {
    pub scenario_id: u64,
    pub status: VerdictStatus,
    /// Worst lower-bound slack in standard deviations.
    pub slack: f64,
    pub vacuum_pass: bool,
    pub report: Option<SafetyReport>,
}

impl ScenarioVerdict {
    pub fn pass(&self) -> bool {
        self.status == VerdictStatus::Pass
    }

    /// `{"scenario_id":…,"pass":…,"slack":…}`.
    pub fn json_line(&self) -> String {
        serde_json::json!({
            "scenario_id": self.scenario_id,
            "pass": self.pass(),
            "slack": if self.slack.is_finite() { serde_json::json!(self.slack) } else { serde_json::Value::Null },
        })
        .to_string()
    }
}

/// Simulates a scenario and checks the error-tolerant bounds against its
/// ground truth.
pub fn evaluate_scenario(scenario: &Scenario, sigma_allowance: f64) -> Result<ScenarioVerdict> {
    let (decoy, signal) = scenario.bounds()?;
    let k_max = decoy.cutoff().min(signal.cutoff());
    if let Some(k) = check_bounded_ordering(&decoy, &signal, k_max).first_violation {
        return Ok(ScenarioVerdict {
            scenario_id: scenario.id,
            status: VerdictStatus::PreconditionRejected { k },
            slack: f64::NAN,
            vacuum_pass: true,
            report: None,
        });
    }
    let m = scenario.materialize()?;
    m.pattern.check_within(&m.decoy_window, &m.signal_window)?;
    let config = SimConfig {
        pulses: scenario.pulses,
        mix: m.mix,
        seed: scenario.seed,
        record_events: false,
    };
    let tally = simulate(&config, &m.pattern, &m.channel)?;
    let truth = extract_ground_truth(&tally, &m.pattern, &m.mix)?;
    let bounds = delta1_bounds(&tally.observed_rates()?, &m.decoy, &m.signal)?;
    let report = check_safety(&bounds, &truth, sigma_allowance)?;
    Ok(ScenarioVerdict {
        scenario_id: scenario.id,
        status: if report.pass {
            VerdictStatus::Pass
        } else {
            VerdictStatus::Fail
        },
        slack: report.worst_slack(),
        vacuum_pass: report.vacuum_pass(),
        report: Some(report),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub scenarios: usize,
    pub seed: u64,
    pub pulses: u64,
    pub sigma_allowance: f64,
}

/// Draws scenarios from the randomized family: `mu` in `[0.1, 0.4]`, `mu'` in
/// `[0.4, 0.9]` with `mu < mu'`, window half-width up to 10%, and patterns
/// and channels from every family. Draws whose windows violate the source
/// ordering condition are rejected and counted.
pub struct ScenarioGenerator {
    rng: ChaCha8Rng,
    pulses: u64,
    next_id: u64,
    pub draws: usize,
    pub rejected: usize,
}

impl ScenarioGenerator {
    pub fn new(seed: u64, pulses: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            pulses,
            next_id: 0,
            draws: 0,
            rejected: 0,
        }
    }

    fn draw(&mut self) -> Scenario {
        let r = &mut self.rng;
        let mu = r.random_range(0.1..=0.4);
        let mu_prime = loop {
            let x = r.random_range(0.4..=0.9);
            if x > mu {
                break x;
            }
        };
        let width: f64 = r.random_range(0.0..=0.10);
        let p0 = r.random_range(0.05..=0.2);
        let split = r.random_range(0.3..=0.7);
        let p = (1.0 - p0) * split;
        let p_prime = 1.0 - p0 - p;
        let block_len = [100u64, 1000, 10_000][r.random_range(0..3)];
        let dark_count = r.random_range(0.0..=1e-4);
        let pattern = match r.random_range(0..3) {
            0 => PatternFamily::Exact,
            1 if width > 0.0 => PatternFamily::TwoBlock {
                strength: width * r.random_range(0.2..=1.0),
            },
            _ => PatternFamily::RandomBlocks,
        };
        let channel = match r.random_range(0..4) {
            0 => ChannelFamily::Linear {
                eta: r.random_range(0.01..=0.5),
            },
            1 => ChannelFamily::BlockAttack {
                eta_e: r.random_range(0.01..=0.5),
            },
            2 => ChannelFamily::RandomBlocks {
                eta_max: r.random_range(0.02..=1.0),
            },
            _ => ChannelFamily::PatternAware {
                eta_max: r.random_range(0.02..=1.0),
            },
        };
        let seed = r.random();
        self.draws += 1;
        Scenario {
            id: self.next_id,
            seed,
            pulses: self.pulses,
            mu,
            mu_prime,
            width,
            p0,
            p,
            p_prime,
            block_len,
            dark_count,
            pattern,
            channel,
        }
    }

    /// Next scenario satisfying the ordering condition.
    pub fn next_valid(&mut self) -> Result<Scenario> {
        loop {
            let s = self.draw();
            let (d, sig) = s.bounds()?;
            let k_max = d.cutoff().min(sig.cutoff());
            if check_bounded_ordering(&d, &sig, k_max).holds {
                self.next_id += 1;
                return Ok(s);
            }
            self.rejected += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub verdicts: Vec<ScenarioVerdict>,
    pub draws: usize,
    pub rejected_draws: usize,
}

impl SuiteReport {
    pub fn failures(&self) -> usize {
        self.verdicts
            .iter()
            .filter(|v| v.status == VerdictStatus::Fail)
            .count()
    }

    pub fn evaluated(&self) -> usize {
        self.verdicts
            .iter()
            .filter(|v| !matches!(v.status, VerdictStatus::PreconditionRejected { .. }))
            .count()
    }

    pub fn pass_rate(&self) -> f64 {
        let n = self.evaluated();
        if n == 0 {
            return 1.0;
        }
        (n - self.failures()) as f64 / n as f64
    }

    pub fn worst_slack(&self) -> f64 {
        self.verdicts
            .iter()
            .map(|v| v.slack)
            .filter(|s| !s.is_nan())
            .fold(f64::INFINITY, f64::min)
    }

    /// Fraction of evaluated scenarios whose vacuum intervals contained the
    /// realized vacuum counts.
    pub fn vacuum_coverage(&self) -> f64 {
        let evaluated: Vec<_> = self
            .verdicts
            .iter()
            .filter(|v| v.report.is_some())
            .collect();
        if evaluated.is_empty() {
            return 1.0;
        }
        evaluated.iter().filter(|v| v.vacuum_pass).count() as f64 / evaluated.len() as f64
    }

    pub fn rejection_rate(&self) -> f64 {
        if self.draws == 0 {
            0.0
        } else {
            self.rejected_draws as f64 / self.draws as f64
        }
    }

    pub fn json_lines(&self) -> String {
        self.verdicts.iter().map(|v| v.json_line() + "\n").collect()
    }
}

/// Runs `config.scenarios` randomized scenarios.
pub fn run_suite(config: &SuiteConfig) -> Result<SuiteReport> {
    let mut generator = ScenarioGenerator::new(config.seed, config.pulses);
    let scenarios = (0..config.scenarios)
        .map(|_| generator.next_valid())
        .collect::<Result<Vec<_>>>()?;
    let verdicts = scenarios
        .par_iter()
        .map(|s| evaluate_scenario(s, config.sigma_allowance))
        .collect::<Result<Vec<_>>>()?;
    Ok(SuiteReport {
        verdicts,
        draws: generator.draws,
        rejected_draws: generator.rejected,
    })
}

/// Error-free versus error-tolerant bounds on one two-block attack run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineProbe {
    pub eta_e: f64,
    pub strength: f64,
    pub true_delta1_signal: f64,
    /// Bound computed as if the intensities were exactly nominal.
    pub errorfree_bound: f64,
    pub errorfree_sigma: f64,
    /// Bound with windows `[mu (1 - f), mu (1 + f)]`.
    pub tolerant_bound: f64,
    pub tolerant_sigma: f64,
    pub sigma_allowance: f64,
}

impl BaselineProbe {
    /// `(errorfree_bound - truth) / sigma`.
    pub fn errorfree_excess(&self) -> f64 {
        (self.errorfree_bound - self.true_delta1_signal) / self.errorfree_sigma
    }

    pub fn tolerant_safe(&self) -> bool {
        self.tolerant_bound <= self.true_delta1_signal + self.sigma_allowance * self.tolerant_sigma
    }

    /// The error-free bound overshoots the truth by more than the allowance
    /// while the error-tolerant bound holds.
    pub fn demonstrates_unsafe_baseline(&self) -> bool {
        self.errorfree_excess() > self.sigma_allowance && self.tolerant_safe()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineSearch {
    pub mu: f64,
    pub mu_prime: f64,
    pub mix: SourceMix,
    pub pulses: u64,
    pub block_len: u64,
    pub dark_count: f64,
    pub seed: u64,
    pub sigma_allowance: f64,
}

/// Simulates the two-block attack at `(eta_e, strength)` and compares both
/// bounds with the true signal single-photon fraction.
pub fn probe_baseline(search: &BaselineSearch, eta_e: f64, strength: f64) -> Result<BaselineProbe> {
    let pattern = ErrorPattern::two_block(
        search.mu,
        search.mu_prime,
        strength,
        search.block_len,
        search.pulses,
    )?;
    let channel = ChannelModel::block_attack(eta_e, search.block_len, search.dark_count)?;
    let config = SimConfig {
        pulses: search.pulses,
        mix: search.mix,
        seed: search.seed,
        record_events: false,
    };
    let tally = simulate(&config, &pattern, &channel)?;
    let truth = extract_ground_truth(&tally, &pattern, &search.mix)?;
    let rates = tally.observed_rates()?;

    let decoy_window = CoherentWindow::relative(search.mu, strength)?;
    let signal_window = CoherentWindow::relative(search.mu_prime, strength)?;
    let cutoff = default_cutoff(signal_window.mu_high);
    let (db, sb) = coherent_bounds(&decoy_window, &signal_window, cutoff)?;
    let tolerant = delta1_bounds(&rates, &db, &sb)?;
    let nominal =
        |mu| PhotonDistribution::poisson(mu, cutoff).map(|d| BoundedDistribution::exact(&d));
    let errorfree = delta1_bounds(&rates, &nominal(search.mu)?, &nominal(search.mu_prime)?)?;

    let a = search.sigma_allowance;
    let sigma_of = |b: &SingletBound| -> Result<f64> {
        let report = check_safety(b, &truth, a)?;
        Ok(report
            .check("delta1_signal")
            .map(|c| c.sigma)
            .unwrap_or(f64::NAN))
    };
    Ok(BaselineProbe {
        eta_e,
        strength,
        true_delta1_signal: truth.true_delta1_signal,
        errorfree_bound: errorfree.delta1_signal.value,
        errorfree_sigma: sigma_of(&errorfree)?,
        tolerant_bound: tolerant.delta1_signal.value,
        tolerant_sigma: sigma_of(&tolerant)?,
        sigma_allowance: a,
    })
}

/// Scans `(eta_e, strength)` pairs in order and returns every probe up to
/// and including the first one that demonstrates the unsafe baseline.
pub fn search_unsafe_baseline(
    search: &BaselineSearch,
    eta_grid: &[f64],
    strength_grid: &[f64],
) -> Result<(Vec<BaselineProbe>, Option<BaselineProbe>)> {
    let mut probes = Vec::new();
    for &eta_e in eta_grid {
        for &f in strength_grid {
            let probe = probe_baseline(search, eta_e, f)?;
            probes.push(probe);
            if probe.demonstrates_unsafe_baseline() {
                return Ok((probes, Some(probe)));
            }
        }
    }
    Ok((probes, None))
}
