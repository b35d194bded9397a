//! Pulse-level Monte Carlo of the three-source protocol under channels that
//! may depend on the per-pulse error pattern.
//!
//! Each pulse slot selects a source with probabilities `(p0, p, p')`, draws a
//! photon number from that source's distribution at the slot's true
//! intensity, and clicks with the channel's probability for `(slot, k)`.
//! Selecting the source first and emitting once is equivalent to the virtual
//! protocol in which all three sources emit and one pulse is kept.
//!
//! Runs are split into fixed chunks of [`CHUNK_PULSES`] slots. Chunk `c` draws
//! from ChaCha8 stream `c` of the run seed, and partial tallies are merged in
//! chunk order, so a run is bit-for-bit reproducible from `(seed, params)`
//! whatever the thread count.

mod channel;
mod tally;

pub use channel::{
    two_block_attack_channel, two_block_ratio, two_block_single_photon_rates, ChannelKind,
    ChannelModel, ChannelSpec, DetectionFn,
};
pub use tally::{
    empirical_subclass_rates, CountSets, Detection, PerSource, RateEstimate, SimTally, Source,
    SubclassRates, TruthSums,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::source::{poisson_term, ErrorPattern, SourceMix};
use tally::bump;

/// Pulses per RNG stream.
pub const CHUNK_PULSES: u64 = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub pulses: u64,
    pub mix: SourceMix,
    pub seed: u64,
    /// Keep every detection (index, source, photon number). Memory grows
    /// with the number of counts; meant for small runs.
    #[serde(default)]
    pub record_events: bool,
}

/// Posterior probabilities that a `k`-photon pulse came from each source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    pub vacuum: f64,
    pub decoy: f64,
    pub signal: f64,
    /// Normalizer: `d_{0i} = 1/(p0 + p a_0 + p' a'_0)` for `k = 0`,
    /// `d_{ki} = 1/(p a_k + p' a'_k)` otherwise.
    pub weight: f64,
}

fn posterior_from_terms(k: u32, a: f64, a_prime: f64, mix: &SourceMix) -> Result<Posterior> {
    let vac = if k == 0 { mix.p0 } else { 0.0 };
    let dec = mix.p * a;
    let sig = mix.p_prime * a_prime;
    let total = vac + dec + sig;
    if total.is_nan() || total <= 0.0 {
        return Err(Error::ZeroLikelihood(k));
    }
    let weight = 1.0 / total;
    Ok(Posterior {
        vacuum: vac * weight,
        decoy: dec * weight,
        signal: sig * weight,
        weight,
    })
}

/// Source posterior for a `k`-photon pulse emitted at intensities
/// `(decoy, signal)` with source mix `mix`.
pub fn source_posterior(k: u32, intensities: (f64, f64), mix: &SourceMix) -> Result<Posterior> {
    let a = poisson_term(intensities.0, k as usize);
    let a_prime = poisson_term(intensities.1, k as usize);
    posterior_from_terms(k, a, a_prime, mix)
}

/// Caches `e^{-mu}` across consecutive slots with the same intensities.
struct IntensityCache {
    mu: f64,
    exp_neg: f64,
}

impl IntensityCache {
    fn new() -> Self {
        Self {
            mu: f64::NAN,
            exp_neg: f64::NAN,
        }
    }

    #[inline]
    fn get(&mut self, mu: f64) -> f64 {
        if mu != self.mu {
            self.mu = mu;
            self.exp_neg = (-mu).exp();
        }
        self.exp_neg
    }
}

#[inline]
fn sample_poisson<R: Rng>(rng: &mut R, mu: f64, exp_neg: f64) -> u32 {
    let u: f64 = rng.random();
    let mut k = 0u32;
    let mut term = exp_neg;
    let mut cdf = term;
    while u >= cdf {
        k += 1;
        term *= mu / k as f64;
        if term == 0.0 {
            break;
        }
        cdf += term;
    }
    k
}

#[inline]
fn term_from_exp(mu: f64, exp_neg: f64, k: u32) -> f64 {
    let mut t = exp_neg;
    for j in 1..=k {
        t *= mu / j as f64;
    }
    t
}

fn run_chunk(
    config: &SimConfig,
    pattern: &ErrorPattern,
    channel: &ChannelModel,
    chunk: u64,
) -> Result<SimTally> {
    let start = chunk * CHUNK_PULSES;
    let end = (start + CHUNK_PULSES).min(config.pulses);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(chunk);

    let mix = config.mix;
    let decoy_cut = mix.p0 + mix.p;
    let mut tally = SimTally::empty(end - start, config.seed, mix, config.record_events);
    let mut truth = TruthSums::default();
    let mut decoy_cache = IntensityCache::new();
    let mut signal_cache = IntensityCache::new();

    for i in start..end {
        let (mu, mu_p) = pattern.intensity_unchecked(i);
        if !(mu.is_finite() && mu > 0.0 && mu_p.is_finite() && mu_p > 0.0) {
            return Err(Error::InvalidIntensity(if mu.is_finite() && mu > 0.0 {
                mu_p
            } else {
                mu
            }));
        }
        let e_mu = decoy_cache.get(mu);
        let e_mu_p = signal_cache.get(mu_p);

        let u: f64 = rng.random();
        let source = if u < mix.p0 {
            Source::Vacuum
        } else if u < decoy_cut {
            Source::Decoy
        } else {
            Source::Signal
        };
        let k = match source {
            Source::Vacuum => 0,
            Source::Decoy => sample_poisson(&mut rng, mu, e_mu),
            Source::Signal => sample_poisson(&mut rng, mu_p, e_mu_p),
        };
        bump(tally.emitted.get_mut(source), k as usize, 1);

        let q = channel.click_probability(i, k);
        if q <= 0.0 || rng.random::<f64>() >= q {
            continue;
        }
        bump(tally.counts.get_mut(source), k as usize, 1);
        let post = posterior_from_terms(
            k,
            term_from_exp(mu, e_mu, k),
            term_from_exp(mu_p, e_mu_p, k),
            &mix,
        )?;
        let k = k as usize;
        bump(&mut truth.weight, k, post.weight);
        for (s, pr) in [
            (Source::Vacuum, post.vacuum),
            (Source::Decoy, post.decoy),
            (Source::Signal, post.signal),
        ] {
            bump(truth.posterior.get_mut(s), k, pr);
            bump(truth.variance.get_mut(s), k, pr * (1.0 - pr));
        }
        if let Some(events) = &mut tally.events {
            events.push(Detection {
                index: i,
                source,
                photons: k as u32,
            });
        }
    }
    tally.truth = Some(truth);
    Ok(tally)
}

/// Runs the protocol for `config.pulses` slots.
pub fn simulate(
    config: &SimConfig,
    pattern: &ErrorPattern,
    channel: &ChannelModel,
) -> Result<SimTally> {
    config.mix.validate()?;
    if config.pulses == 0 {
        return Err(Error::NoPulses);
    }
    if pattern.pulses() < config.pulses {
        return Err(Error::PulseIndexOutOfRange {
            index: config.pulses - 1,
            len: pattern.pulses(),
        });
    }
    let chunks = config.pulses.div_ceil(CHUNK_PULSES);
    let partials = (0..chunks)
        .into_par_iter()
        .map(|c| run_chunk(config, pattern, channel, c))
        .collect::<Result<Vec<_>>>()?;
    let mut tally = SimTally::empty(config.pulses, config.seed, config.mix, config.record_events);
    for part in &partials {
        tally.merge(part);
    }
    Ok(tally)
}

/// Serializable error-pattern description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PatternSpec {
    Exact {
        mu: f64,
        mu_prime: f64,
    },
    TwoBlock {
        mu: f64,
        mu_prime: f64,
        strength: f64,
        block_len: u64,
    },
    PerPulse {
        intensities: Vec<(f64, f64)>,
    },
}

impl PatternSpec {
    pub fn build(&self, pulses: u64) -> Result<ErrorPattern> {
        match self {
            Self::Exact { mu, mu_prime } => ErrorPattern::exact(*mu, *mu_prime, pulses),
            Self::TwoBlock {
                mu,
                mu_prime,
                strength,
                block_len,
            } => ErrorPattern::two_block(*mu, *mu_prime, *strength, *block_len, pulses),
            Self::PerPulse { intensities } => ErrorPattern::per_pulse(intensities.clone()),
        }
    }
}

/// Parameters of a simulation run, as read from a JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub pulses: u64,
    pub p0: f64,
    pub p: f64,
    pub p_prime: f64,
    pub pattern: PatternSpec,
    pub channel: ChannelSpec,
    #[serde(default)]
    pub seed: u64,
}

impl SimParams {
    pub fn run(&self, seed: u64) -> Result<SimTally> {
        let config = SimConfig {
            pulses: self.pulses,
            mix: SourceMix::new(self.p0, self.p, self.p_prime)?,
            seed,
            record_events: false,
        };
        simulate(
            &config,
            &self.pattern.build(self.pulses)?,
            &self.channel.build()?,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn mix() -> SourceMix {
        SourceMix::new(0.1, 0.45, 0.45).unwrap()
    }

    fn config(pulses: u64, seed: u64) -> SimConfig {
        SimConfig {
            pulses,
            mix: mix(),
            seed,
            record_events: false,
        }
    }

    #[test]
    fn count_sets_from_forced_trace() {
        let photons = [0, 0, 1, 2, 0, 1, 3, 2, 1, 0];
        let mut clicked = [false; 10];
        for i in [2, 3, 5, 6, 9, 10] {
            clicked[i - 1] = true;
        }
        let sets = CountSets::from_trace(&photons, &clicked);
        assert_eq!(sets.all, vec![2, 3, 5, 6, 9, 10]);
        assert_eq!(sets.with_photons(0), &[2, 5, 10]);
        assert_eq!(sets.with_photons(1), &[3, 6, 9]);
        assert!(sets.with_photons(2).is_empty());
        assert!(sets.with_photons(3).is_empty());
    }

    #[test]
    fn posterior_examples() {
        let m = SourceMix::new(0.1, 0.45, 0.45).unwrap();
        let strong = source_posterior(1, (0.22, 0.66), &m).unwrap();
        assert!((strong.decoy - 0.341_051_410_509_777_3).abs() < 1e-12);
        assert_eq!(strong.vacuum, 0.0);
        let weak = source_posterior(1, (0.18, 0.54), &m).unwrap();
        assert!((weak.decoy - 0.323_307_672_525_499_8).abs() < 1e-12);
        // Single-photon pulses in strengthened blocks are the more likely to
        // come from the decoy source at these intensities.
        assert!(strong.decoy > weak.decoy);

        let no_signal = SourceMix::new(0.2, 0.8, 0.0).unwrap();
        for k in 0..4 {
            let p = source_posterior(k, (0.2, 0.6), &no_signal).unwrap();
            assert_eq!(p.signal, 0.0);
            assert!((p.vacuum + p.decoy - 1.0).abs() < 1e-15);
        }
        let only_vacuum = SourceMix::new(1.0, 0.0, 0.0).unwrap();
        assert_eq!(
            source_posterior(1, (0.2, 0.6), &only_vacuum),
            Err(Error::ZeroLikelihood(1))
        );
    }

    #[test]
    fn vacuum_posterior_normalizer() {
        let m = mix();
        let p = source_posterior(0, (0.2, 0.6), &m).unwrap();
        let d0 = 1.0 / (m.p0 + m.p * (-0.2f64).exp() + m.p_prime * (-0.6f64).exp());
        assert!((p.weight - d0).abs() < 1e-15);
        assert!((p.vacuum - m.p0 * d0).abs() < 1e-15);
    }

    #[test]
    fn zero_transmittance_gives_no_counts() {
        let pattern = ErrorPattern::exact(0.2, 0.6, 200_000).unwrap();
        let channel = ChannelModel::linear(0.0, 0.0).unwrap();
        let t = simulate(&config(200_000, 3), &pattern, &channel).unwrap();
        assert_eq!(t.detections(), 0);
        assert_eq!(
            t.emitted.vacuum.iter().sum::<u64>()
                + t.source_pulses(Source::Decoy)
                + t.source_pulses(Source::Signal),
            200_000
        );
        assert!(t.truth.as_ref().unwrap().weight.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn lossless_channel_matches_poisson() {
        let n = 1_000_000;
        let pattern = ErrorPattern::exact(0.2, 0.6, n).unwrap();
        let channel = ChannelModel::linear(1.0, 0.0).unwrap();
        let t = simulate(&config(n, 11), &pattern, &channel).unwrap();
        assert_eq!(t.source_counts(Source::Vacuum), 0);
        let decoy = RateEstimate::new(
            t.source_counts(Source::Decoy),
            t.source_pulses(Source::Decoy),
        )
        .unwrap();
        let expected = 1.0 - (-0.2f64).exp();
        assert!(
            (decoy.rate - expected).abs() < 4.0 * decoy.sigma,
            "{decoy:?}"
        );
        // Every emitted photon arrives, so counts equal emissions for k >= 1.
        for k in 1..t.emitted.decoy.len() {
            assert_eq!(t.count(Source::Decoy, k), t.emissions(Source::Decoy, k));
        }
    }

    #[test]
    fn reproducible_and_partition_independent() {
        let n = 3 * CHUNK_PULSES + 123;
        let pattern = ErrorPattern::two_block(0.2, 0.6, 0.1, 1000, n).unwrap();
        let channel = ChannelModel::block_attack(0.2, 1000, 1e-3).unwrap();
        let a = simulate(&config(n, 42), &pattern, &channel).unwrap();
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(3)
            .build()
            .unwrap()
            .install(|| simulate(&config(n, 42), &pattern, &channel).unwrap());
        assert_eq!(a, b);
        let c = simulate(&config(n, 43), &pattern, &channel).unwrap();
        assert_ne!(a.counts, c.counts);
    }

    #[test]
    fn tally_conservation() {
        let n = 500_000;
        let pattern = ErrorPattern::two_block(0.2, 0.6, 0.1, 777, n).unwrap();
        let channel = ChannelModel::block_attack(0.3, 777, 1e-3).unwrap();
        let mut cfg = config(n, 5);
        cfg.record_events = true;
        let t = simulate(&cfg, &pattern, &channel).unwrap();
        for s in Source::ALL {
            for k in 0..t.counts.get(s).len() {
                assert!(t.count(s, k) <= t.emissions(s, k));
            }
        }
        let events = t.events.as_ref().unwrap();
        assert_eq!(events.len() as u64, t.detections());
        for s in Source::ALL {
            let n_s = events.iter().filter(|e| e.source == s).count() as u64;
            assert_eq!(n_s, t.source_counts(s));
        }
        assert_eq!(t.counts.vacuum.iter().skip(1).sum::<u64>(), 0);
        let sets = t.count_sets().unwrap();
        assert_eq!(sets.all.len() as u64, t.detections());
        assert_eq!(sets.with_photons(1).len() as u64, t.detections_with(1));
        assert!(sets.all.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn random_mixture_restored_without_errors() {
        let n = 2_000_000;
        let pattern = ErrorPattern::exact(0.2, 0.6, n).unwrap();
        let channel = ChannelModel::linear(0.05, 1e-4).unwrap();
        let t = simulate(&config(n, 9), &pattern, &channel).unwrap();
        let rates = empirical_subclass_rates(&t);
        for k in 0..rates.decoy.len() {
            let (Some(d), Some(s)) = (rates.decoy(k), rates.signal(k)) else {
                continue;
            };
            if d.counts + s.counts < 1000 {
                continue;
            }
            let pooled = (d.sigma.powi(2) + s.sigma.powi(2)).sqrt();
            assert!((d.rate - s.rate).abs() <= 4.0 * pooled, "k={k}");
        }
    }

    #[test]
    fn absent_subclasses() {
        let pattern = ErrorPattern::exact(0.01, 0.02, 1000).unwrap();
        let channel = ChannelModel::linear(0.5, 0.0).unwrap();
        let t = simulate(&config(1000, 1), &pattern, &channel).unwrap();
        let rates = empirical_subclass_rates(&t);
        assert!(rates.decoy(40).is_none());
        assert!(rates.decoy(0).is_some());
    }

    #[test]
    fn rejects_bad_inputs() {
        let pattern = ErrorPattern::exact(0.2, 0.6, 10).unwrap();
        let channel = ChannelModel::linear(0.5, 0.0).unwrap();
        let mut cfg = config(10, 1);
        cfg.mix = SourceMix {
            p0: 0.5,
            p: 0.5,
            p_prime: 0.5,
        };
        assert!(matches!(
            simulate(&cfg, &pattern, &channel),
            Err(Error::ProbabilitySum(_))
        ));
        assert!(matches!(
            simulate(&config(11, 1), &pattern, &channel),
            Err(Error::PulseIndexOutOfRange { .. })
        ));
        assert_eq!(
            simulate(&config(0, 1), &pattern, &channel),
            Err(Error::NoPulses)
        );
        let bad = ErrorPattern::custom(
            10,
            Arc::new(|i| if i == 7 { (-1.0, 0.6) } else { (0.2, 0.6) }),
        )
        .unwrap();
        assert_eq!(
            simulate(&config(10, 1), &bad, &channel),
            Err(Error::InvalidIntensity(-1.0))
        );
    }

    #[test]
    fn tally_json_schema() {
        let pattern = ErrorPattern::exact(0.2, 0.6, 5000).unwrap();
        let channel = ChannelModel::linear(0.3, 1e-3).unwrap();
        let t = simulate(&config(5000, 2), &pattern, &channel).unwrap();
        let v: serde_json::Value = serde_json::to_value(&t).unwrap();
        assert_eq!(v["M"], 5000);
        assert_eq!(v["seed"], 2);
        assert!(v["counts"]["decoy"].is_array());
        assert!(v["emitted"]["signal"].is_array());
        let back: SimTally = serde_json::from_value(v).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn params_json() {
        let json = r#"{
            "pulses": 100000, "p0": 0.1, "p": 0.45, "p_prime": 0.45,
            "pattern": {"kind": "two_block", "mu": 0.2, "mu_prime": 0.6, "strength": 0.1, "block_len": 1000},
            "channel": {"kind": "two_block_attack", "eta_e": 0.05, "block_len": 1000}
        }"#;
        let params: SimParams = serde_json::from_str(json).unwrap();
        let t = params.run(7).unwrap();
        assert_eq!(t.pulses, 100_000);
        assert_eq!(t.seed, 7);
    }
}
