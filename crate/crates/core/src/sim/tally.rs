use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bounds::ObservedRates;
use crate::error::Result;
use crate::source::SourceMix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Vacuum,
    Decoy,
    Signal,
}

impl Source {
    pub const ALL: [Source; 3] = [Source::Vacuum, Source::Decoy, Source::Signal];
}

/// One value per source.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PerSource<T> {
    pub vacuum: T,
    pub decoy: T,
    pub signal: T,
}

impl<T> PerSource<T> {
    pub fn get(&self, s: Source) -> &T {
        match s {
            Source::Vacuum => &self.vacuum,
            Source::Decoy => &self.decoy,
            Source::Signal => &self.signal,
        }
    }

    pub fn get_mut(&mut self, s: Source) -> &mut T {
        match s {
            Source::Vacuum => &mut self.vacuum,
            Source::Decoy => &mut self.decoy,
            Source::Signal => &mut self.signal,
        }
    }
}

pub(crate) fn bump<T: Copy + Default + std::ops::AddAssign>(v: &mut Vec<T>, k: usize, by: T) {
    if v.len() <= k {
        v.resize(k + 1, T::default());
    }
    v[k] += by;
}

fn add_into<T: Copy + Default + std::ops::AddAssign>(dst: &mut Vec<T>, src: &[T]) {
    for (k, &x) in src.iter().enumerate() {
        bump(dst, k, x);
    }
}

/// Ground-truth sums over detected pulses, indexed by photon number `k`.
///
/// `weight[k] = sum_{i in c_k} d_{ki}` with `d_{0i} = 1/(p0 + p a_{0i} + p' a'_{0i})`
/// and `d_{ki} = 1/(p a_{ki} + p' a'_{ki})` for `k >= 1`. `posterior` holds the
/// summed posterior source probabilities and `variance` the summed
/// `P (1 - P)`, the label-noise variance of each realized count.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TruthSums {
    pub weight: Vec<f64>,
    pub posterior: PerSource<Vec<f64>>,
    pub variance: PerSource<Vec<f64>>,
}

impl TruthSums {
    pub(crate) fn merge(&mut self, other: &TruthSums) {
        add_into(&mut self.weight, &other.weight);
        for s in Source::ALL {
            add_into(self.posterior.get_mut(s), other.posterior.get(s));
            add_into(self.variance.get_mut(s), other.variance.get(s));
        }
    }

    pub fn weight(&self, k: usize) -> f64 {
        self.weight.get(k).copied().unwrap_or(0.0)
    }

    pub fn posterior(&self, s: Source, k: usize) -> f64 {
        self.posterior.get(s).get(k).copied().unwrap_or(0.0)
    }

    pub fn variance(&self, s: Source, k: usize) -> f64 {
        self.variance.get(s).get(k).copied().unwrap_or(0.0)
    }
}

/// A detected pulse with its true source and photon number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Detection {
    pub index: u64,
    pub source: Source,
    pub photons: u32,
}

/// Result of a simulated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTally {
    #[serde(rename = "M")]
    pub pulses: u64,
    pub seed: u64,
    pub mix: SourceMix,
    /// Detections by true source and emitted photon number.
    pub counts: PerSource<Vec<u64>>,
    /// Emissions by source and photon number.
    pub emitted: PerSource<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<TruthSums>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub events: Option<Vec<Detection>>,
}

impl SimTally {
    pub(crate) fn empty(pulses: u64, seed: u64, mix: SourceMix, record_events: bool) -> Self {
        Self {
            pulses,
            seed,
            mix,
            counts: PerSource::default(),
            emitted: PerSource::default(),
            truth: Some(TruthSums::default()),
            events: record_events.then(Vec::new),
        }
    }

    /// Adds another partial tally. Integer fields commute exactly; float sums
    /// are merged in call order, which the simulator keeps fixed.
    pub(crate) fn merge(&mut self, other: &SimTally) {
        for s in Source::ALL {
            add_into(self.counts.get_mut(s), other.counts.get(s));
            add_into(self.emitted.get_mut(s), other.emitted.get(s));
        }
        if let (Some(a), Some(b)) = (&mut self.truth, &other.truth) {
            a.merge(b);
        }
        if let (Some(a), Some(b)) = (&mut self.events, &other.events) {
            a.extend_from_slice(b);
        }
    }

    pub fn count(&self, s: Source, k: usize) -> u64 {
        self.counts.get(s).get(k).copied().unwrap_or(0)
    }

    pub fn emissions(&self, s: Source, k: usize) -> u64 {
        self.emitted.get(s).get(k).copied().unwrap_or(0)
    }

    /// Total detections caused by a source (`N_0`, `N_d`, `N_s`).
    pub fn source_counts(&self, s: Source) -> u64 {
        self.counts.get(s).iter().sum()
    }

    pub fn source_pulses(&self, s: Source) -> u64 {
        self.emitted.get(s).iter().sum()
    }

    /// `|C|`, the number of pulses that caused a count.
    pub fn detections(&self) -> u64 {
        Source::ALL.iter().map(|&s| self.source_counts(s)).sum()
    }

    /// `|c_k|`.
    pub fn detections_with(&self, k: usize) -> u64 {
        Source::ALL.iter().map(|&s| self.count(s, k)).sum()
    }

    /// Counting rates normalized by the nominal class sizes `pM`, `p'M`, `p0 M`.
    pub fn observed_rates(&self) -> Result<ObservedRates> {
        ObservedRates::from_counts(
            self.source_counts(Source::Vacuum) as f64,
            self.source_counts(Source::Decoy) as f64,
            self.source_counts(Source::Signal) as f64,
            self.mix,
            self.pulses as f64,
        )
    }

    pub fn count_sets(&self) -> Option<CountSets> {
        let events = self.events.as_ref()?;
        let mut sets = CountSets::default();
        for e in events {
            sets.push(e.index + 1, e.photons);
        }
        Some(sets)
    }
}

/// Pulses that caused a count (`C`) and those split by photon number
/// (`c_k`). Pulse numbers are 1-based.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CountSets {
    pub all: Vec<u64>,
    pub by_photons: BTreeMap<u32, Vec<u64>>,
}

impl CountSets {
    fn push(&mut self, pulse: u64, photons: u32) {
        self.all.push(pulse);
        self.by_photons.entry(photons).or_default().push(pulse);
    }

    /// Builds the sets from per-pulse photon numbers and click outcomes.
    pub fn from_trace(photons: &[u32], clicked: &[bool]) -> Self {
        let mut sets = Self::default();
        for (i, (&k, &click)) in photons.iter().zip(clicked).enumerate() {
            if click {
                sets.push(i as u64 + 1, k);
            }
        }
        sets
    }

    pub fn with_photons(&self, k: u32) -> &[u64] {
        self.by_photons.get(&k).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Binomial estimate of a counting rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub rate: f64,
    pub sigma: f64,
    pub counts: u64,
    pub emitted: u64,
}

impl RateEstimate {
    pub fn new(counts: u64, emitted: u64) -> Option<Self> {
        if emitted == 0 {
            return None;
        }
        let n = emitted as f64;
        let rate = counts as f64 / n;
        Some(Self {
            rate,
            sigma: (rate * (1.0 - rate) / n).sqrt(),
            counts,
            emitted,
        })
    }

    /// `self / other` with first-order propagated standard deviation.
    pub fn ratio(&self, other: &RateEstimate) -> (f64, f64) {
        let r = self.rate / other.rate;
        let rel = ((self.sigma / self.rate).powi(2) + (other.sigma / other.rate).powi(2)).sqrt();
        (r, r * rel)
    }
}

/// Per-photon-number counting rates `s_k` (decoy) and `s'_k` (signal).
/// Entries with no emissions are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubclassRates {
    pub decoy: Vec<Option<RateEstimate>>,
    pub signal: Vec<Option<RateEstimate>>,
}

impl SubclassRates {
    pub fn decoy(&self, k: usize) -> Option<RateEstimate> {
        self.decoy.get(k).copied().flatten()
    }

    pub fn signal(&self, k: usize) -> Option<RateEstimate> {
        self.signal.get(k).copied().flatten()
    }
}

pub fn empirical_subclass_rates(tally: &SimTally) -> SubclassRates {
    let rates = |s: Source| {
        (0..tally.emitted.get(s).len())
            .map(|k| RateEstimate::new(tally.count(s, k), tally.emissions(s, k)))
            .collect()
    };
    SubclassRates {
        decoy: rates(Source::Decoy),
        signal: rates(Source::Signal),
    }
}
