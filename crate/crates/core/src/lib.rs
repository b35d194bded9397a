//! Lower bounds on single-photon counts for decoy-state key distribution
//! when the source intensities are only known to lie in intervals.
//!
//! - [`source`]: photon-number distributions, intensity windows, error patterns.
//! - [`bounds`]: error-free and error-tolerant single-photon bounds.
//! - [`keyrate`]: key rate from the bounds, sweeps and CSV output.
//! - [`sim`]: Monte Carlo simulation of a source and an adversarial channel.
//! - [`oracle`]: ground truth from simulated runs and safety checks.
//!
//! ```
//! use decoy_core::{coherent_bounds, delta1_bounds, CoherentWindow, ObservedRates, SourceMix};
//!
//! let mix = SourceMix::new(0.09006, 0.40726, 0.50268)?;
//! let rates = ObservedRates::new(1.548e-4, 3.817e-4, 2.609e-5, mix, 5.9248e9)?;
//! let decoy = CoherentWindow::relative(0.2, 0.01)?;
//! let signal = CoherentWindow::relative(0.6, 0.01)?;
//! let (d, s) = coherent_bounds(&decoy, &signal, 25)?;
//! let bound = delta1_bounds(&rates, &d, &s)?;
//! assert!((bound.delta1_signal.value - 0.5561).abs() < 1e-4);
//! # Ok::<(), decoy_core::Error>(())
//! ```

pub mod bounds;
pub mod error;
pub mod keyrate;
pub mod oracle;
pub mod sim;
pub mod source;

pub use bounds::{
    d1_lower, delta1_bounds, delta1_bounds_with_vacuum_rate, errorfree_fractions,
    errorfree_s1_lower, vacuum_count_bounds, BoundCoefficients, ClampedBound, Interval,
    ObservedRates, SingletBound,
};
pub use error::{Error, Result};
pub use keyrate::{
    binary_entropy, key_rate_hz, key_rate_per_count, single_photon_qber, sweep_delta_m, KeyRate,
    KeyRateInput, SweepRow, SweepSettings, T1Convention,
};
pub use oracle::{
    check_safety, evaluate_scenario, extract_ground_truth, run_suite, search_unsafe_baseline,
    GroundTruth, SafetyReport, Scenario, SuiteConfig, SuiteReport,
};
pub use sim::{simulate, ChannelModel, SimConfig, SimParams, SimTally};
pub use source::{
    check_bounded_ordering, check_exact_ordering, coherent_bounds, BoundedDistribution,
    CoherentWindow, ErrorPattern, PhotonDistribution, SourceMix, SourceSpec,
};
