use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::source::poisson_term;

/// Photon-arrival detection probability for `(pulse index, photon number)`.
/// The adversary may look at the pulse index (and hence the error pattern)
/// but never at which source emitted the pulse.
pub type DetectionFn = Arc<dyn Fn(u64, u32) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum ChannelKind {
    /// Each photon independently survives with probability `eta`.
    Linear {
        eta: f64,
    },
    /// Linear channel of transmittance `2 eta_e` on even (strengthened)
    /// blocks, fully blocked on odd (weakened) blocks.
    BlockAttack {
        eta_e: f64,
        block_len: u64,
    },
    /// Per-block linear transmittance, cycling through `etas`.
    BlockTransmittance {
        block_len: u64,
        etas: Arc<Vec<f64>>,
    },
    Custom(DetectionFn),
}

impl fmt::Debug for ChannelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Linear { eta } => f.debug_struct("Linear").field("eta", eta).finish(),
            Self::BlockAttack { eta_e, block_len } => f
                .debug_struct("BlockAttack")
                .field("eta_e", eta_e)
                .field("block_len", block_len)
                .finish(),
            Self::BlockTransmittance { block_len, etas } => {
                write!(
                    f,
                    "BlockTransmittance {{ block_len: {block_len}, blocks: {} }}",
                    etas.len()
                )
            }
            Self::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// Channel plus threshold detector: `P(click | k) = 1 - (1 - q_k)(1 - d)`
/// where `q_k` is the photon-arrival probability and `d` the dark-count
/// probability per observation window.
#[derive(Debug, Clone)]
pub struct ChannelModel {
    kind: ChannelKind,
    dark_count: f64,
}

fn check_prob(name: &str, x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::InvalidChannel(format!(
            "{name} = {x} outside [0, 1]"
        )))
    }
}

fn check_block(block_len: u64) -> Result<()> {
    if block_len == 0 {
        Err(Error::InvalidChannel(
            "block length must be positive".into(),
        ))
    } else {
        Ok(())
    }
}

impl ChannelModel {
    pub fn linear(eta: f64, dark_count: f64) -> Result<Self> {
        check_prob("eta", eta)?;
        Self::with_kind(ChannelKind::Linear { eta }, dark_count)
    }

    pub fn block_attack(eta_e: f64, block_len: u64, dark_count: f64) -> Result<Self> {
        if !(0.0..=0.5).contains(&eta_e) {
            return Err(Error::InvalidChannel(format!(
                "eta_e = {eta_e} outside [0, 0.5]"
            )));
        }
        check_block(block_len)?;
        Self::with_kind(ChannelKind::BlockAttack { eta_e, block_len }, dark_count)
    }

    pub fn block_transmittance(block_len: u64, etas: Vec<f64>, dark_count: f64) -> Result<Self> {
        check_block(block_len)?;
        if etas.is_empty() {
            return Err(Error::InvalidChannel("no block transmittances".into()));
        }
        for &eta in &etas {
            check_prob("block eta", eta)?;
        }
        Self::with_kind(
            ChannelKind::BlockTransmittance {
                block_len,
                etas: Arc::new(etas),
            },
            dark_count,
        )
    }

    /// Custom arrival probabilities. Returned values outside `[0, 1]` are
    /// clamped.
    pub fn custom(f: DetectionFn, dark_count: f64) -> Result<Self> {
        Self::with_kind(ChannelKind::Custom(f), dark_count)
    }

    fn with_kind(kind: ChannelKind, dark_count: f64) -> Result<Self> {
        check_prob("dark count probability", dark_count)?;
        Ok(Self { kind, dark_count })
    }

    pub fn kind(&self) -> &ChannelKind {
        &self.kind
    }

    pub fn dark_count(&self) -> f64 {
        self.dark_count
    }

    #[inline]
    fn arrival(&self, index: u64, photons: u32) -> f64 {
        let linear = |eta: f64| {
            if photons == 0 {
                0.0
            } else {
                1.0 - (1.0 - eta).powi(photons as i32)
            }
        };
        match &self.kind {
            ChannelKind::Linear { eta } => linear(*eta),
            ChannelKind::BlockAttack { eta_e, block_len } => {
                if (index / block_len).is_multiple_of(2) {
                    linear(2.0 * eta_e)
                } else {
                    0.0
                }
            }
            ChannelKind::BlockTransmittance { block_len, etas } => {
                let block = (index / block_len) as usize % etas.len();
                linear(etas[block])
            }
            ChannelKind::Custom(f) => f(index, photons).clamp(0.0, 1.0),
        }
    }

    /// Probability that Bob's detector clicks in observation `index` given a
    /// `photons`-photon pulse.
    #[inline]
    pub fn click_probability(&self, index: u64, photons: u32) -> f64 {
        1.0 - (1.0 - self.arrival(index, photons)) * (1.0 - self.dark_count)
    }
}

/// Time-dependent attack against two-block intensity errors: block the
/// weakened blocks and pass the strengthened ones through a linear channel of
/// transmittance `2 eta_e`. No dark counts.
pub fn two_block_attack_channel(
    mu: f64,
    mu_prime: f64,
    strength: f64,
    eta_e: f64,
    block_len: u64,
) -> Result<ChannelModel> {
    for x in [mu, mu_prime] {
        if !(x.is_finite() && x > 0.0) {
            return Err(Error::InvalidIntensity(x));
        }
    }
    if !(strength > 0.0 && strength < 1.0) {
        return Err(Error::OutOfUnitRange {
            name: "block strength fraction",
            value: strength,
        });
    }
    ChannelModel::block_attack(eta_e, block_len, 0.0)
}

/// Expected single-photon counting rates `(s_1, s'_1)` of the decoy and
/// signal sources under the two-block attack, averaged over equal numbers of
/// strengthened and weakened pulses.
pub fn two_block_single_photon_rates(
    mu: f64,
    mu_prime: f64,
    strength: f64,
    eta_e: f64,
) -> (f64, f64) {
    let (hi, lo) = (1.0 + strength, 1.0 - strength);
    let rate = |m: f64| {
        let strong = poisson_term(hi * m, 1);
        let weak = poisson_term(lo * m, 1);
        (0.5 * 2.0 * eta_e * strong) / ((weak + strong) / 2.0)
    };
    (rate(mu), rate(mu_prime))
}

/// Closed form of `s_1 / s'_1` under the two-block attack:
/// `(e^{2 f mu'} + (1+f)/(1-f)) / (e^{2 f mu} + (1+f)/(1-f))`.
pub fn two_block_ratio(mu: f64, mu_prime: f64, strength: f64) -> f64 {
    let g = (1.0 + strength) / (1.0 - strength);
    ((2.0 * strength * mu_prime).exp() + g) / ((2.0 * strength * mu).exp() + g)
}

/// Serializable channel description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelSpec {
    Linear {
        eta: f64,
        #[serde(default)]
        dark_count: f64,
    },
    TwoBlockAttack {
        eta_e: f64,
        block_len: u64,
        #[serde(default)]
        dark_count: f64,
    },
    BlockTransmittance {
        block_len: u64,
        etas: Vec<f64>,
        #[serde(default)]
        dark_count: f64,
    },
}

impl ChannelSpec {
    pub fn build(&self) -> Result<ChannelModel> {
        match self {
            Self::Linear { eta, dark_count } => ChannelModel::linear(*eta, *dark_count),
            Self::TwoBlockAttack {
                eta_e,
                block_len,
                dark_count,
            } => ChannelModel::block_attack(*eta_e, *block_len, *dark_count),
            Self::BlockTransmittance {
                block_len,
                etas,
                dark_count,
            } => ChannelModel::block_transmittance(*block_len, etas.clone(), *dark_count),
        }
    }
}
