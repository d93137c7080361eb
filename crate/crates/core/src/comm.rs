//! Shared-channel model: block fading, decoding probability, and collisions.
//!
//! A packet from node `i` is received when it is sent, no concurrent sender
//! `j` destroys it (each one independently with probability `q_c`), and it
//! decodes under the current fading state. With Bernoulli(`z`) senders the
//! marginal reception probability is `q_i·z_i·∏_{j≠i}(1 − q_c·z_j)`.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChannelError {
    #[error("fading mean must be positive and finite, got {0}")]
    FadingMean(f64),
    #[error("collision probability must lie in [0, 1], got {0}")]
    CollisionProbability(f64),
    #[error("invalid decoding curve: {0}")]
    Decoding(String),
}

/// Probability of decoding a packet as a function of the channel state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "curve", rename_all = "kebab-case")]
pub enum DecodingCurve {
    /// `1 − exp(−rate·h)`.
    Exponential { rate: f64 },
    /// `1 / (1 + exp(−slope·(h − midpoint)))`.
    Logistic { slope: f64, midpoint: f64 },
    /// Every packet decodes. Not strictly increasing; useful for tests.
    Ideal,
}

impl Default for DecodingCurve {
    fn default() -> Self {
        DecodingCurve::Logistic {
            slope: 3.0,
            midpoint: 1.5,
        }
    }
}

impl DecodingCurve {
    pub fn probability(&self, h: f64) -> f64 {
        let h = h.max(0.0);
        match *self {
            DecodingCurve::Exponential { rate } => -(-rate * h).exp_m1(),
            DecodingCurve::Logistic { slope, midpoint } => 1.0 / (1.0 + (-slope * (h - midpoint)).exp()),
            DecodingCurve::Ideal => 1.0,
        }
    }

    fn validate(&self) -> Result<(), ChannelError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        match *self {
            DecodingCurve::Exponential { rate } if !ok(rate) => {
                Err(ChannelError::Decoding(format!("exponential rate {rate} must be positive")))
            }
            DecodingCurve::Logistic { slope, midpoint } if !ok(slope) || !midpoint.is_finite() => Err(
                ChannelError::Decoding(format!("logistic slope {slope} / midpoint {midpoint}")),
            ),
            _ => Ok(()),
        }
    }
}

/// Source of per-slot channel states.
pub trait FadingSampler {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64;
    fn mean(&self) -> f64;
}

/// I.i.d. exponential fading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentialFading {
    mean: f64,
}

impl ExponentialFading {
    pub fn new(mean: f64) -> Result<Self, ChannelError> {
        if !(mean.is_finite() && mean > 0.0) {
            return Err(ChannelError::FadingMean(mean));
        }
        Ok(Self { mean })
    }
}

impl FadingSampler for ExponentialFading {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        Exp::new(1.0 / self.mean).expect("validated mean").sample(rng)
    }

    fn mean(&self) -> f64 {
        self.mean
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelConfig {
    pub fading: ExponentialFading,
    pub decoding: DecodingCurve,
    collision_probability: f64,
}

impl ChannelConfig {
    pub fn new(fading_mean: f64, decoding: DecodingCurve, collision_probability: f64) -> Result<Self, ChannelError> {
        if !(0.0..=1.0).contains(&collision_probability) {
            return Err(ChannelError::CollisionProbability(collision_probability));
        }
        decoding.validate()?;
        Ok(Self {
            fading: ExponentialFading::new(fading_mean)?,
            decoding,
            collision_probability,
        })
    }

    pub fn collision_probability(&self) -> f64 {
        self.collision_probability
    }
}

/// Channel state of one link in one slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkState {
    pub h: f64,
    pub q: f64,
}

pub fn draw_link<R: Rng + ?Sized>(config: &ChannelConfig, rng: &mut R) -> LinkState {
    let h = config.fading.sample(rng);
    LinkState {
        h,
        q: config.decoding.probability(h),
    }
}

/// `m` independent link states drawn from a single stream.
pub fn draw_channels<R: Rng + ?Sized>(config: &ChannelConfig, m: usize, rng: &mut R) -> Vec<LinkState> {
    (0..m).map(|_| draw_link(config, rng)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeOutcome {
    pub h: f64,
    pub q: f64,
    pub transmitted: bool,
    pub collided: bool,
    pub decoded: bool,
    pub gamma: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotOutcome {
    pub nodes: Vec<NodeOutcome>,
}

impl SlotOutcome {
    pub fn gamma(&self) -> Vec<bool> {
        self.nodes.iter().map(|n| n.gamma).collect()
    }
}

/// Resolves collisions and decoding for one slot.
///
/// `rngs[i]` supplies every draw concerning node `i`'s packet: one
/// Bernoulli(`q_c`) per other sender, then the decoding draw if the packet
/// survived.
pub fn resolve_slot<R: Rng>(
    config: &ChannelConfig,
    links: &[LinkState],
    transmitted: &[bool],
    rngs: &mut [R],
) -> SlotOutcome {
    assert_eq!(links.len(), transmitted.len(), "links/transmitted length mismatch");
    assert_eq!(links.len(), rngs.len(), "links/rng length mismatch");
    let qc = config.collision_probability;
    let nodes = links
        .iter()
        .zip(rngs.iter_mut())
        .enumerate()
        .map(|(i, (link, rng))| {
            let mut out = NodeOutcome {
                h: link.h,
                q: link.q,
                transmitted: transmitted[i],
                collided: false,
                decoded: false,
                gamma: false,
            };
            if !transmitted[i] {
                return out;
            }
            for (j, &other) in transmitted.iter().enumerate() {
                if j != i && other && rng.random_bool(qc) {
                    out.collided = true;
                }
            }
            if !out.collided {
                out.decoded = rng.random_bool(link.q.clamp(0.0, 1.0));
            }
            out.gamma = out.transmitted && !out.collided && out.decoded;
            out
        })
        .collect();
    SlotOutcome { nodes }
}

/// `q_i·z_i·∏_{j≠i}(1 − q_c·z_j)`.
pub fn reception_probability(z: &[f64], q: &[f64], q_c: f64, i: usize) -> f64 {
    let others: f64 = z
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &zj)| 1.0 - q_c * zj)
        .product();
    q[i] * z[i] * others
}
