//! Harvested energy arrivals and battery bookkeeping.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute slack allowed when checking that a node spends no more than it
/// holds. Only absorbs floating-point rounding.
pub const CAUSALITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnergyError {
    #[error("battery capacity must be positive and finite, got {0}")]
    Capacity(f64),
    #[error("battery charge {charge} outside [0, {capacity}]")]
    Charge { charge: f64, capacity: f64 },
    #[error("harvest mean must be positive and finite, got {0}")]
    HarvestMean(f64),
    #[error("bernoulli harvest needs mean in (0, 1], got {0}")]
    BernoulliMean(f64),
    #[error("spending {spend} exceeds battery charge {charge}")]
    Causality { spend: f64, charge: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryState {
    charge: f64,
    capacity: f64,
}

impl BatteryState {
    pub fn new(charge: f64, capacity: f64) -> Result<Self, EnergyError> {
        if !(capacity.is_finite() && capacity > 0.0) {
            return Err(EnergyError::Capacity(capacity));
        }
        if !(0.0..=capacity).contains(&charge) {
            return Err(EnergyError::Charge { charge, capacity });
        }
        Ok(Self { charge, capacity })
    }

    pub fn full(capacity: f64) -> Result<Self, EnergyError> {
        Self::new(capacity, capacity)
    }

    pub fn charge(&self) -> f64 {
        self.charge
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }
}

/// `b' = clamp(b − spend + harvest, 0, b_max)`; spending more than the
/// current charge is an error rather than a clamp.
pub fn step_battery(state: &BatteryState, spend: f64, harvest: f64) -> Result<BatteryState, EnergyError> {
    if spend > state.charge + CAUSALITY_TOL {
        return Err(EnergyError::Causality {
            spend,
            charge: state.charge,
        });
    }
    Ok(BatteryState {
        charge: (state.charge - spend + harvest).clamp(0.0, state.capacity),
        capacity: state.capacity,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HarvestDistribution {
    /// One unit with probability `mean`, otherwise nothing.
    Bernoulli,
    /// Exactly `mean` every slot.
    Deterministic,
    /// Uniform on `[0, 2·mean]`.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarvestConfig {
    kind: Option<(HarvestDistribution, f64)>,
}

impl HarvestConfig {
    pub fn new(distribution: HarvestDistribution, mean: f64) -> Result<Self, EnergyError> {
        if !(mean.is_finite() && mean > 0.0) {
            return Err(EnergyError::HarvestMean(mean));
        }
        if distribution == HarvestDistribution::Bernoulli && mean > 1.0 {
            return Err(EnergyError::BernoulliMean(mean));
        }
        Ok(Self {
            kind: Some((distribution, mean)),
        })
    }

    /// A node without a harvester. Draws nothing from the stream.
    pub fn disabled() -> Self {
        Self { kind: None }
    }

    pub fn mean(&self) -> f64 {
        self.kind.map_or(0.0, |(_, m)| m)
    }

    pub fn distribution(&self) -> Option<HarvestDistribution> {
        self.kind.map(|(d, _)| d)
    }
}

pub fn draw_harvest<R: Rng + ?Sized>(config: &HarvestConfig, rng: &mut R) -> f64 {
    match config.kind {
        None => 0.0,
        Some((HarvestDistribution::Bernoulli, mean)) => {
            if rng.random_bool(mean) {
                1.0
            } else {
                0.0
            }
        }
        Some((HarvestDistribution::Deterministic, mean)) => mean,
        Some((HarvestDistribution::Uniform, mean)) => 2.0 * mean * rng.random::<f64>(),
    }
}

/// How transmissions are charged against the battery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnergyAccounting {
    /// Deduct the access probability `z` every slot.
    #[default]
    Fluid,
    /// Deduct one unit per actual transmission; nodes holding less than a
    /// unit stay silent. Breaks the dual/battery mirror, so it is only for
    /// exploration.
    PerTransmission,
}
