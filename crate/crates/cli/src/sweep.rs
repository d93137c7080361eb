//! One-parameter sweeps. Every grid point is an independent run with a seed
//! derived from the base seed and the point's index.

use std::io::Write;

use clap::ValueEnum;
use ehctrl_core::comm::{ChannelConfig, FadingSampler};
use ehctrl_core::config::ConfigError;
use ehctrl_core::coordination::{AvailabilityMode, AvailabilitySchedule};
use ehctrl_core::energy::{HarvestConfig, HarvestDistribution};
use ehctrl_core::rng::derive_seed;
use ehctrl_core::{run_summary, SimConfig, SimError, Summary};
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    /// Mean harvest per slot, applied to every node.
    HarvestMean,
    CollisionProb,
    StepSize,
    /// Staleness bound; an always-on schedule switches to piggybacking.
    MaxStaleness,
    FadingMean,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::HarvestMean => "harvest_mean",
            SweepParam::CollisionProb => "collision_prob",
            SweepParam::StepSize => "step_size",
            SweepParam::MaxStaleness => "max_staleness",
            SweepParam::FadingMean => "fading_mean",
        }
    }

    /// `base` with this parameter set to `value`.
    pub fn apply(self, base: &SimConfig, value: f64) -> Result<SimConfig, ConfigError> {
        let mut c = base.clone();
        match self {
            SweepParam::HarvestMean => {
                for (node, n) in c.nodes.iter_mut().enumerate() {
                    let dist = n.harvest.distribution().unwrap_or(HarvestDistribution::Bernoulli);
                    n.harvest = HarvestConfig::new(dist, value).map_err(|source| ConfigError::Energy { node, source })?;
                }
            }
            SweepParam::CollisionProb => {
                c.channel = ChannelConfig::new(c.channel.fading.mean(), c.channel.decoding, value)?;
            }
            SweepParam::StepSize => c.scheduler.step_size = value,
            SweepParam::MaxStaleness => {
                if !(value >= 1.0 && value.fract() == 0.0) {
                    return Err(ConfigError::Invalid(format!("max staleness must be a positive integer, got {value}")));
                }
                let mode = match c.availability.mode() {
                    AvailabilityMode::AlwaysOn => AvailabilityMode::Piggyback,
                    other => other,
                };
                c.availability = AvailabilitySchedule::new(mode, value as u64)?;
            }
            SweepParam::FadingMean => {
                c.channel = ChannelConfig::new(value, c.channel.decoding, c.channel.collision_probability())?;
            }
        }
        c.scheduler_params()?;
        Ok(c)
    }
}

pub struct SweepPoint {
    pub value: f64,
    pub seed: u64,
    pub outcome: Result<Summary, SimError>,
}

/// Runs every point in parallel; results come back in grid order.
pub fn run_sweep(base: &SimConfig, param: SweepParam, values: &[f64]) -> Result<Vec<SweepPoint>, ConfigError> {
    let configs = values
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            let mut c = param.apply(base, v)?;
            c.seed = derive_seed(base.seed, k as u64);
            Ok(c)
        })
        .collect::<Result<Vec<_>, ConfigError>>()?;
    Ok(configs
        .into_par_iter()
        .zip(values.par_iter())
        .map(|(c, &value)| {
            let seed = c.seed;
            SweepPoint {
                value,
                seed,
                outcome: run_summary(c),
            }
        })
        .collect())
}

/// One row per point: `param,value,seed,status` then per-node averages.
pub fn write_sweep_csv<W: Write>(out: W, param: SweepParam, m: usize, points: &[SweepPoint]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["param".to_string(), "value".into(), "seed".into(), "status".into()];
    for field in ["ctrl_perf", "p_tx", "p_rx", "p_rx_empirical", "energy_balance", "nu_max"] {
        header.extend((1..=m).map(|i| format!("{field}_{i}")));
    }
    header.push("violations".into());
    w.write_record(&header)?;
    for p in points {
        let mut row = vec![param.name().to_string(), p.value.to_string(), p.seed.to_string()];
        match &p.outcome {
            Ok(s) => {
                row.push("ok".into());
                let cols: [fn(&ehctrl_core::telemetry::NodeSummary) -> f64; 6] = [
                    |n| n.ctrl_perf,
                    |n| n.p_tx,
                    |n| n.p_rx,
                    |n| n.p_rx_empirical,
                    |n| n.energy_balance,
                    |n| n.nu_max.iter().copied().fold(0.0, f64::max),
                ];
                for f in cols {
                    for i in 0..m {
                        row.push(s.nodes.get(i).map(|n| f(n).to_string()).unwrap_or_default());
                    }
                }
                row.push(s.violations.total().to_string());
            }
            Err(e) => {
                row.push(e.to_string());
                row.extend(std::iter::repeat_n(String::new(), 6 * m + 1));
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
