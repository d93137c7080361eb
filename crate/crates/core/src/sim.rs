//! The slot loop.
//!
//! Each slot runs, in order: channel and harvest draws; primal decisions
//! from current and stale duals; Bernoulli(`z`) access draws; collision and
//! decoding resolution; plant steps; battery steps; dual updates with the
//! asynchronous mask; dual exchange; telemetry.

use std::io;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::comm::{draw_link, reception_probability, resolve_slot, LinkState};
use crate::config::{ConfigError, ExecutionMode, Policy, SimConfig};
use crate::control::{control_performance_bound, lyapunov_value, step_plant, PlantState};
use crate::coordination::{advance_availability, asynchronous_subgradient_mask, exchange_duals, DualMailbox};
use crate::energy::{draw_harvest, step_battery, BatteryState, EnergyAccounting, EnergyError, CAUSALITY_TOL};
use crate::rng::{node_streams, StreamKind, StreamRng};
use crate::scheduler::{
    apply_subgradient, compute_primal, init_duals, subgradient, NodeDualState, NodePrimal, SchedulerParams,
};
use crate::telemetry::{Accumulator, SlotRecord, Summary, TelemetrySink};

/// Largest tolerated gap between `β_i` and `ε·(b_max − b_i)`.
pub const MIRROR_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("slot {slot}, node {}: access probability {spend} exceeds battery charge {charge}", .node + 1)]
    Causality { slot: u64, node: usize, spend: f64, charge: f64 },
    #[error("slot {slot}, node {}: plant state is no longer finite", .node + 1)]
    NonFinite { slot: u64, node: usize },
    #[error("slot {slot}, node {}: beta {beta} drifted from eps*(b_max - b) = {expected}", .node + 1)]
    Mirror { slot: u64, node: usize, beta: f64, expected: f64 },
    #[error("telemetry: {0}")]
    Telemetry(#[from] io::Error),
}

impl SimError {
    /// Whether the run stopped because a runtime invariant broke.
    pub fn is_invariant(&self) -> bool {
        matches!(
            self,
            SimError::Causality { .. } | SimError::NonFinite { .. } | SimError::Mirror { .. }
        )
    }
}

struct Streams {
    channel: Vec<StreamRng>,
    harvest: Vec<StreamRng>,
    transmission: Vec<StreamRng>,
    link: Vec<StreamRng>,
    noise: Vec<StreamRng>,
    availability: Vec<StreamRng>,
}

impl Streams {
    fn new(seed: u64, m: usize) -> Self {
        Self {
            channel: node_streams(seed, StreamKind::Channel, m),
            harvest: node_streams(seed, StreamKind::Harvest, m),
            transmission: node_streams(seed, StreamKind::Transmission, m),
            link: node_streams(seed, StreamKind::Link, m),
            noise: node_streams(seed, StreamKind::PlantNoise, m),
            availability: node_streams(seed, StreamKind::Availability, m),
        }
    }
}

pub struct Simulation {
    config: SimConfig,
    params: SchedulerParams,
    noise_factors: Vec<DMatrix<f64>>,
    plants: Vec<PlantState>,
    batteries: Vec<BatteryState>,
    duals: Vec<NodeDualState>,
    mailbox: DualMailbox,
    streams: Streams,
    acc: Accumulator,
    bounds: Vec<f64>,
    slot: u64,
}

impl Simulation {
    pub fn new(config: SimConfig) -> Result<Self, SimError> {
        let params = config.scheduler_params()?;
        let m = config.node_count();
        let batteries: Vec<BatteryState> = config.nodes.iter().map(|n| n.battery).collect();
        let duals = batteries
            .iter()
            .enumerate()
            .map(|(i, b)| init_duals(i, b, &params))
            .collect();
        let charges: Vec<f64> = batteries.iter().map(|b| b.charge()).collect();
        Ok(Self {
            noise_factors: config.nodes.iter().map(|n| n.plant.noise_factor()).collect(),
            plants: config.nodes.iter().map(|n| PlantState::new(n.x0.clone())).collect(),
            bounds: config.nodes.iter().map(|n| control_performance_bound(&n.plant)).collect(),
            mailbox: DualMailbox::new(m),
            streams: Streams::new(config.seed, m),
            acc: Accumulator::new(m, &charges),
            batteries,
            duals,
            params,
            config,
            slot: 0,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn params(&self) -> &SchedulerParams {
        &self.params
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }

    pub fn duals(&self) -> &[NodeDualState] {
        &self.duals
    }

    pub fn mailbox(&self) -> &DualMailbox {
        &self.mailbox
    }

    pub fn batteries(&self) -> &[BatteryState] {
        &self.batteries
    }

    pub fn plants(&self) -> &[PlantState] {
        &self.plants
    }

    pub fn is_finished(&self) -> bool {
        self.slot >= self.config.horizon
    }

    pub fn summary(&self) -> Summary {
        self.acc
            .summary(self.config.seed, self.config.horizon, self.params.required(), &self.bounds)
    }

    /// Runs the remaining slots, feeding `sink`. The sink is finished even
    /// when the run aborts, so partial telemetry is flushed.
    pub fn run<S: TelemetrySink>(mut self, mut sink: S) -> Result<Summary, SimError> {
        let result = self.run_inner(&mut sink);
        let finished = sink.finish();
        result?;
        finished?;
        Ok(self.summary())
    }

    fn run_inner<S: TelemetrySink>(&mut self, sink: &mut S) -> Result<(), SimError> {
        while !self.is_finished() {
            let records = self.step()?;
            sink.record_slot(&records)?;
        }
        Ok(())
    }

    fn parallel(&self) -> bool {
        self.config.execution == ExecutionMode::Parallel
    }

    /// Advances one slot and returns its records in node order.
    pub fn step(&mut self) -> Result<Vec<SlotRecord>, SimError> {
        let t = self.slot;
        let m = self.config.node_count();
        let eps = self.params.step_size();
        let fluid = self.config.accounting == EnergyAccounting::Fluid;

        // (1) channel states and harvests
        let links: Vec<LinkState> = self
            .streams
            .channel
            .iter_mut()
            .map(|r| draw_link(&self.config.channel, r))
            .collect();
        let harvest: Vec<f64> = self
            .config
            .nodes
            .iter()
            .zip(self.streams.harvest.iter_mut())
            .map(|(n, r)| draw_harvest(&n.harvest, r))
            .collect();

        // (2) primal decisions
        let params = &self.params;
        let decide = |(d, l): (&NodeDualState, &LinkState)| compute_primal(d, l.q, params);
        let mut primals: Vec<NodePrimal> = if self.parallel() {
            self.duals.par_iter().zip(links.par_iter()).map(decide).collect()
        } else {
            self.duals.iter().zip(links.iter()).map(decide).collect()
        };
        if self.config.policy == Policy::AlwaysTransmit {
            for (p, b) in primals.iter_mut().zip(&self.batteries) {
                p.z = b.charge().min(1.0);
            }
        }
        if fluid {
            for (i, (p, b)) in primals.iter().zip(&self.batteries).enumerate() {
                if p.z > b.charge() + CAUSALITY_TOL {
                    self.acc.violations.causality += 1;
                    return Err(SimError::Causality {
                        slot: t,
                        node: i,
                        spend: p.z,
                        charge: b.charge(),
                    });
                }
            }
        }

        // (3) access draws
        let transmitted: Vec<bool> = primals
            .iter()
            .zip(self.streams.transmission.iter_mut())
            .zip(&self.batteries)
            .map(|((p, r), b)| {
                let draw = r.random::<f64>() < p.z;
                draw && (fluid || b.charge() >= 1.0)
            })
            .collect();

        // (4) collisions and decoding
        let outcome = resolve_slot(&self.config.channel, &links, &transmitted, &mut self.streams.link);

        // Snapshot start-of-slot values for telemetry.
        let z: Vec<f64> = primals.iter().map(|p| p.z).collect();
        let q: Vec<f64> = links.iter().map(|l| l.q).collect();
        let qc = self.config.channel.collision_probability();
        let mut records: Vec<SlotRecord> = (0..m)
            .map(|i| {
                let plant = &self.plants[i];
                let d = &self.duals[i];
                let o = &outcome.nodes[i];
                SlotRecord {
                    slot: t,
                    node: i,
                    x: plant.x.iter().copied().collect(),
                    v: lyapunov_value(&self.config.nodes[i].plant, plant),
                    z: z[i],
                    transmitted: o.transmitted,
                    collided: o.collided,
                    gamma: o.gamma,
                    h: o.h,
                    q: o.q,
                    b: self.batteries[i].charge(),
                    e: harvest[i],
                    phi: d.phi,
                    nu: d.nu.clone(),
                    beta: d.beta,
                    nu_stale: d.nu_remote.clone(),
                    staleness: (0..m)
                        .filter(|&j| j != i)
                        .map(|j| self.mailbox.staleness(i, j, t))
                        .max()
                        .unwrap_or(0),
                    p_rx: reception_probability(&z, &q, qc, i),
                    running: Default::default(),
                }
            })
            .collect();

        // (5) plants
        for (i, plant) in self.plants.iter_mut().enumerate() {
            let model = &self.config.nodes[i].plant;
            let rng = &mut self.streams.noise[i];
            let xi = DVector::from_fn(model.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
            let noise = &self.noise_factors[i] * xi;
            let next = step_plant(model, plant, outcome.nodes[i].gamma, &noise);
            match next {
                Ok(s) if s.x.iter().all(|v| v.is_finite()) => *plant = s,
                _ => {
                    self.acc.violations.non_finite += 1;
                    return Err(SimError::NonFinite { slot: t, node: i });
                }
            }
        }

        // (6) batteries
        for (i, battery) in self.batteries.iter_mut().enumerate() {
            let spend = if fluid {
                z[i]
            } else {
                f64::from(u8::from(transmitted[i]))
            };
            *battery = step_battery(battery, spend, harvest[i]).map_err(|e| match e {
                EnergyError::Causality { spend, charge } => {
                    self.acc.violations.causality += 1;
                    SimError::Causality {
                        slot: t,
                        node: i,
                        spend,
                        charge,
                    }
                }
                other => unreachable!("battery step failed: {other}"),
            })?;
        }

        // (7) dual updates
        let availability = advance_availability(
            &self.config.availability,
            t,
            &mut self.streams.availability,
            &transmitted,
            &self.mailbox,
        );
        let always_on = self.config.availability.is_always_on();
        let update = |(d, (p, (l, e))): (&mut NodeDualState, (&NodePrimal, (&LinkState, &f64)))| {
            let mut g = subgradient(d, p, l.q, *e, params);
            if !always_on {
                asynchronous_subgradient_mask(&availability, d.node, &mut g);
            }
            apply_subgradient(d, &g, params);
        };
        let inputs = primals.iter().zip(links.iter().zip(harvest.iter()));
        if self.parallel() {
            let inputs: Vec<_> = inputs.collect();
            self.duals.par_iter_mut().zip(inputs).for_each(update);
        } else {
            self.duals.iter_mut().zip(inputs).for_each(update);
        }

        for i in 0..m {
            let d = &self.duals[i];
            let mut over = false;
            let mut reset = false;
            for j in 0..m {
                if d.nu[j] > self.params.dual_ceiling(i, j) + CAUSALITY_TOL {
                    over = true;
                }
                if primals[i].y[j] > 0.0 && d.nu[j] == 0.0 {
                    reset = true;
                }
            }
            let node = &mut self.acc.nodes[i];
            node.y_activations += u64::from(primals[i].y.iter().any(|&y| y > 0.0));
            node.dual_resets += u64::from(reset);
            self.acc.violations.dual_cap += u64::from(over);
            if fluid {
                let b = &self.batteries[i];
                let expected = eps * (b.capacity() - b.charge());
                if (d.beta - expected).abs() > MIRROR_TOL {
                    self.acc.violations.mirror += 1;
                    return Err(SimError::Mirror {
                        slot: t,
                        node: i,
                        beta: d.beta,
                        expected,
                    });
                }
            }
        }

        // (8) exchange
        exchange_duals(&mut self.mailbox, &availability, &mut self.duals, t);

        // (9) telemetry
        for r in records.iter_mut() {
            r.running = self.acc.add(r, self.batteries[r.node].charge());
        }
        self.acc.end_slot();
        self.slot += 1;
        Ok(records)
    }
}

/// Runs `config` to completion, collecting every record.
pub fn run(config: SimConfig) -> Result<(Vec<SlotRecord>, Summary), SimError> {
    let mut records = Vec::new();
    let summary = Simulation::new(config)?.run(&mut records)?;
    Ok((records, summary))
}

/// Runs `config` keeping only the summary.
pub fn run_summary(config: SimConfig) -> Result<Summary, SimError> {
    Simulation::new(config)?.run(())
}
