//! Per-slot records, running averages, run summaries, and CSV writers.

use std::io::{self, Write};

use serde::Serialize;

/// Running averages over slots `0..=t`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunningAverages {
    pub ctrl_perf: f64,
    pub p_tx: f64,
    pub p_rx: f64,
    pub gamma_rate: f64,
    pub energy_balance: f64,
    pub nu_mean: Vec<f64>,
}

/// What one node saw and did in one slot. State and multipliers are the
/// values at the start of the slot, before any update.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlotRecord {
    pub slot: u64,
    pub node: usize,
    pub x: Vec<f64>,
    pub v: f64,
    pub z: f64,
    pub transmitted: bool,
    pub collided: bool,
    pub gamma: bool,
    pub h: f64,
    pub q: f64,
    pub b: f64,
    pub e: f64,
    pub phi: f64,
    pub nu: Vec<f64>,
    pub beta: f64,
    /// Copies of `ν_ji` used this slot.
    pub nu_stale: Vec<f64>,
    /// Age of the oldest of those copies.
    pub staleness: u64,
    /// `q_i·z_i·∏_{j≠i}(1 − q_c·z_j)` for this slot.
    pub p_rx: f64,
    pub running: RunningAverages,
}

/// Receives every slot's records, in node order, as the run progresses.
pub trait TelemetrySink {
    fn record_slot(&mut self, records: &[SlotRecord]) -> io::Result<()>;

    fn finish(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// Discards everything.
impl TelemetrySink for () {
    fn record_slot(&mut self, _: &[SlotRecord]) -> io::Result<()> {
        Ok(())
    }
}

impl TelemetrySink for Vec<SlotRecord> {
    fn record_slot(&mut self, records: &[SlotRecord]) -> io::Result<()> {
        self.extend_from_slice(records);
        Ok(())
    }
}

impl<S: TelemetrySink + ?Sized> TelemetrySink for &mut S {
    fn record_slot(&mut self, records: &[SlotRecord]) -> io::Result<()> {
        (**self).record_slot(records)
    }

    fn finish(&mut self) -> io::Result<()> {
        (**self).finish()
    }
}

/// Counts of runtime invariant breaches.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Violations {
    pub causality: u64,
    /// Slots in which some `ν_ij` exceeded `ν̄_ij + ε`.
    pub dual_cap: u64,
    pub mirror: u64,
    pub non_finite: u64,
}

impl Violations {
    pub fn total(&self) -> u64 {
        self.causality + self.dual_cap + self.mirror + self.non_finite
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeSummary {
    pub node: usize,
    pub p_required: f64,
    pub p_tx: f64,
    pub p_rx: f64,
    pub p_rx_empirical: f64,
    pub ctrl_perf: f64,
    pub ctrl_bound: f64,
    pub energy_balance: f64,
    pub nu_max: Vec<f64>,
    pub nu_mean: Vec<f64>,
    pub transmissions: u64,
    pub collisions: u64,
    /// Slots in which the auxiliary variable `y_ij` was active for some `j`.
    pub y_activations: u64,
    /// Slots in which some `ν_ij` was above its cap and returned to zero.
    pub dual_resets: u64,
    pub final_battery: f64,
    pub min_battery: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub seed: u64,
    pub horizon: u64,
    pub slots: u64,
    pub nodes: Vec<NodeSummary>,
    pub violations: Violations,
    pub max_staleness: u64,
}

/// Streaming accumulator behind [`SlotRecord::running`] and [`Summary`].
#[derive(Debug, Clone)]
pub(crate) struct Accumulator {
    pub slots: u64,
    pub nodes: Vec<NodeAccumulator>,
    pub violations: Violations,
    pub max_staleness: u64,
}

#[derive(Debug, Clone)]
pub(crate) struct NodeAccumulator {
    sum_v: f64,
    sum_z: f64,
    sum_rx: f64,
    sum_gamma: u64,
    sum_balance: f64,
    sum_nu: Vec<f64>,
    nu_max: Vec<f64>,
    transmissions: u64,
    collisions: u64,
    pub y_activations: u64,
    pub dual_resets: u64,
    final_battery: f64,
    min_battery: f64,
}

impl Accumulator {
    pub fn new(m: usize, batteries: &[f64]) -> Self {
        Self {
            slots: 0,
            nodes: batteries
                .iter()
                .map(|&b| NodeAccumulator {
                    sum_v: 0.0,
                    sum_z: 0.0,
                    sum_rx: 0.0,
                    sum_gamma: 0,
                    sum_balance: 0.0,
                    sum_nu: vec![0.0; m],
                    nu_max: vec![0.0; m],
                    transmissions: 0,
                    collisions: 0,
                    y_activations: 0,
                    dual_resets: 0,
                    final_battery: b,
                    min_battery: b,
                })
                .collect(),
            violations: Violations::default(),
            max_staleness: 0,
        }
    }

    /// Folds in one node's slot and returns the running averages after it.
    /// Call once per node per slot, then [`Accumulator::end_slot`].
    pub fn add(&mut self, r: &SlotRecord, battery_after: f64) -> RunningAverages {
        let a = &mut self.nodes[r.node];
        a.sum_v += r.v;
        a.sum_z += r.z;
        a.sum_rx += r.p_rx;
        a.sum_gamma += u64::from(r.gamma);
        a.sum_balance += r.e - r.z;
        for (j, &nu) in r.nu.iter().enumerate() {
            a.sum_nu[j] += nu;
            a.nu_max[j] = a.nu_max[j].max(nu);
        }
        a.transmissions += u64::from(r.transmitted);
        a.collisions += u64::from(r.collided);
        a.final_battery = battery_after;
        a.min_battery = a.min_battery.min(battery_after);
        self.max_staleness = self.max_staleness.max(r.staleness);
        let n = (self.slots + 1) as f64;
        RunningAverages {
            ctrl_perf: a.sum_v / n,
            p_tx: a.sum_z / n,
            p_rx: a.sum_rx / n,
            gamma_rate: a.sum_gamma as f64 / n,
            energy_balance: a.sum_balance / n,
            nu_mean: a.sum_nu.iter().map(|s| s / n).collect(),
        }
    }

    pub fn end_slot(&mut self) {
        self.slots += 1;
    }

    pub fn summary(&self, seed: u64, horizon: u64, required: &[f64], bounds: &[f64]) -> Summary {
        let nodes = if self.slots == 0 {
            Vec::new()
        } else {
            let n = self.slots as f64;
            self.nodes
                .iter()
                .enumerate()
                .map(|(i, a)| NodeSummary {
                    node: i,
                    p_required: required[i],
                    p_tx: a.sum_z / n,
                    p_rx: a.sum_rx / n,
                    p_rx_empirical: a.sum_gamma as f64 / n,
                    ctrl_perf: a.sum_v / n,
                    ctrl_bound: bounds[i],
                    energy_balance: a.sum_balance / n,
                    nu_max: a.nu_max.clone(),
                    nu_mean: a.sum_nu.iter().map(|s| s / n).collect(),
                    transmissions: a.transmissions,
                    collisions: a.collisions,
                    y_activations: a.y_activations,
                    dual_resets: a.dual_resets,
                    final_battery: a.final_battery,
                    min_battery: a.min_battery,
                })
                .collect()
        };
        Summary {
            seed,
            horizon,
            slots: self.slots,
            nodes,
            violations: self.violations.clone(),
            max_staleness: self.max_staleness,
        }
    }
}

fn bit(b: bool) -> u8 {
    u8::from(b)
}

/// Streams `slots.csv`: `slot,node,x_1..x_n,V,z,tx,gamma,h,q,b,e,phi,nu_1..nu_M,beta`.
///
/// Plants of lower dimension than `n` leave the extra state columns empty.
pub struct SlotsCsv<W: Write> {
    out: W,
    state_dim: usize,
}

impl<W: Write> SlotsCsv<W> {
    pub fn new(mut out: W, state_dim: usize, nodes: usize) -> io::Result<Self> {
        let mut cols = vec!["slot".to_string(), "node".to_string()];
        cols.extend((1..=state_dim).map(|k| format!("x_{k}")));
        cols.extend(["V", "z", "tx", "gamma", "h", "q", "b", "e", "phi"].map(String::from));
        cols.extend((1..=nodes).map(|k| format!("nu_{k}")));
        cols.push("beta".into());
        writeln!(out, "{}", cols.join(","))?;
        Ok(Self { out, state_dim })
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write> TelemetrySink for SlotsCsv<W> {
    fn record_slot(&mut self, records: &[SlotRecord]) -> io::Result<()> {
        for r in records {
            write!(self.out, "{},{}", r.slot, r.node + 1)?;
            for k in 0..self.state_dim {
                match r.x.get(k) {
                    Some(x) => write!(self.out, ",{x}")?,
                    None => write!(self.out, ",")?,
                }
            }
            write!(
                self.out,
                ",{},{},{},{},{},{},{},{},{}",
                r.v,
                r.z,
                bit(r.transmitted),
                bit(r.gamma),
                r.h,
                r.q,
                r.b,
                r.e,
                r.phi
            )?;
            for nu in &r.nu {
                write!(self.out, ",{nu}")?;
            }
            writeln!(self.out, ",{}", r.beta)?;
        }
        Ok(())
    }

    fn finish(&mut self) -> io::Result<()> {
        self.out.flush()
    }
}

/// One row per node with the scalar summary fields.
pub fn write_summary_csv<W: Write>(summary: &Summary, mut out: W) -> io::Result<()> {
    writeln!(
        out,
        "node,p_required,p_tx,p_rx,p_rx_empirical,ctrl_perf,ctrl_bound,energy_balance,nu_max,\
         transmissions,collisions,y_activations,dual_resets,final_battery,min_battery"
    )?;
    for n in &summary.nodes {
        let nu_max = n.nu_max.iter().cloned().fold(0.0, f64::max);
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            n.node + 1,
            n.p_required,
            n.p_tx,
            n.p_rx,
            n.p_rx_empirical,
            n.ctrl_perf,
            n.ctrl_bound,
            n.energy_balance,
            nu_max,
            n.transmissions,
            n.collisions,
            n.y_activations,
            n.dual_resets,
            n.final_battery,
            n.min_battery
        )?;
    }
    out.flush()
}
