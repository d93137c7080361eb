//! Node availability, bounded staleness, and dual exchange between nodes.
//!
//! A node `j` that is available in slot `t` (`t ∈ T^j`) publishes its row
//! `ν_j·` at the end of the slot; every node `i` that is listening copies
//! `ν_ji` into its mailbox. Every generator forces an exchange when a copy
//! would otherwise grow older than `B` slots, so the staleness bound holds
//! by construction.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scheduler::{NodeDualState, NodeSubgradient};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AvailabilityError {
    #[error("maximum staleness must be at least 1")]
    Staleness,
    #[error("availability probability must lie in (0, 1], got {0}")]
    Probability(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum AvailabilityMode {
    AlwaysOn,
    /// Each node is independently available with `probability`.
    Random { probability: f64 },
    /// Duals ride on measurement packets: a node publishes exactly when it
    /// transmits, and always listens.
    Piggyback,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AvailabilitySchedule {
    mode: AvailabilityMode,
    max_staleness: u64,
}

impl AvailabilitySchedule {
    pub fn new(mode: AvailabilityMode, max_staleness: u64) -> Result<Self, AvailabilityError> {
        if max_staleness == 0 {
            return Err(AvailabilityError::Staleness);
        }
        if let AvailabilityMode::Random { probability } = mode {
            if !(probability > 0.0 && probability <= 1.0) {
                return Err(AvailabilityError::Probability(probability));
            }
        }
        Ok(Self { mode, max_staleness })
    }

    pub fn always_on() -> Self {
        Self {
            mode: AvailabilityMode::AlwaysOn,
            max_staleness: 1,
        }
    }

    pub fn mode(&self) -> AvailabilityMode {
        self.mode
    }

    pub fn max_staleness(&self) -> u64 {
        self.max_staleness
    }

    pub fn is_always_on(&self) -> bool {
        self.mode == AvailabilityMode::AlwaysOn
    }
}

/// Who publishes and who listens in one slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Availability {
    pub sends: Vec<bool>,
    pub receives: Vec<bool>,
    /// Nodes made available only to respect the staleness bound.
    pub forced: Vec<bool>,
}

impl Availability {
    pub fn all(m: usize) -> Self {
        Self {
            sends: vec![true; m],
            receives: vec![true; m],
            forced: vec![false; m],
        }
    }

    /// `t ∈ T^j`.
    pub fn contains(&self, j: usize) -> bool {
        self.sends[j]
    }

    /// Whether node `i` hears node `j` this slot.
    pub fn delivers(&self, i: usize, j: usize) -> bool {
        i != j && self.sends[j] && self.receives[i]
    }
}

/// Node `i`'s latest copies of every `ν_ji`.
///
/// `last_slot(i, j)` is the slot at whose end the copy was taken; the initial
/// all-zero multipliers count as taken at slot `-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualMailbox {
    m: usize,
    values: Vec<f64>,
    last_slot: Vec<i64>,
}

impl DualMailbox {
    pub fn new(m: usize) -> Self {
        Self {
            m,
            values: vec![0.0; m * m],
            last_slot: vec![-1; m * m],
        }
    }

    pub fn nodes(&self) -> usize {
        self.m
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.m + j]
    }

    pub fn last_slot(&self, i: usize, j: usize) -> i64 {
        self.last_slot[i * self.m + j]
    }

    /// Age in slots of node `i`'s copy of `ν_ji` when used during slot `t`.
    pub fn staleness(&self, i: usize, j: usize, t: u64) -> u64 {
        (t as i64 - self.last_slot(i, j)) as u64
    }

    /// Largest staleness over all ordered pairs at slot `t`.
    pub fn max_staleness(&self, t: u64) -> u64 {
        let mut worst = 0;
        for i in 0..self.m {
            for j in 0..self.m {
                if i != j {
                    worst = worst.max(self.staleness(i, j, t));
                }
            }
        }
        worst
    }

    fn must_refresh(&self, j: usize, t: u64, bound: u64) -> bool {
        (0..self.m).any(|i| i != j && self.staleness(i, j, t) >= bound)
    }
}

/// Availability sets for slot `t`.
///
/// `rngs[i]` is node `i`'s availability stream (consumed only in random
/// mode); `transmitted` are this slot's access draws.
pub fn advance_availability<R: Rng>(
    schedule: &AvailabilitySchedule,
    t: u64,
    rngs: &mut [R],
    transmitted: &[bool],
    mailbox: &DualMailbox,
) -> Availability {
    let m = mailbox.nodes();
    let bound = schedule.max_staleness;
    match schedule.mode {
        AvailabilityMode::AlwaysOn => Availability::all(m),
        AvailabilityMode::Random { probability } => {
            let mut up: Vec<bool> = rngs.iter_mut().map(|r| r.random_bool(probability)).collect();
            let mut forced = vec![false; m];
            for i in 0..m {
                for j in 0..m {
                    if i != j && mailbox.staleness(i, j, t) >= bound && !(up[i] && up[j]) {
                        for k in [i, j] {
                            if !up[k] {
                                up[k] = true;
                                forced[k] = true;
                            }
                        }
                    }
                }
            }
            Availability {
                sends: up.clone(),
                receives: up,
                forced,
            }
        }
        AvailabilityMode::Piggyback => {
            let mut sends = transmitted.to_vec();
            let mut forced = vec![false; m];
            for j in 0..m {
                if !sends[j] && mailbox.must_refresh(j, t, bound) {
                    sends[j] = true;
                    forced[j] = true;
                }
            }
            Availability {
                sends,
                receives: vec![true; m],
                forced,
            }
        }
    }
}

/// Copies `ν_ji` into mailbox `(i, j)` and into node `i`'s stale view for
/// every pair delivered this slot. Call after the slot's dual updates.
pub fn exchange_duals(mailbox: &mut DualMailbox, availability: &Availability, duals: &mut [NodeDualState], t: u64) {
    let m = mailbox.m;
    let published: Vec<Vec<f64>> = duals.iter().map(|d| d.nu.clone()).collect();
    for (i, node) in duals.iter_mut().enumerate() {
        for j in 0..m {
            if availability.delivers(i, j) {
                let v = published[j][i];
                mailbox.values[i * m + j] = v;
                mailbox.last_slot[i * m + j] = t as i64;
                node.nu_remote[j] = v;
            }
        }
    }
}

/// Zeroes the `ν_ij` (`j ≠ i`) components whose peer `j` is unavailable.
///
/// Only the cross terms depend on another node; `φ_i`, `ν_ii` and `β_i`
/// always take their step.
pub fn asynchronous_subgradient_mask(availability: &Availability, node: usize, step: &mut NodeSubgradient) {
    for (j, g) in step.nu.iter_mut().enumerate() {
        if j != node && !availability.contains(j) {
            *g = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{node_streams, StreamKind};

    fn node(i: usize, nu: Vec<f64>) -> NodeDualState {
        let m = nu.len();
        NodeDualState {
            node: i,
            phi: 0.0,
            nu,
            nu_remote: vec![0.0; m],
            beta: 0.0,
        }
    }

    #[test]
    fn always_on_everyone_every_slot() {
        let s = AvailabilitySchedule::always_on();
        let mut mb = DualMailbox::new(3);
        let mut rngs = node_streams(1, StreamKind::Availability, 3);
        let mut duals: Vec<_> = (0..3).map(|i| node(i, vec![i as f64; 3])).collect();
        for t in 0..50 {
            let a = advance_availability(&s, t, &mut rngs, &[false; 3], &mb);
            assert_eq!(a, Availability::all(3));
            assert!(mb.max_staleness(t) <= 1);
            exchange_duals(&mut mb, &a, &mut duals, t);
        }
    }

    #[test]
    fn random_mode_respects_bound() {
        let s = AvailabilitySchedule::new(AvailabilityMode::Random { probability: 0.5 }, 10).unwrap();
        let m = 3;
        let mut mb = DualMailbox::new(m);
        let mut rngs = node_streams(4, StreamKind::Availability, m);
        let mut duals: Vec<_> = (0..m).map(|i| node(i, vec![0.0; m])).collect();
        let mut worst = 0;
        let mut forced = 0;
        for t in 0..10_000 {
            worst = worst.max(mb.max_staleness(t));
            let a = advance_availability(&s, t, &mut rngs, &[false; 3], &mb);
            forced += a.forced.iter().filter(|&&f| f).count();
            exchange_duals(&mut mb, &a, &mut duals, t);
        }
        assert!(worst <= 10, "{worst}");
        assert!(worst > 1);
        assert!(forced > 0);
    }

    #[test]
    fn piggyback_forces_refresh_of_silent_node() {
        let s = AvailabilitySchedule::new(AvailabilityMode::Piggyback, 10).unwrap();
        let mut mb = DualMailbox::new(2);
        let mut rngs = node_streams(4, StreamKind::Availability, 2);
        let mut duals = vec![node(0, vec![0.0, 0.0]), node(1, vec![7.0, 0.0])];
        // exchange once at slot 0 with node 1 transmitting
        let a = advance_availability(&s, 0, &mut rngs, &[true, true], &mb);
        exchange_duals(&mut mb, &a, &mut duals, 0);
        assert_eq!(mb.last_slot(0, 1), 0);
        let mut forced_at = None;
        for t in 1..=15 {
            let a = advance_availability(&s, t, &mut rngs, &[true, false], &mb);
            if a.forced[1] {
                forced_at.get_or_insert((t, mb.staleness(0, 1, t)));
            }
            exchange_duals(&mut mb, &a, &mut duals, t);
        }
        assert_eq!(forced_at, Some((10, 10)));
        assert_eq!(duals[0].nu_remote[1], 7.0);
    }

    #[test]
    fn piggyback_publishes_on_transmit() {
        let s = AvailabilitySchedule::new(AvailabilityMode::Piggyback, 10).unwrap();
        let mb = DualMailbox::new(2);
        let mut rngs = node_streams(4, StreamKind::Availability, 2);
        let a = advance_availability(&s, 0, &mut rngs, &[false, true], &mb);
        assert_eq!(a.sends, vec![false, true]);
        assert!(a.delivers(0, 1));
        assert!(!a.delivers(1, 0));
    }

    #[test]
    fn unavailable_sender_leaves_mailbox_alone() {
        let mut mb = DualMailbox::new(2);
        let mut duals = vec![node(0, vec![1.0, 2.0]), node(1, vec![3.0, 4.0])];
        exchange_duals(&mut mb, &Availability::all(2), &mut duals, 0);
        assert_eq!(mb.value(0, 1), 3.0);
        assert_eq!(mb.value(1, 0), 2.0);
        assert_eq!(duals[1].nu_remote, vec![2.0, 0.0]);

        duals[1].nu[0] = 9.0;
        duals[0].nu[1] = 8.0;
        let a = Availability {
            sends: vec![true, false],
            receives: vec![true, true],
            forced: vec![false, false],
        };
        exchange_duals(&mut mb, &a, &mut duals, 1);
        assert_eq!(mb.value(0, 1), 3.0);
        assert_eq!(mb.last_slot(0, 1), 0);
        assert_eq!(mb.value(1, 0), 8.0);
        assert_eq!(mb.last_slot(1, 0), 1);
    }

    #[test]
    fn alternating_availability_staleness() {
        let mut mb = DualMailbox::new(2);
        let mut duals = vec![node(0, vec![0.0; 2]), node(1, vec![0.0; 2])];
        let off = Availability {
            sends: vec![false, false],
            receives: vec![true, true],
            forced: vec![false, false],
        };
        let mut seen = Vec::new();
        for t in 0..8 {
            seen.push(mb.staleness(0, 1, t));
            let a = if t % 2 == 0 { Availability::all(2) } else { off.clone() };
            exchange_duals(&mut mb, &a, &mut duals, t);
        }
        assert_eq!(seen, vec![1, 1, 2, 1, 2, 1, 2, 1]);
    }

    #[test]
    fn mask_behaviour() {
        let raw = NodeSubgradient {
            phi: 1.0,
            nu: vec![0.5, -0.25, 0.75],
            beta: 0.1,
        };
        let mut full = raw.clone();
        asynchronous_subgradient_mask(&Availability::all(3), 0, &mut full);
        assert_eq!(full, raw);

        let a = Availability {
            sends: vec![false, false, true],
            receives: vec![true; 3],
            forced: vec![false; 3],
        };
        let mut masked = raw.clone();
        asynchronous_subgradient_mask(&a, 0, &mut masked);
        assert_eq!(masked.nu, vec![0.5, 0.0, 0.75]);
        assert_eq!(masked.phi, 1.0);
        assert_eq!(masked.beta, 0.1);
    }

    #[test]
    fn schedule_validation() {
        assert_eq!(
            AvailabilitySchedule::new(AvailabilityMode::Piggyback, 0),
            Err(AvailabilityError::Staleness)
        );
        assert!(AvailabilitySchedule::new(AvailabilityMode::Random { probability: 0.0 }, 5).is_err());
    }
}
