//! Per-node primal-dual random access policy.
//!
//! Node `i` keeps its own multipliers `φ_i`, `β_i` and the row `ν_i·`.
//! Every slot it
//!
//! 1. picks the access probability `z_i = [(ν_ii·q_i − q_c·Σ_{j≠i} ν_ji − β_i)/2]₀¹`,
//!    reading the remote `ν_ji` from its (possibly stale) copies;
//! 2. sets the auxiliary `s_ii`, `s_ij` and the threshold variables `y_ij`;
//! 3. takes a projected stochastic subgradient step on its own multipliers.
//!
//! With `ȳ_ij ≥ (ν̄_ij + 2ε)/ε` every `ν_ij` stays below `ν̄_ij + ε`: once it
//! crosses `ν̄_ij` the threshold fires and the next step projects it to zero.
//! With additionally `b_max ≥ ν̄_ii/ε + 1`, `β_i = ε(b_max − b_i)` keeps
//! `z_i ≤ ε·b_i/2`, hence `z_i ≤ b_i` whenever `ε ≤ 2`.

use serde::Serialize;
use thiserror::Error;

use crate::energy::BatteryState;

pub const DEFAULT_S_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchedulerError {
    #[error("step size must be positive and finite, got {0}")]
    StepSize(f64),
    #[error("{name} must be {m}x{m}")]
    Shape { name: &'static str, m: usize },
    #[error("{name}[{i}][{j}] = {value} must be positive and finite")]
    Cap {
        name: &'static str,
        i: usize,
        j: usize,
        value: f64,
    },
    #[error("required probability p[{i}] = {value} must lie in [0, 1)")]
    Required { i: usize, value: f64 },
    #[error("collision probability must lie in [0, 1], got {0}")]
    CollisionProbability(f64),
    #[error("log floor must lie in (0, 0.01], got {0}")]
    Floor(f64),
    #[error("need at least one node")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchedulerParams {
    step_size: f64,
    nu_cap: Vec<Vec<f64>>,
    y_cap: Vec<Vec<f64>>,
    required: Vec<f64>,
    collision_probability: f64,
    s_floor: f64,
}

impl SchedulerParams {
    pub fn new(
        step_size: f64,
        nu_cap: Vec<Vec<f64>>,
        y_cap: Vec<Vec<f64>>,
        required: Vec<f64>,
        collision_probability: f64,
        s_floor: f64,
    ) -> Result<Self, SchedulerError> {
        let m = required.len();
        if m == 0 {
            return Err(SchedulerError::Empty);
        }
        if !(step_size.is_finite() && step_size > 0.0) {
            return Err(SchedulerError::StepSize(step_size));
        }
        for (name, caps) in [("nu_cap", &nu_cap), ("y_cap", &y_cap)] {
            if caps.len() != m || caps.iter().any(|row| row.len() != m) {
                return Err(SchedulerError::Shape { name, m });
            }
            for (i, row) in caps.iter().enumerate() {
                for (j, &value) in row.iter().enumerate() {
                    if !(value.is_finite() && value > 0.0) {
                        return Err(SchedulerError::Cap { name, i, j, value });
                    }
                }
            }
        }
        for (i, &value) in required.iter().enumerate() {
            if !(0.0..1.0).contains(&value) {
                return Err(SchedulerError::Required { i, value });
            }
        }
        if !(0.0..=1.0).contains(&collision_probability) {
            return Err(SchedulerError::CollisionProbability(collision_probability));
        }
        if !(s_floor > 0.0 && s_floor <= 0.01) {
            return Err(SchedulerError::Floor(s_floor));
        }
        Ok(Self {
            step_size,
            nu_cap,
            y_cap,
            required,
            collision_probability,
            s_floor,
        })
    }

    /// Same caps for every pair.
    pub fn uniform(
        step_size: f64,
        nu_cap: f64,
        y_cap: f64,
        required: Vec<f64>,
        collision_probability: f64,
    ) -> Result<Self, SchedulerError> {
        let m = required.len();
        Self::new(
            step_size,
            vec![vec![nu_cap; m]; m],
            vec![vec![y_cap; m]; m],
            required,
            collision_probability,
            DEFAULT_S_FLOOR,
        )
    }

    pub fn nodes(&self) -> usize {
        self.required.len()
    }

    pub fn step_size(&self) -> f64 {
        self.step_size
    }

    pub fn nu_cap(&self, i: usize, j: usize) -> f64 {
        self.nu_cap[i][j]
    }

    pub fn y_cap(&self, i: usize, j: usize) -> f64 {
        self.y_cap[i][j]
    }

    pub fn required(&self) -> &[f64] {
        &self.required
    }

    pub fn collision_probability(&self) -> f64 {
        self.collision_probability
    }

    pub fn s_floor(&self) -> f64 {
        self.s_floor
    }

    /// Largest value any `ν_ij` may reach: `ν̄_ij + ε`.
    pub fn dual_ceiling(&self, i: usize, j: usize) -> f64 {
        self.nu_cap[i][j] + self.step_size
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SizingRule {
    /// `ȳ_ij ≥ (ν̄_ij + 2ε)/ε`
    AuxiliaryCap,
    /// `b_max,i ≥ ν̄_ii/ε + 1`
    BatteryCapacity,
    /// `ε ≤ 2`, so `z ≤ ε·b/2` implies `z ≤ b`
    StepSize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizingCheck {
    pub rule: SizingRule,
    pub i: usize,
    pub j: usize,
    pub value: f64,
    pub required: f64,
    pub pass: bool,
}

impl std::fmt::Display for SizingCheck {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let (name, op) = match self.rule {
            SizingRule::AuxiliaryCap => ("y_cap", ">="),
            SizingRule::BatteryCapacity => ("b_max", ">="),
            SizingRule::StepSize => ("step_size", "<="),
        };
        write!(
            f,
            "{} {name}({},{}) = {} {op} {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.i + 1,
            self.j + 1,
            self.value,
            self.required
        )
    }
}

/// Checks the sizing rules that make the dual bound and per-slot energy
/// causality hold.
pub fn sizing_checks(params: &SchedulerParams, capacities: &[f64]) -> Vec<SizingCheck> {
    let eps = params.step_size;
    let m = params.nodes();
    let mut checks = Vec::with_capacity(m * m + m + 1);
    for i in 0..m {
        for j in 0..m {
            let required = (params.nu_cap[i][j] + 2.0 * eps) / eps;
            let value = params.y_cap[i][j];
            checks.push(SizingCheck {
                rule: SizingRule::AuxiliaryCap,
                i,
                j,
                value,
                required,
                pass: value >= required,
            });
        }
    }
    for (i, &value) in capacities.iter().enumerate().take(m) {
        let required = params.nu_cap[i][i] / eps + 1.0;
        checks.push(SizingCheck {
            rule: SizingRule::BatteryCapacity,
            i,
            j: i,
            value,
            required,
            pass: value >= required,
        });
    }
    checks.push(SizingCheck {
        rule: SizingRule::StepSize,
        i: 0,
        j: 0,
        value: eps,
        required: 2.0,
        pass: eps <= 2.0,
    });
    checks
}

/// Multipliers owned by one node plus its copies of the remote `ν_ji`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeDualState {
    pub node: usize,
    pub phi: f64,
    /// Own row `ν_i·`; `nu[i]` is `ν_ii`.
    pub nu: Vec<f64>,
    /// Last received `ν_ji` for each `j`; entry `i` is unused and stays zero.
    pub nu_remote: Vec<f64>,
    pub beta: f64,
}

impl NodeDualState {
    pub fn nu_own(&self) -> f64 {
        self.nu[self.node]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodePrimal {
    pub z: f64,
    pub s_own: f64,
    /// `s_ij` for `j ≠ i`; entry `i` is zero.
    pub s_cross: Vec<f64>,
    pub y: Vec<f64>,
}

/// Stochastic subgradient of the node's multipliers for one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSubgradient {
    pub phi: f64,
    pub nu: Vec<f64>,
    pub beta: f64,
}

pub fn init_duals(node: usize, battery: &BatteryState, params: &SchedulerParams) -> NodeDualState {
    let m = params.nodes();
    NodeDualState {
        node,
        phi: 0.0,
        nu: vec![0.0; m],
        nu_remote: vec![0.0; m],
        beta: params.step_size * (battery.capacity() - battery.charge()),
    }
}

/// Access probability: `[c/2]₀¹` with `c = ν_ii·q_i − q_c·Σ_{j≠i} ν_ji − β_i`.
pub fn compute_z(duals: &NodeDualState, q: f64, params: &SchedulerParams) -> f64 {
    let i = duals.node;
    let interference: f64 = duals
        .nu_remote
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, v)| v)
        .sum();
    let c = duals.nu[i] * q - params.collision_probability * interference - duals.beta;
    (0.5 * c).clamp(0.0, 1.0)
}

/// `s_ii = [φ/ν_ii]` in `[s_floor, 1]` and `s_ij = [1 − φ/ν_ij]` in `[0, 1 − s_floor]`;
/// a zero multiplier takes the limit (`s_ii = 1`, `s_ij = 0`).
pub fn compute_s(duals: &NodeDualState, params: &SchedulerParams) -> (f64, Vec<f64>) {
    let i = duals.node;
    let floor = params.s_floor;
    let own = match duals.nu[i] {
        nu if nu > 0.0 => (duals.phi / nu).clamp(floor, 1.0),
        _ => 1.0,
    };
    let cross = duals
        .nu
        .iter()
        .enumerate()
        .map(|(j, &nu)| {
            if j == i || nu <= 0.0 {
                0.0
            } else {
                (1.0 - duals.phi / nu).clamp(0.0, 1.0 - floor)
            }
        })
        .collect();
    (own, cross)
}

/// `y_ij = ȳ_ij` when `ν_ij > ν̄_ij`, else zero.
pub fn compute_y(duals: &NodeDualState, params: &SchedulerParams) -> Vec<f64> {
    let i = duals.node;
    duals
        .nu
        .iter()
        .enumerate()
        .map(|(j, &nu)| if nu > params.nu_cap[i][j] { params.y_cap[i][j] } else { 0.0 })
        .collect()
}

pub fn compute_primal(duals: &NodeDualState, q: f64, params: &SchedulerParams) -> NodePrimal {
    let (s_own, s_cross) = compute_s(duals, params);
    NodePrimal {
        z: compute_z(duals, q, params),
        s_own,
        s_cross,
        y: compute_y(duals, params),
    }
}

pub fn subgradient(
    duals: &NodeDualState,
    primal: &NodePrimal,
    q: f64,
    harvest: f64,
    params: &SchedulerParams,
) -> NodeSubgradient {
    let i = duals.node;
    assert!(primal.s_own > 0.0, "s_ii must be positive");
    let mut log_slack = -primal.s_own.ln();
    for (j, &s) in primal.s_cross.iter().enumerate() {
        if j != i {
            assert!(s < 1.0, "s_ij must be below one");
            log_slack -= (-s).ln_1p();
        }
    }
    let p = params.required[i];
    // p = 0 makes the performance constraint vacuous; -inf projects φ to zero
    let phi = if p > 0.0 { p.ln() + log_slack } else { f64::NEG_INFINITY };
    let qc = params.collision_probability;
    let nu = (0..params.nodes())
        .map(|j| {
            if j == i {
                primal.s_own - primal.z * q - primal.y[i]
            } else {
                qc * primal.z - primal.s_cross[j] - primal.y[j]
            }
        })
        .collect();
    NodeSubgradient {
        phi,
        nu,
        beta: primal.z - harvest,
    }
}

/// Projected step `λ ← [λ + ε·g]⁺` on the node's own multipliers.
pub fn apply_subgradient(duals: &mut NodeDualState, step: &NodeSubgradient, params: &SchedulerParams) {
    let eps = params.step_size;
    duals.phi = (duals.phi + eps * step.phi).max(0.0);
    for (nu, g) in duals.nu.iter_mut().zip(&step.nu) {
        *nu = (*nu + eps * g).max(0.0);
    }
    duals.beta = (duals.beta + eps * step.beta).max(0.0);
}

/// Synchronous dual update for one slot.
pub fn update_duals(
    duals: &NodeDualState,
    primal: &NodePrimal,
    q: f64,
    harvest: f64,
    params: &SchedulerParams,
) -> NodeDualState {
    let mut next = duals.clone();
    apply_subgradient(&mut next, &subgradient(duals, primal, q, harvest, params), params);
    next
}
