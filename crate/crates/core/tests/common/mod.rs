//! Independent oracles shared by the integration tests and the acceptance
//! harness. Nothing here calls the scheduler or control closed forms.

#![allow(dead_code)]

use ehctrl_core::comm::{draw_link, resolve_slot};
use ehctrl_core::config::SimConfig;
use ehctrl_core::energy::draw_harvest;
use ehctrl_core::rng::{node_streams, StreamKind};
use ehctrl_core::SlotRecord;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const GRID: f64 = 1e-3;

/// Grid minimizer of `f` over `[lo, hi]`, endpoints included.
pub fn grid_argmin(lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let n = ((hi - lo) / GRID).ceil() as usize;
    let mut best = (f64::INFINITY, lo);
    for k in 0..=n {
        let x = (lo + k as f64 * GRID).min(hi);
        let v = f(x);
        if v < best.0 {
            best = (v, x);
        }
    }
    best.1
}

/// Grid minimizers of the per-node Lagrangian terms:
/// `z(z − c)`, `ν_ii·s − φ·log s` and `−ν_ij·s − φ·log(1 − s)`.
pub fn grid_z(c: f64) -> f64 {
    grid_argmin(0.0, 1.0, |z| z * (z - c))
}

pub fn grid_s_own(phi: f64, nu: f64, floor: f64) -> f64 {
    grid_argmin(floor, 1.0, |s| nu * s - phi * s.ln())
}

pub fn grid_s_cross(phi: f64, nu: f64, floor: f64) -> f64 {
    grid_argmin(0.0, 1.0 - floor, |s| -nu * s - phi * (-s).ln_1p())
}

pub type M2 = [[f64; 2]; 2];

pub fn mul(a: &M2, b: &M2) -> M2 {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

pub fn transpose(a: &M2) -> M2 {
    [[a[0][0], a[1][0]], [a[0][1], a[1][1]]]
}

/// Smallest eigenvalue of a symmetric 2×2 matrix.
pub fn min_eig(m: &M2) -> f64 {
    let mean = 0.5 * (m[0][0] + m[1][1]);
    let half = 0.5 * (m[0][0] - m[1][1]);
    let off = 0.5 * (m[0][1] + m[1][0]);
    mean - (half * half + off * off).sqrt()
}

/// A 2×2 plant for the reception-requirement oracle.
pub struct Instance {
    pub ac: M2,
    pub ao: M2,
    pub p: M2,
    pub rho: f64,
}

impl Instance {
    /// Smallest eigenvalue of `ρP − θ·A_cᵀPA_c − (1 − θ)·A_oᵀPA_o`.
    pub fn pencil(&self, theta: f64) -> f64 {
        let closed = mul(&mul(&transpose(&self.ac), &self.p), &self.ac);
        let open = mul(&mul(&transpose(&self.ao), &self.p), &self.ao);
        let mut m = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                m[i][j] = self.rho * self.p[i][j] - theta * closed[i][j] - (1.0 - theta) * open[i][j];
            }
        }
        min_eig(&m)
    }

    /// Smallest θ on a 1e-4 grid at which the pencil is semidefinite.
    pub fn grid_requirement(&self) -> Option<f64> {
        (0..=10_000).map(|k| k as f64 * 1e-4).find(|&t| self.pencil(t) >= -1e-12)
    }

    pub fn matrices(&self) -> [nalgebra::DMatrix<f64>; 3] {
        let d = |m: &M2| nalgebra::DMatrix::from_fn(2, 2, |i, j| m[i][j]);
        [d(&self.ac), d(&self.ao), d(&self.p)]
    }
}

pub fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let mut m = |scale: f64| -> M2 {
        [
            [rng.random_range(-scale..scale), rng.random_range(-scale..scale)],
            [rng.random_range(-scale..scale), rng.random_range(-scale..scale)],
        ]
    };
    let ac = m(0.3);
    let ao = m(1.2);
    let l = m(1.0);
    let mut p = mul(&l, &transpose(&l));
    p[0][0] += 0.5;
    p[1][1] += 0.5;
    let rho = rng.random_range(0.6..0.95);
    Instance { ac, ao, p, rho }
}

/// One slot of the direct-access reference, start-of-slot values.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSlot {
    pub x: f64,
    pub b: f64,
    pub z: f64,
    pub phi: f64,
    pub nu: Vec<f64>,
    pub beta: f64,
    pub tx: bool,
    pub gamma: bool,
}

/// Textbook slot loop for scalar plants with unit noise and unit Lyapunov
/// weight, reading every remote multiplier straight from its owner.
/// Returns `reference[t][i]`.
pub fn direct_access_reference(config: &SimConfig) -> Vec<Vec<ReferenceSlot>> {
    let m = config.node_count();
    let s = &config.scheduler;
    let eps = s.step_size;
    let qc = config.channel.collision_probability();
    let floor = s.s_floor;
    let p = config.required_probabilities().unwrap();
    let a_open: Vec<f64> = config.nodes.iter().map(|n| n.plant.a_open()[(0, 0)]).collect();
    let a_closed: Vec<f64> = config.nodes.iter().map(|n| n.plant.a_closed()[(0, 0)]).collect();
    let cap: Vec<f64> = config.nodes.iter().map(|n| n.battery.capacity()).collect();

    let seed = config.seed;
    let mut channel = node_streams(seed, StreamKind::Channel, m);
    let mut harvest = node_streams(seed, StreamKind::Harvest, m);
    let mut access = node_streams(seed, StreamKind::Transmission, m);
    let mut link = node_streams(seed, StreamKind::Link, m);
    let mut noise = node_streams(seed, StreamKind::PlantNoise, m);

    let mut x: Vec<f64> = config.nodes.iter().map(|n| n.x0[0]).collect();
    let mut b: Vec<f64> = config.nodes.iter().map(|n| n.battery.charge()).collect();
    let mut phi = vec![0.0; m];
    let mut nu = vec![vec![0.0; m]; m];
    let mut beta: Vec<f64> = (0..m).map(|i| eps * (cap[i] - b[i])).collect();
    let mut out = Vec::new();

    for _ in 0..config.horizon {
        let links: Vec<_> = channel.iter_mut().map(|g| draw_link(&config.channel, g)).collect();
        let e: Vec<f64> = (0..m)
            .map(|i| draw_harvest(&config.nodes[i].harvest, &mut harvest[i]))
            .collect();

        let mut z = vec![0.0; m];
        let mut s_own = vec![0.0; m];
        let mut s_cross = vec![vec![0.0; m]; m];
        let mut y = vec![vec![0.0; m]; m];
        for i in 0..m {
            let mut interference = 0.0;
            for j in (0..m).filter(|&j| j != i) {
                interference += nu[j][i];
            }
            let c = nu[i][i] * links[i].q - qc * interference - beta[i];
            z[i] = (0.5 * c).clamp(0.0, 1.0);
            s_own[i] = if nu[i][i] > 0.0 {
                (phi[i] / nu[i][i]).clamp(floor, 1.0)
            } else {
                1.0
            };
            for j in (0..m).filter(|&j| j != i) {
                s_cross[i][j] = if nu[i][j] > 0.0 {
                    (1.0 - phi[i] / nu[i][j]).clamp(0.0, 1.0 - floor)
                } else {
                    0.0
                };
            }
            for k in 0..m {
                y[i][k] = if nu[i][k] > s.nu_cap[i][k] { s.y_cap[i][k] } else { 0.0 };
            }
        }

        let tx: Vec<bool> = (0..m).map(|i| access[i].random::<f64>() < z[i]).collect();
        let outcome = resolve_slot(&config.channel, &links, &tx, &mut link);
        out.push(
            (0..m)
                .map(|i| ReferenceSlot {
                    x: x[i],
                    b: b[i],
                    z: z[i],
                    phi: phi[i],
                    nu: nu[i].clone(),
                    beta: beta[i],
                    tx: tx[i],
                    gamma: outcome.nodes[i].gamma,
                })
                .collect(),
        );

        for i in 0..m {
            let w: f64 = noise[i].sample(StandardNormal);
            let a = if outcome.nodes[i].gamma { a_closed[i] } else { a_open[i] };
            x[i] = a * x[i] + w;
            b[i] = (b[i] - z[i] + e[i]).clamp(0.0, cap[i]);
        }
        for i in 0..m {
            let mut log_slack = -s_own[i].ln();
            for j in (0..m).filter(|&j| j != i) {
                log_slack -= (-s_cross[i][j]).ln_1p();
            }
            let g_phi = if p[i] > 0.0 { p[i].ln() + log_slack } else { f64::NEG_INFINITY };
            phi[i] = (phi[i] + eps * g_phi).max(0.0);
            for j in 0..m {
                let g = if j == i {
                    s_own[i] - z[i] * links[i].q - y[i][i]
                } else {
                    qc * z[i] - s_cross[i][j] - y[i][j]
                };
                nu[i][j] = (nu[i][j] + eps * g).max(0.0);
            }
            beta[i] = (beta[i] + eps * (z[i] - e[i])).max(0.0);
        }
    }
    out
}

/// First slot at which the engine's records leave the reference, if any.
pub fn first_divergence(records: &[SlotRecord], reference: &[Vec<ReferenceSlot>]) -> Option<(u64, usize)> {
    let m = reference.first().map_or(0, Vec::len);
    if records.len() != reference.len() * m {
        return Some((0, 0));
    }
    for (t, slot) in reference.iter().enumerate() {
        for (i, r) in slot.iter().enumerate() {
            let rec = &records[t * m + i];
            let same = rec.x[0] == r.x
                && rec.b == r.b
                && rec.z == r.z
                && rec.phi == r.phi
                && rec.nu == r.nu
                && rec.beta == r.beta
                && rec.transmitted == r.tx
                && rec.gamma == r.gamma;
            if !same {
                return Some((t as u64, i));
            }
        }
    }
    None
}
