//! Plant dynamics and the mapping from a Lyapunov decrease-rate target to a
//! required packet-reception probability.
//!
//! Each plant switches between a closed-loop matrix (packet received) and an
//! open-loop matrix (packet lost). With `V(x) = xᵀPx`, requiring
//! `E[V(x[t+1]) | x[t]] ≤ ρ V(x[t]) + tr(PC)` for i.i.d. receptions is
//! equivalent to the reception probability exceeding the smallest `θ` for
//! which the pencil
//!
//! ```text
//! ρP − θ·A_cᵀPA_c − (1 − θ)·A_oᵀPA_o
//! ```
//!
//! is positive semidefinite. The pencil is affine in `θ`, so its smallest
//! eigenvalue is concave in `θ` and the feasible set is an interval. That
//! lets us find the boundary by bisection instead of solving an SDP.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

/// Default absolute tolerance on `θ` for the bisection search.
pub const DEFAULT_BISECTION_TOL: f64 = 1e-6;

/// Relative asymmetry tolerated before a matrix is rejected as non-symmetric.
const SYMMETRY_TOL: f64 = 1e-9;

/// Slack (relative to `‖P‖`) below which the smallest pencil eigenvalue
/// counts as negative.
const FEASIBILITY_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("{name} must be {n}x{n}, got {rows}x{cols}")]
    Shape {
        name: &'static str,
        n: usize,
        rows: usize,
        cols: usize,
    },
    #[error("plant dimension must be at least 1")]
    EmptyPlant,
    #[error("{0} contains non-finite entries")]
    NonFinite(&'static str),
    #[error("{0} is not symmetric")]
    Asymmetric(&'static str),
    #[error("lyapunov matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("noise covariance is not positive semidefinite")]
    NotPositiveSemidefinite,
    #[error("decrease rate {0} is outside (0, 1)")]
    Rate(f64),
    #[error("closed loop cannot meet decrease rate")]
    ClosedLoopInfeasible,
    #[error("bisection tolerance must be positive, got {0}")]
    Tolerance(f64),
    #[error("vector has dimension {got}, plant has dimension {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite plant state or noise")]
    NonFiniteState,
}

/// Switched linear plant together with its Lyapunov performance target.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    a_closed: DMatrix<f64>,
    a_open: DMatrix<f64>,
    noise_cov: DMatrix<f64>,
    lyapunov: DMatrix<f64>,
    rate: f64,
}

impl PlantModel {
    pub fn new(
        a_closed: DMatrix<f64>,
        a_open: DMatrix<f64>,
        noise_cov: DMatrix<f64>,
        lyapunov: DMatrix<f64>,
        rate: f64,
    ) -> Result<Self, ControlError> {
        let n = a_closed.nrows();
        if n == 0 {
            return Err(ControlError::EmptyPlant);
        }
        for (name, m) in [
            ("closed-loop matrix", &a_closed),
            ("open-loop matrix", &a_open),
            ("noise covariance", &noise_cov),
            ("lyapunov matrix", &lyapunov),
        ] {
            if m.nrows() != n || m.ncols() != n {
                return Err(ControlError::Shape {
                    name,
                    n,
                    rows: m.nrows(),
                    cols: m.ncols(),
                });
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(ControlError::NonFinite(name));
            }
        }
        if !(rate > 0.0 && rate < 1.0) {
            return Err(ControlError::Rate(rate));
        }
        let lyapunov = symmetrized(&lyapunov, "lyapunov matrix")?;
        let noise_cov = symmetrized(&noise_cov, "noise covariance")?;
        if min_eigenvalue(&lyapunov) <= 0.0 {
            return Err(ControlError::NotPositiveDefinite);
        }
        if min_eigenvalue(&noise_cov) < -FEASIBILITY_SLACK * max_abs(&noise_cov).max(1.0) {
            return Err(ControlError::NotPositiveSemidefinite);
        }
        Ok(Self {
            a_closed,
            a_open,
            noise_cov,
            lyapunov,
            rate,
        })
    }

    /// One-dimensional plant.
    pub fn scalar(
        a_open: f64,
        a_closed: f64,
        noise_var: f64,
        lyapunov: f64,
        rate: f64,
    ) -> Result<Self, ControlError> {
        let s = |v| DMatrix::from_element(1, 1, v);
        Self::new(s(a_closed), s(a_open), s(noise_var), s(lyapunov), rate)
    }

    pub fn dim(&self) -> usize {
        self.a_closed.nrows()
    }

    pub fn a_closed(&self) -> &DMatrix<f64> {
        &self.a_closed
    }

    pub fn a_open(&self) -> &DMatrix<f64> {
        &self.a_open
    }

    pub fn noise_cov(&self) -> &DMatrix<f64> {
        &self.noise_cov
    }

    pub fn lyapunov(&self) -> &DMatrix<f64> {
        &self.lyapunov
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Returns `L` with `L·Lᵀ = C`, built from the eigendecomposition so that
    /// semidefinite covariances are handled.
    pub fn noise_factor(&self) -> DMatrix<f64> {
        let eig = SymmetricEigen::new(self.noise_cov.clone());
        let sqrt = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        &eig.eigenvectors * DMatrix::from_diagonal(&sqrt)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub x: DVector<f64>,
    pub t: u64,
}

impl PlantState {
    pub fn new(x: DVector<f64>) -> Self {
        Self { x, t: 0 }
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(DVector::zeros(n))
    }
}

/// Advances the plant one slot: `A_c·x + w` on reception, `A_o·x + w` otherwise.
pub fn step_plant(
    model: &PlantModel,
    state: &PlantState,
    received: bool,
    noise: &DVector<f64>,
) -> Result<PlantState, ControlError> {
    let n = model.dim();
    for v in [&state.x, noise] {
        if v.len() != n {
            return Err(ControlError::Dimension {
                expected: n,
                got: v.len(),
            });
        }
    }
    if state.x.iter().chain(noise.iter()).any(|v| !v.is_finite()) {
        return Err(ControlError::NonFiniteState);
    }
    let a = if received {
        &model.a_closed
    } else {
        &model.a_open
    };
    Ok(PlantState {
        x: a * &state.x + noise,
        t: state.t + 1,
    })
}

/// `xᵀPx`.
pub fn lyapunov_value(model: &PlantModel, state: &PlantState) -> f64 {
    let px = &model.lyapunov * &state.x;
    state.x.dot(&px).max(0.0)
}

/// Minimal reception probability that guarantees the decrease rate `ρ`.
///
/// Scalar plants use the closed form `max(0, (a_o² − ρ)/(a_o² − a_c²))`;
/// larger plants bisect on `θ ∈ [0, 1]` until the bracket is narrower than
/// `tol`, returning the feasible end of the bracket.
pub fn required_reception_probability(model: &PlantModel, tol: f64) -> Result<f64, ControlError> {
    if !(tol > 0.0) {
        return Err(ControlError::Tolerance(tol));
    }
    if model.dim() == 1 {
        return scalar_required_probability(
            model.a_open[(0, 0)],
            model.a_closed[(0, 0)],
            model.rate,
        );
    }

    let pencil = Pencil::new(model)?;
    if !pencil.feasible(1.0) {
        return Err(ControlError::ClosedLoopInfeasible);
    }
    if pencil.feasible(0.0) {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if pencil.feasible(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

fn scalar_required_probability(a_open: f64, a_closed: f64, rate: f64) -> Result<f64, ControlError> {
    let open = a_open * a_open;
    let closed = a_closed * a_closed;
    if closed > rate {
        return Err(ControlError::ClosedLoopInfeasible);
    }
    if open <= rate {
        return Ok(0.0);
    }
    // open > rate >= closed, so the denominator is positive
    Ok(((open - rate) / (open - closed)).max(0.0))
}

/// Smallest eigenvalue of `ρP − θ·A_cᵀPA_c − (1 − θ)·A_oᵀPA_o`.
pub fn pencil_min_eigenvalue(model: &PlantModel, theta: f64) -> Result<f64, ControlError> {
    Ok(Pencil::new(model)?.min_eigenvalue(theta))
}

/// Long-run bound on the average Lyapunov value: `tr(PC)/(1 − ρ)`.
pub fn control_performance_bound(model: &PlantModel) -> f64 {
    (&model.lyapunov * &model.noise_cov).trace() / (1.0 - model.rate)
}

struct Pencil {
    target: DMatrix<f64>,
    closed: DMatrix<f64>,
    open: DMatrix<f64>,
    slack: f64,
}

impl Pencil {
    fn new(model: &PlantModel) -> Result<Self, ControlError> {
        let p = &model.lyapunov;
        let closed = model.a_closed.transpose() * p * &model.a_closed;
        let open = model.a_open.transpose() * p * &model.a_open;
        Ok(Self {
            target: p * model.rate,
            closed: symmetrized(&closed, "closed-loop pencil term")?,
            open: symmetrized(&open, "open-loop pencil term")?,
            slack: -FEASIBILITY_SLACK * max_abs(p),
        })
    }

    fn min_eigenvalue(&self, theta: f64) -> f64 {
        let m = &self.target - &self.closed * theta - &self.open * (1.0 - theta);
        min_eigenvalue(&m)
    }

    fn feasible(&self, theta: f64) -> bool {
        self.min_eigenvalue(theta) >= self.slack
    }
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

fn symmetrized(m: &DMatrix<f64>, name: &'static str) -> Result<DMatrix<f64>, ControlError> {
    let asym = max_abs(&(m - m.transpose()));
    if asym > SYMMETRY_TOL * max_abs(m).max(1.0) {
        return Err(ControlError::Asymmetric(name));
    }
    Ok((m + m.transpose()) * 0.5)
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}
