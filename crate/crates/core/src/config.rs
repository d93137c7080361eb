//! Simulation configuration and its on-disk format.
//!
//! Config files are TOML. Every key is optional and falls back to the
//! two-plant reference scenario, so an empty `[[plant]]` list is the only
//! thing that makes a file invalid. Matrices may be written as a scalar
//! (`s·I`) or as a list of rows.
//!
//! ```toml
//! seed = 1
//! horizon = 10000
//!
//! [channel]
//! fading_mean = 2.0
//! collision_probability = 0.25
//! decoding = { curve = "logistic", slope = 3.0, midpoint = 1.5 }
//!
//! [scheduler]
//! step_size = 1.0
//! nu_cap = 19.0
//! y_cap = 25.0
//!
//! [availability]
//! mode = "piggyback"
//! max_staleness = 20
//!
//! [[plant]]
//! a_open = 1.1
//! a_closed = 0.15
//! battery = { capacity = 20.0 }
//! harvest = { distribution = "bernoulli", mean = 0.5 }
//! ```

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::comm::{ChannelConfig, ChannelError, DecodingCurve};
use crate::control::{required_reception_probability, ControlError, PlantModel, DEFAULT_BISECTION_TOL};
use crate::coordination::{AvailabilityError, AvailabilityMode, AvailabilitySchedule};
use crate::energy::{BatteryState, EnergyAccounting, EnergyError, HarvestConfig, HarvestDistribution};
use crate::scheduler::{sizing_checks, SchedulerError, SchedulerParams, SizingCheck, DEFAULT_S_FLOOR};

pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_HORIZON: u64 = 10_000;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("plant {node}: {source}")]
    Plant { node: usize, source: ControlError },
    #[error("node {node}: {source}")]
    Energy { node: usize, source: EnergyError },
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    Availability(#[from] AvailabilityError),
    #[error("{0}")]
    Invalid(String),
    #[error("sizing rules violated: {}", describe_failures(.0))]
    Sizing(Vec<SizingCheck>),
}

fn describe_failures(checks: &[SizingCheck]) -> String {
    checks
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeConfig {
    pub plant: PlantModel,
    pub x0: DVector<f64>,
    pub battery: BatteryState,
    pub harvest: HarvestConfig,
    /// Overrides the requirement derived from the plant.
    pub required: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchedulerSettings {
    pub step_size: f64,
    pub nu_cap: Vec<Vec<f64>>,
    pub y_cap: Vec<Vec<f64>>,
    pub s_floor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    #[default]
    PrimalDual,
    /// Every node accesses the channel in every slot.
    AlwaysTransmit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecutionMode {
    #[default]
    Sequential,
    /// Per-node primal and dual steps run on the rayon pool.
    Parallel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TelemetryOptions {
    /// First slot of the schedule extract.
    #[serde(default = "default_window_start")]
    pub window_start: u64,
    /// Number of slots in the schedule extract.
    #[serde(default = "default_window_len")]
    pub window_len: u64,
}

fn default_window_start() -> u64 {
    1050
}

fn default_window_len() -> u64 {
    51
}

impl Default for TelemetryOptions {
    fn default() -> Self {
        Self {
            window_start: default_window_start(),
            window_len: default_window_len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub nodes: Vec<NodeConfig>,
    pub horizon: u64,
    pub channel: ChannelConfig,
    pub scheduler: SchedulerSettings,
    pub availability: AvailabilitySchedule,
    pub accounting: EnergyAccounting,
    pub policy: Policy,
    pub execution: ExecutionMode,
    pub seed: u64,
    pub telemetry: TelemetryOptions,
}

impl SimConfig {
    /// Two scalar plants sharing one channel, as in the reference scenario.
    pub fn paper_defaults() -> Self {
        let file = FileConfig {
            plant: vec![
                FilePlant {
                    a_open: MatrixSpec::Scalar(1.1),
                    a_closed: MatrixSpec::Scalar(0.15),
                    ..FilePlant::default()
                },
                FilePlant {
                    a_open: MatrixSpec::Scalar(1.05),
                    a_closed: MatrixSpec::Scalar(0.1),
                    ..FilePlant::default()
                },
            ],
            ..FileConfig::default()
        };
        file.into_config().expect("reference scenario is valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let file: FileConfig = toml::from_str(text)?;
        file.into_config()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Required reception probabilities, derived from each plant unless
    /// overridden.
    pub fn required_probabilities(&self) -> Result<Vec<f64>, ConfigError> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(node, n)| match n.required {
                Some(p) => Ok(p),
                None => required_reception_probability(&n.plant, DEFAULT_BISECTION_TOL)
                    .map_err(|source| ConfigError::Plant { node, source }),
            })
            .collect()
    }

    pub fn scheduler_params(&self) -> Result<SchedulerParams, ConfigError> {
        let s = &self.scheduler;
        Ok(SchedulerParams::new(
            s.step_size,
            s.nu_cap.clone(),
            s.y_cap.clone(),
            self.required_probabilities()?,
            self.channel.collision_probability(),
            s.s_floor,
        )?)
    }

    pub fn sizing(&self) -> Result<Vec<SizingCheck>, ConfigError> {
        let caps: Vec<f64> = self.nodes.iter().map(|n| n.battery.capacity()).collect();
        Ok(sizing_checks(&self.scheduler_params()?, &caps))
    }

    /// Validates the configuration and its sizing rules. Failed sizing rules
    /// are an error when `strict`, otherwise they are returned as warnings.
    pub fn validate(&self, strict: bool) -> Result<Vec<SizingCheck>, ConfigError> {
        let failures: Vec<SizingCheck> = self.sizing()?.into_iter().filter(|c| !c.pass).collect();
        if strict && !failures.is_empty() {
            return Err(ConfigError::Sizing(failures));
        }
        Ok(failures)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Scalar(f64),
    Rows(Vec<Vec<f64>>),
}

impl MatrixSpec {
    fn dim(&self) -> usize {
        match self {
            MatrixSpec::Scalar(_) => 1,
            MatrixSpec::Rows(rows) => rows.len(),
        }
    }

    pub fn to_matrix(&self, n: usize) -> Result<DMatrix<f64>, ConfigError> {
        match self {
            MatrixSpec::Scalar(s) => Ok(DMatrix::identity(n, n) * *s),
            MatrixSpec::Rows(rows) => {
                if rows.iter().any(|r| r.len() != rows.len()) {
                    return Err(ConfigError::Invalid(format!("matrix rows must all have length {}", rows.len())));
                }
                Ok(DMatrix::from_fn(rows.len(), rows.len(), |i, j| rows[i][j]))
            }
        }
    }

    fn to_caps(&self, m: usize, name: &str) -> Result<Vec<Vec<f64>>, ConfigError> {
        match self {
            MatrixSpec::Scalar(s) => Ok(vec![vec![*s; m]; m]),
            MatrixSpec::Rows(rows) if rows.len() == m && rows.iter().all(|r| r.len() == m) => Ok(rows.clone()),
            MatrixSpec::Rows(_) => Err(ConfigError::Invalid(format!("{name} must be a scalar or a {m}x{m} matrix"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_horizon")]
    pub horizon: u64,
    #[serde(default)]
    pub parallel: bool,
    #[serde(default)]
    pub policy: Policy,
    #[serde(default)]
    pub channel: FileChannel,
    #[serde(default)]
    pub scheduler: FileScheduler,
    #[serde(default)]
    pub availability: FileAvailability,
    #[serde(default)]
    pub energy: FileEnergy,
    #[serde(default)]
    pub telemetry: TelemetryOptions,
    #[serde(default)]
    pub plant: Vec<FilePlant>,
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

fn default_horizon() -> u64 {
    DEFAULT_HORIZON
}

impl Default for FileConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            horizon: DEFAULT_HORIZON,
            parallel: false,
            policy: Policy::default(),
            channel: FileChannel::default(),
            scheduler: FileScheduler::default(),
            availability: FileAvailability::default(),
            energy: FileEnergy::default(),
            telemetry: TelemetryOptions::default(),
            plant: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileChannel {
    pub fading_mean: f64,
    pub collision_probability: f64,
    pub decoding: DecodingCurve,
}

impl Default for FileChannel {
    fn default() -> Self {
        Self {
            fading_mean: 2.0,
            collision_probability: 0.25,
            decoding: DecodingCurve::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileScheduler {
    pub step_size: f64,
    pub nu_cap: MatrixSpec,
    pub y_cap: MatrixSpec,
    pub s_floor: f64,
}

impl Default for FileScheduler {
    fn default() -> Self {
        Self {
            step_size: 1.0,
            nu_cap: MatrixSpec::Scalar(19.0),
            y_cap: MatrixSpec::Scalar(25.0),
            s_floor: DEFAULT_S_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FileAvailability {
    #[serde(flatten)]
    pub mode: AvailabilityMode,
    pub max_staleness: u64,
}

impl Default for FileAvailability {
    fn default() -> Self {
        Self {
            mode: AvailabilityMode::AlwaysOn,
            max_staleness: 10,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileEnergy {
    pub accounting: EnergyAccounting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilePlant {
    pub a_open: MatrixSpec,
    pub a_closed: MatrixSpec,
    #[serde(default = "unit_matrix")]
    pub noise_cov: MatrixSpec,
    #[serde(default = "unit_matrix")]
    pub lyapunov: MatrixSpec,
    #[serde(default = "default_rate")]
    pub rate: f64,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub required_probability: Option<f64>,
    #[serde(default)]
    pub battery: FileBattery,
    #[serde(default)]
    pub harvest: FileHarvest,
}

fn unit_matrix() -> MatrixSpec {
    MatrixSpec::Scalar(1.0)
}

fn default_rate() -> f64 {
    0.8
}

impl Default for FilePlant {
    fn default() -> Self {
        Self {
            a_open: MatrixSpec::Scalar(1.1),
            a_closed: MatrixSpec::Scalar(0.15),
            noise_cov: unit_matrix(),
            lyapunov: unit_matrix(),
            rate: default_rate(),
            x0: None,
            required_probability: None,
            battery: FileBattery::default(),
            harvest: FileHarvest::default(),
        }
    }
}

impl FilePlant {
    pub fn model(&self) -> Result<PlantModel, ControlError> {
        let n = self.a_open.dim();
        let mat = |m: &MatrixSpec| m.to_matrix(n);
        let build = || -> Result<_, ConfigError> {
            Ok((mat(&self.a_closed)?, mat(&self.a_open)?, mat(&self.noise_cov)?, mat(&self.lyapunov)?))
        };
        // Shape problems surface as ControlError::Shape from the constructor.
        let (ac, ao, c, p) = build().map_err(|_| ControlError::Shape {
            name: "plant matrix",
            n,
            rows: 0,
            cols: 0,
        })?;
        PlantModel::new(ac, ao, c, p, self.rate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileBattery {
    #[serde(default = "default_capacity")]
    pub capacity: f64,
    /// Defaults to a full battery.
    #[serde(default)]
    pub initial: Option<f64>,
}

fn default_capacity() -> f64 {
    20.0
}

impl Default for FileBattery {
    fn default() -> Self {
        Self {
            capacity: default_capacity(),
            initial: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FileHarvestKind {
    Bernoulli,
    Deterministic,
    Uniform,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileHarvest {
    #[serde(default = "default_harvest_kind")]
    pub distribution: FileHarvestKind,
    #[serde(default = "default_harvest_mean")]
    pub mean: f64,
}

fn default_harvest_kind() -> FileHarvestKind {
    FileHarvestKind::Bernoulli
}

fn default_harvest_mean() -> f64 {
    0.5
}

impl Default for FileHarvest {
    fn default() -> Self {
        Self {
            distribution: default_harvest_kind(),
            mean: default_harvest_mean(),
        }
    }
}

impl FileHarvest {
    fn build(&self) -> Result<HarvestConfig, EnergyError> {
        let dist = match self.distribution {
            FileHarvestKind::None => return Ok(HarvestConfig::disabled()),
            FileHarvestKind::Bernoulli => HarvestDistribution::Bernoulli,
            FileHarvestKind::Deterministic => HarvestDistribution::Deterministic,
            FileHarvestKind::Uniform => HarvestDistribution::Uniform,
        };
        HarvestConfig::new(dist, self.mean)
    }
}

impl FileConfig {
    pub fn into_config(self) -> Result<SimConfig, ConfigError> {
        let m = self.plant.len();
        if m == 0 {
            return Err(ConfigError::Invalid("at least one [[plant]] is required".into()));
        }
        let nodes = self
            .plant
            .iter()
            .enumerate()
            .map(|(node, p)| {
                let plant = p.model().map_err(|source| ConfigError::Plant { node, source })?;
                let x0 = match &p.x0 {
                    Some(v) if v.len() == plant.dim() => DVector::from_vec(v.clone()),
                    Some(v) => {
                        return Err(ConfigError::Plant {
                            node,
                            source: ControlError::Dimension {
                                expected: plant.dim(),
                                got: v.len(),
                            },
                        })
                    }
                    None => DVector::zeros(plant.dim()),
                };
                let energy = |source| ConfigError::Energy { node, source };
                let battery = BatteryState::new(p.battery.initial.unwrap_or(p.battery.capacity), p.battery.capacity)
                    .map_err(energy)?;
                let harvest = p.harvest.build().map_err(energy)?;
                Ok(NodeConfig {
                    plant,
                    x0,
                    battery,
                    harvest,
                    required: p.required_probability,
                })
            })
            .collect::<Result<Vec<_>, ConfigError>>()?;

        let config = SimConfig {
            nodes,
            horizon: self.horizon,
            channel: ChannelConfig::new(
                self.channel.fading_mean,
                self.channel.decoding,
                self.channel.collision_probability,
            )?,
            scheduler: SchedulerSettings {
                step_size: self.scheduler.step_size,
                nu_cap: self.scheduler.nu_cap.to_caps(m, "nu_cap")?,
                y_cap: self.scheduler.y_cap.to_caps(m, "y_cap")?,
                s_floor: self.scheduler.s_floor,
            },
            availability: AvailabilitySchedule::new(self.availability.mode, self.availability.max_staleness)?,
            accounting: self.energy.accounting,
            policy: self.policy,
            execution: if self.parallel {
                ExecutionMode::Parallel
            } else {
                ExecutionMode::Sequential
            },
            seed: self.seed,
            telemetry: self.telemetry,
        };
        // surfaces invalid caps, requirements and infeasible plants early
        config.scheduler_params()?;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheduler::SizingRule;

    #[test]
    fn defaults_match_reference_scenario() {
        let c = SimConfig::paper_defaults();
        assert_eq!(c.node_count(), 2);
        assert_eq!(c.horizon, 10_000);
        let p = c.required_probabilities().unwrap();
        assert!((p[0] - 0.3453).abs() < 5e-5);
        assert!((p[1] - 0.2769).abs() < 5e-5);
        assert!(c.validate(true).unwrap().is_empty());
        assert_eq!(c.nodes[0].battery.charge(), 20.0);
    }

    #[test]
    fn minimal_file() {
        let c = SimConfig::from_toml_str("[[plant]]\na_open = 1.1\na_closed = 0.15\n").unwrap();
        assert_eq!(c.node_count(), 1);
        assert!(c.availability.is_always_on());
        assert_eq!(c.nodes[0].x0.len(), 1);
    }

    #[test]
    fn matrix_plant_and_piggyback() {
        let text = r#"
            horizon = 5
            [availability]
            mode = "piggyback"
            max_staleness = 20
            [[plant]]
            a_open = [[1.05, 0.1], [0.0, 1.05]]
            a_closed = 0.1
            x0 = [1.0, -1.0]
            [[plant]]
            a_open = 1.05
            a_closed = 0.1
            harvest = { distribution = "uniform", mean = 0.4 }
        "#;
        let c = SimConfig::from_toml_str(text).unwrap();
        assert_eq!(c.nodes[0].plant.dim(), 2);
        assert_eq!(c.nodes[0].x0.as_slice(), &[1.0, -1.0]);
        assert_eq!(c.availability.mode(), AvailabilityMode::Piggyback);
        assert_eq!(c.availability.max_staleness(), 20);
    }

    #[test]
    fn sizing_failure_is_reported() {
        let text = "[scheduler]\ny_cap = 20.0\n[[plant]]\na_open = 1.1\na_closed = 0.15\n";
        let c = SimConfig::from_toml_str(text).unwrap();
        let warnings = c.validate(false).unwrap();
        assert!(warnings.iter().all(|w| w.rule == SizingRule::AuxiliaryCap));
        assert!(matches!(c.validate(true), Err(ConfigError::Sizing(_))));
    }

    #[test]
    fn rejects_bad_files() {
        assert!(matches!(SimConfig::from_toml_str(""), Err(ConfigError::Invalid(_))));
        assert!(matches!(
            SimConfig::from_toml_str("bogus = 1\n[[plant]]\na_open = 1.1\na_closed = 0.1\n"),
            Err(ConfigError::Parse(_))
        ));
        assert!(matches!(
            SimConfig::from_toml_str("[[plant]]\na_open = 1.2\na_closed = 0.95\n"),
            Err(ConfigError::Plant { .. })
        ));
        assert!(matches!(
            SimConfig::from_toml_str("[[plant]]\na_open = 1.1\na_closed = 0.1\nharvest = { mean = 0.0 }\n"),
            Err(ConfigError::Energy { .. })
        ));
    }
}
