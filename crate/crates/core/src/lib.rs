//! Decentralized random-access scheduling for wireless control loops whose
//! sensors run on harvested energy.
//!
//! Each sensor decides once per slot whether to contend for a shared,
//! collision-prone channel. The decision comes from a per-node primal-dual
//! update that trades the plant's required reception probability against
//! collisions caused for other nodes and the energy left in the battery.
//! Nodes only exchange multipliers when they are available, so the
//! coordination tolerates bounded staleness.
//!
//! [`sim::Simulation`] drives the full slot loop; [`config::SimConfig`]
//! describes a scenario and loads it from TOML.

pub mod comm;
pub mod config;
pub mod control;
pub mod coordination;
pub mod energy;
pub mod rng;
pub mod scheduler;
pub mod sim;
pub mod telemetry;

pub use config::SimConfig;
pub use sim::{run, run_summary, SimError, Simulation};
pub use telemetry::{SlotRecord, Summary, TelemetrySink};
