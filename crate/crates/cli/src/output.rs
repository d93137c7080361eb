//! Files written by `ehctrl run`.
//!
//! | file | rows | columns |
//! |------|------|---------|
//! | `slots.csv` | slot × node | `slot,node,x_1..,V,z,tx,gamma,h,q,b,e,phi,nu_1..nu_M,beta` |
//! | `summary.csv` | node | required and achieved probabilities, averages, counters |
//! | `summary.json` | one object | the full run summary |
//! | `state_trace.csv` | slot | first state component of each plant |
//! | `battery_trace.csv` | slot | battery level of each node |
//! | `control_performance.csv` | slot | running average of `V(x)` per node |
//! | `energy_balance.csv` | slot | running average of `e − z` per node |
//! | `dual_means.csv` | slot | running mean of every `ν_ij` |
//! | `probabilities.csv` | node | required, access, and reception probabilities |
//! | `schedule_window.csv` | slot × node | access decisions inside the extract window |

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use ehctrl_core::telemetry::{write_summary_csv, SlotsCsv};
use ehctrl_core::{SimConfig, SlotRecord, Summary, TelemetrySink};

type Csv = csv::Writer<BufWriter<File>>;

fn csv_file(dir: &Path, name: &str, header: &[String]) -> io::Result<Csv> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(dir.join(name))?));
    w.write_record(header)?;
    Ok(w)
}

fn per_node(prefix: &str, m: usize) -> Vec<String> {
    std::iter::once("slot".to_string())
        .chain((1..=m).map(|i| format!("{prefix}_{i}")))
        .collect()
}

/// Writes every per-slot file while the run progresses.
pub struct RunFiles {
    slots: SlotsCsv<BufWriter<File>>,
    state: Csv,
    battery: Csv,
    ctrl: Csv,
    balance: Csv,
    duals: Csv,
    window: Csv,
    window_range: std::ops::Range<u64>,
}

impl RunFiles {
    pub fn create(dir: &Path, config: &SimConfig) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        let m = config.node_count();
        let state_dim = config.nodes.iter().map(|n| n.plant.dim()).max().unwrap_or(1);
        let dual_cols: Vec<String> = std::iter::once("slot".to_string())
            .chain((1..=m).flat_map(|i| (1..=m).map(move |j| format!("nu_{i}_{j}"))))
            .collect();
        let window_header: Vec<String> = ["slot", "node", "z", "tx", "collided", "gamma", "b"]
            .map(String::from)
            .to_vec();
        let start = config.telemetry.window_start;
        Ok(Self {
            slots: SlotsCsv::new(BufWriter::new(File::create(dir.join("slots.csv"))?), state_dim, m)?,
            state: csv_file(dir, "state_trace.csv", &per_node("x", m))?,
            battery: csv_file(dir, "battery_trace.csv", &per_node("b", m))?,
            ctrl: csv_file(dir, "control_performance.csv", &per_node("ctrl_perf", m))?,
            balance: csv_file(dir, "energy_balance.csv", &per_node("energy_balance", m))?,
            duals: csv_file(dir, "dual_means.csv", &dual_cols)?,
            window: csv_file(dir, "schedule_window.csv", &window_header)?,
            window_range: start..start.saturating_add(config.telemetry.window_len),
        })
    }
}

fn row<'a>(slot: u64, values: impl Iterator<Item = &'a f64>) -> Vec<String> {
    std::iter::once(slot.to_string())
        .chain(values.map(|v| v.to_string()))
        .collect()
}

impl TelemetrySink for RunFiles {
    fn record_slot(&mut self, records: &[SlotRecord]) -> io::Result<()> {
        self.slots.record_slot(records)?;
        let Some(first) = records.first() else {
            return Ok(());
        };
        let t = first.slot;
        let x0: Vec<f64> = records.iter().map(|r| r.x.first().copied().unwrap_or(0.0)).collect();
        self.state.write_record(row(t, x0.iter()))?;
        self.battery.write_record(row(t, records.iter().map(|r| &r.b)))?;
        self.ctrl.write_record(row(t, records.iter().map(|r| &r.running.ctrl_perf)))?;
        self.balance
            .write_record(row(t, records.iter().map(|r| &r.running.energy_balance)))?;
        self.duals
            .write_record(row(t, records.iter().flat_map(|r| r.running.nu_mean.iter())))?;
        if self.window_range.contains(&t) {
            for r in records {
                self.window.write_record([
                    t.to_string(),
                    (r.node + 1).to_string(),
                    r.z.to_string(),
                    u8::from(r.transmitted).to_string(),
                    u8::from(r.collided).to_string(),
                    u8::from(r.gamma).to_string(),
                    r.b.to_string(),
                ])?;
            }
        }
        Ok(())
    }

    fn finish(&mut self) -> io::Result<()> {
        self.slots.finish()?;
        for w in [
            &mut self.state,
            &mut self.battery,
            &mut self.ctrl,
            &mut self.balance,
            &mut self.duals,
            &mut self.window,
        ] {
            w.flush()?;
        }
        Ok(())
    }
}

/// Writes `summary.csv`, `summary.json` and `probabilities.csv`.
pub fn write_summary_files(dir: &Path, summary: &Summary) -> io::Result<Vec<PathBuf>> {
    let csv_path = dir.join("summary.csv");
    write_summary_csv(summary, BufWriter::new(File::create(&csv_path)?))?;

    let json_path = dir.join("summary.json");
    let mut json = BufWriter::new(File::create(&json_path)?);
    serde_json::to_writer_pretty(&mut json, summary)?;
    writeln!(json)?;
    json.flush()?;

    let prob_path = dir.join("probabilities.csv");
    let mut probs = csv::Writer::from_writer(BufWriter::new(File::create(&prob_path)?));
    probs.write_record(["node", "p_required", "p_tx", "p_rx", "p_rx_empirical"])?;
    for n in &summary.nodes {
        probs.write_record([
            (n.node + 1).to_string(),
            n.p_required.to_string(),
            n.p_tx.to_string(),
            n.p_rx.to_string(),
            n.p_rx_empirical.to_string(),
        ])?;
    }
    probs.flush()?;
    Ok(vec![csv_path, json_path, prob_path])
}
