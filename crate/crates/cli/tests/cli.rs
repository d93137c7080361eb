use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ehctrl_core::SimConfig;
use tempfile::TempDir;

fn ehctrl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ehctrl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn example_config() -> String {
    concat!(env!("CARGO_MANIFEST_DIR"), "/examples/paper-sec6.cfg").to_string()
}

const OUTPUT_FILES: [&str; 10] = [
    "slots.csv",
    "state_trace.csv",
    "battery_trace.csv",
    "control_performance.csv",
    "energy_balance.csv",
    "dual_means.csv",
    "schedule_window.csv",
    "summary.csv",
    "summary.json",
    "probabilities.csv",
];

#[test]
fn run_is_reproducible_byte_for_byte() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        let o = ehctrl(&["run", "--horizon", "1500", "--seed", "4", "--out", dir.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for name in OUTPUT_FILES {
        let left = fs::read(a.join(name)).unwrap();
        assert_eq!(left, fs::read(b.join(name)).unwrap(), "{name} differs");
    }
}

#[test]
fn parallel_flag_changes_nothing() {
    let tmp = TempDir::new().unwrap();
    let seq = tmp.path().join("seq");
    let par = tmp.path().join("par");
    assert!(ehctrl(&["run", "--horizon", "1000", "--out", seq.to_str().unwrap()]).status.success());
    assert!(ehctrl(&["run", "--horizon", "1000", "--parallel", "--out", par.to_str().unwrap()]).status.success());
    assert_eq!(fs::read(seq.join("slots.csv")).unwrap(), fs::read(par.join("slots.csv")).unwrap());
}

#[test]
fn zero_horizon_writes_headers_only() {
    let tmp = TempDir::new().unwrap();
    let o = ehctrl(&["run", "--horizon", "0", "--out", tmp.path().to_str().unwrap()]);
    assert!(o.status.success());
    let slots = fs::read_to_string(tmp.path().join("slots.csv")).unwrap();
    assert_eq!(slots.lines().count(), 1);
    assert!(slots.starts_with("slot,node,x_1,V,z,tx"));
    assert!(stdout(&o).contains("violations: 0"));
}

#[test]
fn summary_reports_required_probability() {
    let tmp = TempDir::new().unwrap();
    let o = ehctrl(&["run", "--horizon", "2000", "--out", tmp.path().to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("node 1: p_required=0.3453"), "{}", stdout(&o));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("summary.json")).unwrap()).unwrap();
    let p = json["nodes"][0]["p_required"].as_f64().unwrap();
    assert!((p - 0.3453).abs() < 5e-4);
    assert_eq!(json["slots"].as_u64(), Some(2000));
}

fn parse_probability(line: &str) -> f64 {
    line.split("probability ").nth(1).unwrap().split_whitespace().next().unwrap().parse().unwrap()
}

#[test]
fn required_prob_for_scalar_plants() {
    let o = ehctrl(&["required-prob", "--open", "1.05", "--closed", "0.1"]);
    assert!(o.status.success());
    assert!((parse_probability(&stdout(&o)) - 0.2769).abs() < 5e-4);

    let o = ehctrl(&["required-prob", "--open", "0.5", "--closed", "0.1"]);
    assert_eq!(parse_probability(&stdout(&o)), 0.0);

    let o = ehctrl(&["required-prob"]);
    let lines: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(lines.len(), 2);
    assert!((parse_probability(&lines[0]) - 0.3453).abs() < 5e-4);
}

#[test]
fn required_prob_for_matrix_plant_matches_grid() {
    let tmp = TempDir::new().unwrap();
    let (ac, ao) = ([[0.2, 0.1], [0.0, 0.1]], [[1.0, 0.3], [-0.2, 0.9]]);
    let path = write_config(
        tmp.path(),
        "m.toml",
        r#"
        [[plant]]
        a_open = [[1.0, 0.3], [-0.2, 0.9]]
        a_closed = [[0.2, 0.1], [0.0, 0.1]]
        x0 = [0.0, 0.0]
        "#,
    );
    let o = ehctrl(&["required-prob", "--config", &path]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let p = parse_probability(&stdout(&o));

    // smallest θ on a grid with 0.8·I − θ·AcᵀAc − (1 − θ)·AoᵀAo ⪰ 0
    let gram = |a: [[f64; 2]; 2]| {
        let mut g = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                g[i][j] = a[0][i] * a[0][j] + a[1][i] * a[1][j];
            }
        }
        g
    };
    let (gc, go) = (gram(ac), gram(ao));
    let min_eig = |t: f64| {
        let m = |i: usize, j: usize| f64::from(u8::from(i == j)) * 0.8 - t * gc[i][j] - (1.0 - t) * go[i][j];
        let mean = 0.5 * (m(0, 0) + m(1, 1));
        let half = 0.5 * (m(0, 0) - m(1, 1));
        mean - (half * half + m(0, 1) * m(0, 1)).sqrt()
    };
    let grid = (0..=10_000).map(|k| k as f64 * 1e-4).find(|&t| min_eig(t) >= 0.0).unwrap();
    assert!(grid > 0.1);
    assert!((p - grid).abs() <= 1e-3, "{p} vs {grid}");
}

#[test]
fn check_config_reports_sizing() {
    let o = ehctrl(&["check-config"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("PASS y_cap(1,1) = 25 >= 21"), "{out}");
    assert!(out.contains("all sizing rules hold"));

    let tmp = TempDir::new().unwrap();
    let low_y = write_config(tmp.path(), "y.toml", "[scheduler]\ny_cap = 20.0\n[[plant]]\na_open = 1.1\na_closed = 0.15\n");
    let o = ehctrl(&["check-config", "--config", &low_y]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("FAIL y_cap(1,1) = 20 >= 21"), "{}", stdout(&o));

    let small_eps = write_config(
        tmp.path(),
        "e.toml",
        "[scheduler]\nstep_size = 0.5\ny_cap = 60.0\n[[plant]]\na_open = 1.1\na_closed = 0.15\n",
    );
    let o = ehctrl(&["check-config", "--config", &small_eps, "--strict"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("FAIL b_max(1,1) = 20 >= 39"), "{}", stdout(&o));
}

#[test]
fn strict_run_refuses_undersized_config() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "y.toml", "[scheduler]\ny_cap = 20.0\n[[plant]]\na_open = 1.1\na_closed = 0.15\n");
    let out = tmp.path().join("out");
    let o = ehctrl(&["run", "--config", &cfg, "--strict", "--horizon", "10", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.join("slots.csv").exists());
}

#[test]
fn shipped_example_matches_builtin_defaults() {
    let text = fs::read_to_string(example_config()).unwrap();
    let from_file = SimConfig::from_toml_str(&text).unwrap();
    assert_eq!(format!("{from_file:?}"), format!("{:?}", SimConfig::paper_defaults()));

    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let run = |args: &[&str]| assert!(ehctrl(args).status.success());
    run(&["run", "--horizon", "500", "--out", a.to_str().unwrap()]);
    run(&["run", "--config", &example_config(), "--horizon", "500", "--out", b.to_str().unwrap()]);
    assert_eq!(fs::read(a.join("slots.csv")).unwrap(), fs::read(b.join("slots.csv")).unwrap());
}

#[test]
fn invariant_breach_exits_three_and_keeps_partial_trace() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "small.toml",
        "[[plant]]\na_open = 1.1\na_closed = 0.15\nbattery = { capacity = 3.0 }\nharvest = { mean = 0.2 }\n",
    );
    let out = tmp.path().join("out");
    let o = ehctrl(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("invariant violated"));
    let slots = fs::read_to_string(out.join("slots.csv")).unwrap();
    assert!(slots.lines().count() > 1);
}

#[test]
fn sweep_writes_one_row_per_value() {
    let tmp = TempDir::new().unwrap();
    let o = ehctrl(&[
        "sweep",
        "--param",
        "harvest-mean",
        "--values",
        "0.4,0.5,0.6",
        "--horizon",
        "500",
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut rows = csv::Reader::from_path(tmp.path().join("sweep.csv")).unwrap();
    let headers = rows.headers().unwrap().clone();
    assert_eq!(&headers[0], "param");
    let records: Vec<_> = rows.records().map(Result::unwrap).collect();
    assert_eq!(records.len(), 3);
    assert_eq!(&records[1][1], "0.5");
    assert!(records.iter().all(|r| &r[0] == "harvest_mean" || &r[0] == "harvest-mean"));
}

#[test]
fn bad_config_exits_two() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", "horizon = \"long\"\n");
    assert_eq!(ehctrl(&["run", "--config", &cfg, "--out", tmp.path().to_str().unwrap()]).status.code(), Some(2));
    let missing = tmp.path().join("missing.toml");
    assert_eq!(ehctrl(&["check-config", "--config", missing.to_str().unwrap()]).status.code(), Some(2));
}
