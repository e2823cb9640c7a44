use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ccmpc::scenario::ScenarioConfig;
use ccmpc::sim::{BENCH_HEADER, TRACE_HEADER};

fn repo() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn shipped() -> PathBuf {
    repo().join("configs/coupled_tank.toml")
}

fn ccmpc(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccmpc"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .arg("--quiet")
        .output()
        .expect("binary runs")
}

/// The shipped scenario with certificate paths made absolute, edited by `f`.
fn tank_config(dir: &Path, f: impl FnOnce(String) -> String) -> PathBuf {
    let certs = repo().join("configs/certs");
    let text = fs::read_to_string(shipped())
        .unwrap()
        .replace("\"certs/", &format!("\"{}/", certs.display()));
    let path = dir.join("scenario.toml");
    fs::write(&path, f(text)).unwrap();
    path
}

const SCALAR_MODEL: &str = r#"
form = "map"
states = ["x"]
inputs = ["u"]
state_box = [[-10.0, 10.0]]
input_box = [[-10.0, 10.0]]

[[equations]]
state = "x"
terms = [{ coeff = 1.2, powers = { x = 1 } }]
inputs = { u = 1.0 }
"#;

const SCALAR_SCENARIO: &str = r#"
[plant]
kind = "polynomial"
model_file = "model.toml"

[schedule]
tau_delta = 1.0
segments = [[1.0, 3]]

[[certificates]]
tau = 1.0
beta = 0.3
file = "cert_tau1.toml"

[[reference]]
start = 0.0
end = 10.0
target = [0.0]

[simulation]
horizon = 10.0
x0 = [4.0]
"#;

fn scalar_setup(dir: &Path, model: &str) -> PathBuf {
    fs::write(dir.join("model.toml"), model).unwrap();
    let path = dir.join("scenario.toml");
    fs::write(&path, SCALAR_SCENARIO).unwrap();
    path
}

#[test]
fn shipped_config_round_trips() {
    let cfg = ScenarioConfig::load(&shipped()).unwrap();
    let once = cfg.to_toml_string();
    let twice = ScenarioConfig::from_toml_str(&once).unwrap().to_toml_string();
    assert_eq!(once, twice);
    assert_eq!(cfg.simulation.horizon, 120.0);
}

#[test]
fn synthesize_verify_and_run_a_user_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scalar_setup(dir.path(), SCALAR_MODEL);
    let out = dir.path().join("out");

    let syn = ccmpc(&["synthesize"], &cfg, &out);
    assert_eq!(syn.status.code(), Some(0), "{}", String::from_utf8_lossy(&syn.stderr));
    assert!(dir.path().join("cert_tau1.toml").exists());
    assert!(dir.path().join("cert_tau1.report.txt").exists());

    assert_eq!(ccmpc(&["verify"], &cfg, &out).status.code(), Some(0));

    let run = ccmpc(&["run"], &cfg, &out);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(trace.starts_with("t,x1,u,x1_ref,u_ref,residual,solve_ms,status\n"));
    assert_eq!(trace.lines().count(), 12);
    let plot = fs::read_to_string(out.join("plot_trace.gp")).unwrap();
    assert!(plot.contains("trace.csv"));
}

#[test]
fn uncontrollable_model_exits_with_synthesis_failure() {
    let dir = tempfile::tempdir().unwrap();
    let model = SCALAR_MODEL.replace("inputs = { u = 1.0 }\n", "");
    let cfg = scalar_setup(dir.path(), &model);
    let out = ccmpc(&["synthesize"], &cfg, &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("at state ["), "{err}");
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");

    let zero_beta = tank_config(dir.path(), |t| t.replacen("beta = 0.3", "beta = 0.0", 1));
    let res = ccmpc(&["run"], &zero_beta, &out);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("beta"));

    let missing = tank_config(dir.path(), |t| t.replace("tank_tau10.toml", "absent.toml"));
    let res = ccmpc(&["run"], &missing, &out);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("does not exist"));

    let one_variant = tank_config(dir.path(), |t| {
        let cut = t.find("[[bench.variants]]").unwrap();
        let second = t[cut + 1..].find("[[bench.variants]]").unwrap() + cut + 1;
        t[..second].to_string()
    });
    assert_eq!(ccmpc(&["bench"], &one_variant, &out).status.code(), Some(1));
}

#[test]
fn aborted_run_exits_with_three_and_keeps_the_partial_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = tank_config(dir.path(), |t| {
        t.replace("on_infeasible = \"least_violation\"", "on_infeasible = \"abort\"")
    });
    let res = ccmpc(&["run"], &cfg, &out);
    assert_eq!(res.status.code(), Some(3));
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().next(), Some(TRACE_HEADER));
}

#[test]
fn zero_horizon_writes_header_and_initial_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = tank_config(dir.path(), |t| t.replace("horizon = 120.0", "horizon = 0.0"));
    assert_eq!(ccmpc(&["run"], &cfg, &out).status.code(), Some(0));
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    let lines: Vec<&str> = trace.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("0,0,0,"));
}

#[test]
fn shipped_scenario_tracks_every_target() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = tank_config(dir.path(), |t| t);
    assert_eq!(ccmpc(&["run"], &cfg, &out).status.code(), Some(0));
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    let rows: Vec<Vec<f64>> = trace
        .lines()
        .skip(1)
        .map(|l| l.split(',').take(3).map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 121);
    for (end, target) in [(40.0, 2.5), (80.0, 5.0), (120.0, 7.5)] {
        for r in rows.iter().filter(|r| r[0] >= end - 10.0 && r[0] < end) {
            assert!((r[1] - target).abs() < 0.1 && (r[2] - target).abs() < 0.1, "{r:?}");
        }
    }
}

#[test]
fn bench_reports_predicted_steps_per_variant() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = tank_config(dir.path(), |t| {
        let t = t
            .replace("repetitions = 3", "repetitions = 1")
            .replace("horizon = 10.0", "horizon = 2.0");
        format!(
            "{t}\n[[bench.variants]]\nlabel = \"MPC(1,5)\"\nsegments = [[1.0, 1], [5.0, 1]]\n\n\
             [[certificates]]\ntau = 5.0\nbeta = 0.3\ndegree = 0\nstate_points = 11\n\
             region = [[2.0, 10.0], [2.0, 10.0]]\n"
        )
    });
    let res = Command::new(env!("CARGO_BIN_EXE_ccmpc"))
        .args(["bench", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let table = String::from_utf8_lossy(&res.stdout);
    assert!(table.contains("Method") && table.contains("Predicted Steps") && table.contains("Ave. Comp. Time"));
    let mut reader = csv::Reader::from_path(out.join("benchmark.csv")).unwrap();
    assert_eq!(reader.headers().unwrap().iter().collect::<Vec<_>>().join(","), BENCH_HEADER);
    let records: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(records[0].get(0), Some("MPC(tau1,tau2)"));
    let cols: Vec<(usize, usize)> = records
        .iter()
        .map(|r| (r[1].parse().unwrap(), r[2].parse().unwrap()))
        .collect();
    assert_eq!(cols, vec![(31, 4), (31, 31), (6, 2)]);
}
