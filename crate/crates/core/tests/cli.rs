//! End-to-end tests of the `kfp` binary on small scenarios.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use kfp_core::cli_io::{read_snapshot, RunManifest, SnapshotKind};
use kfp_core::integrator::VERDICT_NAMES;

const SMALL: &str = r#"
[grid]
dim = 1
x_lower = [0.0]
x_upper = [1.0]
nx = [12]
v_max = [6.0]
nv = [24]

[boundary]
kind = "reflection"
theta = 0.5

[collision]
unregularized_drift = true

[regularization]
epsilon = 1e-3

[initial]
kind = "bimodal"
modulation_amplitude = 0.5
first = { rho = 0.5, u = [-1.5], temp = 0.5 }
second = { rho = 0.5, u = [1.5], temp = 0.5 }

[time]
t_final = 0.1
"#;

fn kfp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kfp"))
        .args(args)
        .env("KFP_DETERMINISTIC", "1")
        .output()
        .expect("binary runs")
}

fn write_scenario(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_writes_outputs_and_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_scenario(dir.path(), "s.toml", SMALL);
    let out = dir.path().join("out");
    let o = kfp(&["run", "--scenario", &sc, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));

    let manifest = RunManifest::read(&out.join("manifest.json")).unwrap();
    assert!(manifest.is_complete());
    assert!(manifest.failures.is_empty());
    let names: Vec<&str> = manifest.verdicts.iter().map(|v| v.name.as_str()).collect();
    assert_eq!(names, VERDICT_NAMES);
    assert_eq!(manifest.scenario_hash.len(), 64);

    let snap = read_snapshot(&out.join("final_state.kfps")).unwrap();
    assert_eq!(snap.kind, SnapshotKind::State);
    assert_eq!(snap.values.len(), 12 * 24);
    let resolved = fs::read_to_string(out.join("scenario.resolved.toml")).unwrap();
    assert!(resolved.contains("[tolerances]"));

    let c = kfp(&["check", "--out", out.to_str().unwrap()]);
    assert_eq!(c.status.code(), Some(0), "{}", stdout(&c));
}

#[test]
fn check_names_corrupted_energy_column() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_scenario(dir.path(), "s.toml", SMALL);
    let out = dir.path().join("out");
    assert!(kfp(&["run", "--scenario", &sc, "--out", out.to_str().unwrap()]).status.success());

    let ledger = out.join("ledger.csv");
    let text = fs::read_to_string(&ledger).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
    let k = lines[0].split(',').position(|c| c == "energy").unwrap();
    let mut fields: Vec<String> = lines[3].split(',').map(str::to_owned).collect();
    let e: f64 = fields[k].parse().unwrap();
    fields[k] = format!("{:.16e}", e * 1.01);
    lines[3] = fields.join(",");
    fs::write(&ledger, lines.join("\n") + "\n").unwrap();

    let c = kfp(&["check", "--out", out.to_str().unwrap()]);
    assert_eq!(c.status.code(), Some(1));
    assert!(stdout(&c).contains("energy_slack"), "{}", stdout(&c));
}

#[test]
fn invalid_scenarios_exit_with_key_paths() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    let cases = [
        (SMALL.replace("theta = 0.5", "theta = 1.0"), "boundary.theta"),
        (SMALL.replace("epsilon = 1e-3", "epsilon = 0.0"), "regularization.epsilon"),
        (SMALL.replace("t_final", "t_end"), "t_end"),
    ];
    for (text, needle) in cases {
        let sc = write_scenario(dir.path(), "bad.toml", &text);
        let o = kfp(&["run", "--scenario", &sc, "--out", out]);
        assert_eq!(o.status.code(), Some(2));
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains(needle), "{err}");
    }
    let sc = write_scenario(dir.path(), "s.toml", SMALL);
    let o = kfp(&["run", "--scenario", &sc, "--out", out, "--tolerance", "nonsense=1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn tolerance_overrides_are_validated() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_scenario(dir.path(), "s.toml", SMALL);
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    for bad in ["mollification=-0.9", "energy=nan", "jensen", "mollification_widths=1,x"] {
        let o = kfp(&["run", "--scenario", &sc, "--out", out, "--tolerance", bad]);
        assert_eq!(o.status.code(), Some(2), "{bad}");
        assert!(String::from_utf8_lossy(&o.stderr).contains("tolerance"), "{bad}");
    }
}

#[test]
fn sweep_reports_one_row_per_epsilon_and_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace("unregularized_drift = true", "unregularized_drift = false");
    let sc = write_scenario(dir.path(), "s.toml", &text);
    let out = dir.path().join("sweep");
    let o = kfp(&["sweep", "--scenario", &sc, "--out", out.to_str().unwrap(), "--eps", "0.4,0.2,0.1,0.05"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 1 + 4 + 1);
    assert!(lines[5].starts_with("max,"));
    assert!(stdout(&o).contains("bounds"));
    for eps in ["0.4", "0.2", "0.1", "0.05"] {
        assert!(out.join(format!("eps_{eps}")).join("ledger.csv").exists());
    }
}

#[test]
fn prep_output_feeds_a_snapshot_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace(
        "kind = \"reflection\"\ntheta = 0.5",
        "kind = \"inflow\"\ninflow = \"maxwellian\"",
    );
    let sc = write_scenario(dir.path(), "s.toml", &text);
    let prep = dir.path().join("prep");
    let o = kfp(&["prep", "--scenario", &sc, "--out", prep.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(prep.join("convergence.csv").exists());
    assert_eq!(read_snapshot(&prep.join("boundary.kfps")).unwrap().kind, SnapshotKind::BoundaryTable);

    // run from the prepared snapshots, with paths relative to the scenario file
    let start = text.find("[initial]").unwrap();
    let end = text.find("[time]").unwrap();
    let tabulated = format!(
        "{}[initial]\nkind = \"snapshot\"\npath = \"prep/initial.kfps\"\n\n{}",
        &text[..start],
        &text[end..]
    )
    .replace("inflow = \"maxwellian\"", "inflow = \"snapshot\"\npath = \"prep/boundary.kfps\"");
    let sc2 = write_scenario(dir.path(), "tab.toml", &tabulated);
    let out = dir.path().join("out");
    let o = kfp(&["run", "--scenario", &sc2, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), String::from_utf8_lossy(&o.stderr));

    // a snapshot on a different grid is refused
    let other = tabulated.replace("nx = [12]", "nx = [10]");
    let sc3 = write_scenario(dir.path(), "other.toml", &other);
    let o = kfp(&["run", "--scenario", &sc3, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("dimension mismatch"));
}

#[test]
fn outputs_are_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_scenario(dir.path(), "s.toml", SMALL);
    let mut ledgers = Vec::new();
    let mut states = Vec::new();
    for w in ["1", "3"] {
        let out = dir.path().join(format!("w{w}"));
        let o = kfp(&["run", "--scenario", &sc, "--out", out.to_str().unwrap(), "--workers", w]);
        assert!(o.status.success());
        ledgers.push(fs::read(out.join("ledger.csv")).unwrap());
        states.push(fs::read(out.join("final_state.kfps")).unwrap());
    }
    assert_eq!(ledgers[0], ledgers[1]);
    assert_eq!(states[0], states[1]);
}

#[test]
fn bad_deterministic_flag_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_scenario(dir.path(), "s.toml", SMALL);
    let o = Command::new(env!("CARGO_BIN_EXE_kfp"))
        .args(["run", "--scenario", &sc, "--out", dir.path().join("o").to_str().unwrap()])
        .env("KFP_DETERMINISTIC", "maybe")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}
