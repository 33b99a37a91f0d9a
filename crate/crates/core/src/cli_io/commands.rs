//! `kfp` subcommands.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data_prep::{
    boundary_convergence_report, boundary_table, convergence_report, sample_datum, truncate_boundary,
    truncate_initial, EquilibriumContext,
};
use crate::error::{KfpError, Result};
use crate::integrator::{run, sweep, BoundaryScenario, SimulationOutput};
use crate::phase_grid::{build_grid, classify_boundary};

use super::config::{parse_scenario_with, check_settings, ParsedScenario};
use super::manifest::{now_seconds, RunManifest};
use super::snapshot::{write_snapshot, Snapshot, SnapshotKind};
use super::tables::{audit_ledger, read_ledger, write_convergence, write_ledger, write_sweep};

pub const LEDGER_FILE: &str = "ledger.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const STATE_FILE: &str = "final_state.kfps";
pub const RESOLVED_FILE: &str = "scenario.resolved.toml";

/// Bound on `max/min` of the time-integrated third moment and Fisher
/// information across an ε sweep.
pub const SWEEP_RATIO_BOUND: f64 = 2.0;

#[derive(Debug, Parser)]
#[command(name = "kfp", version, about = "Kinetic Fokker-Planck solver with inequality audits")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one scenario and write the ledger, manifest and final state.
    Run(RunArgs),
    /// Re-audit a previously written ledger.
    Check(CheckArgs),
    /// Run a scenario over a list of ε and report the uniform bounds.
    Sweep(SweepArgs),
    /// Write truncated data and the truncation convergence report.
    Prep(PrepArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Override a `[tolerances]` entry, as `key=value`. Repeatable.
    #[arg(long = "tolerance", value_name = "KEY=VALUE")]
    pub tolerances: Vec<String>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// Output directory of a previous `run`.
    #[arg(long, conflicts_with = "csv", required_unless_present = "csv")]
    pub out: Option<PathBuf>,
    /// A ledger CSV checked against default tolerances.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long = "tolerance", value_name = "KEY=VALUE")]
    pub tolerances: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_delimiter = ',', default_value = "0.4,0.2,0.1,0.05")]
    pub eps: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct PrepArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.25,0.1")]
    pub eps: Vec<f64>,
}

/// `KFP_DETERMINISTIC`: unset or `1` selects ordered reductions, `0` lifts the
/// request. Reductions are ordered either way, so the flag is only recorded.
pub fn deterministic_from_env() -> Result<bool> {
    match std::env::var("KFP_DETERMINISTIC") {
        Err(_) => Ok(true),
        Ok(v) => match v.trim() {
            "1" | "" => Ok(true),
            "0" => Ok(false),
            other => Err(KfpError::InvalidArgument(format!(
                "KFP_DETERMINISTIC must be 0 or 1, got `{other}`"
            ))),
        },
    }
}

fn in_pool<T: Send>(workers: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| KfpError::InvalidArgument(format!("cannot build worker pool: {e}")))?;
    pool.install(f)
}

fn load(common: &Common) -> Result<ParsedScenario> {
    if common.workers == 0 {
        return Err(KfpError::InvalidArgument("--workers must be at least 1".into()));
    }
    let parsed = parse_scenario_with(&common.scenario, &common.tolerances)?;
    fs::create_dir_all(&common.out)?;
    fs::write(common.out.join(RESOLVED_FILE), &parsed.resolved_toml)?;
    Ok(parsed)
}

fn path_string(p: &Path) -> String {
    p.display().to_string()
}

/// Write ledger, state and manifest of one run into `dir`.
fn write_run(
    dir: &Path,
    parsed: &ParsedScenario,
    out: &SimulationOutput,
    started: f64,
    workers: usize,
    deterministic: bool,
) -> Result<RunManifest> {
    fs::create_dir_all(dir)?;
    let ledger = dir.join(LEDGER_FILE);
    let state = dir.join(STATE_FILE);
    write_ledger(&ledger, &out.ledger)?;
    write_snapshot(
        &state,
        &Snapshot {
            kind: SnapshotKind::State,
            grid: parsed.scenario.grid.clone(),
            values: out.final_state.clone(),
        },
    )?;
    let mut outputs = BTreeMap::new();
    outputs.insert("ledger".to_string(), path_string(&ledger));
    outputs.insert("final_state".to_string(), path_string(&state));
    outputs.insert("scenario".to_string(), path_string(&dir.join(RESOLVED_FILE)));
    let manifest = RunManifest::new(&parsed.hash, out, started, workers, deterministic, outputs);
    manifest.write(&dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

fn report_verdicts(manifest: &RunManifest) {
    for v in &manifest.verdicts {
        println!(
            "{} {:<26} slack {:>12.4e}  tolerance {:.4e}",
            match (v.passed, v.applicable) {
                (false, _) => "FAIL",
                (true, true) => "PASS",
                (true, false) => "N/A ",
            },
            v.name,
            v.slack,
            v.tolerance
        );
    }
}

pub fn cmd_run(args: &RunArgs) -> Result<i32> {
    let deterministic = deterministic_from_env()?;
    let parsed = load(&args.common)?;
    let started = now_seconds();
    let out = in_pool(args.common.workers, || run(&parsed.scenario))?;
    let manifest = write_run(&args.common.out, &parsed, &out, started, args.common.workers, deterministic)?;
    report_verdicts(&manifest);
    Ok(if manifest.failures.is_empty() { 0 } else { 1 })
}

pub fn cmd_check(args: &CheckArgs) -> Result<i32> {
    let (ledger, resolved) = match (&args.out, &args.csv) {
        (Some(dir), _) => (dir.join(LEDGER_FILE), Some(dir.join(RESOLVED_FILE))),
        (None, Some(csv)) => (csv.clone(), None),
        (None, None) => return Err(KfpError::InvalidArgument("give --out or --csv".into())),
    };
    let (tol, energy_inequality) = check_settings(resolved.as_deref(), &args.tolerances)?;
    let rows = read_ledger(&ledger)?;
    let fails = audit_ledger(&rows, &tol, energy_inequality);
    for f in &fails {
        println!("FAIL {} row {}: {}", f.column, f.row, f.message);
    }
    if fails.is_empty() {
        println!("PASS {} rows", rows.len());
        Ok(0)
    } else {
        Ok(1)
    }
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<i32> {
    let deterministic = deterministic_from_env()?;
    let parsed = load(&args.common)?;
    let started = now_seconds();
    let (report, outputs) = in_pool(args.common.workers, || sweep(&parsed.scenario, &args.eps))?;
    for (eps, out) in args.eps.iter().zip(&outputs) {
        let dir = args.common.out.join(format!("eps_{eps}"));
        let mut single = parsed.clone();
        single.scenario.epsilon = *eps;
        write_run(&dir, &single, out, started, args.common.workers, deterministic)?;
    }
    write_sweep(&args.common.out.join("sweep.csv"), &report)?;
    for r in &report.rows {
        println!(
            "eps {:<8} m3 {:.6e}  fisher {:.6e}  verdicts {}",
            r.epsilon,
            r.third_moment_integral,
            r.fisher_integral,
            if r.all_verdicts_passed { "pass" } else { "fail" }
        );
    }
    let uniform = report.uniform(SWEEP_RATIO_BOUND);
    println!(
        "bounds max m3 {:.6e} (ratio {:.3}) max fisher {:.6e} (ratio {:.3}) uniform {}",
        report.max_third_moment, report.third_moment_ratio, report.max_fisher, report.fisher_ratio, uniform
    );
    Ok(if uniform { 0 } else { 1 })
}

pub fn cmd_prep(args: &PrepArgs) -> Result<i32> {
    let parsed = load(&args.common)?;
    let s = &parsed.scenario;
    let grid = build_grid(&s.grid)?;
    let faces = classify_boundary(&grid);
    let eq = EquilibriumContext {
        epsilon: s.epsilon,
        unregularized_drift: s.unregularized_drift,
    };
    let f0 = sample_datum(&s.initial, &grid, &eq)?;
    write_snapshot(
        &args.common.out.join("initial.kfps"),
        &Snapshot {
            kind: SnapshotKind::State,
            grid: s.grid.clone(),
            values: truncate_initial(&f0, &grid, s.epsilon)?,
        },
    )?;
    let initial_report = convergence_report(&f0, &grid, &args.eps)?;
    let mut ok = initial_report.strictly_decreasing();
    let boundary_report = match &s.boundary {
        BoundaryScenario::Inflow(spec) => {
            let g = boundary_table(spec, &grid, &faces, &eq)?;
            write_snapshot(
                &args.common.out.join("boundary.kfps"),
                &Snapshot {
                    kind: SnapshotKind::BoundaryTable,
                    grid: s.grid.clone(),
                    values: truncate_boundary(&g, &grid, s.epsilon)?.concat(),
                },
            )?;
            Some(boundary_convergence_report(&g, &grid, &faces, &args.eps)?)
        }
        BoundaryScenario::Reflection { .. } => None,
    };
    let mut reports = vec![("initial", &initial_report)];
    if let Some(b) = &boundary_report {
        reports.push(("boundary", b));
        ok &= b.strictly_decreasing();
    }
    write_convergence(&args.common.out.join("convergence.csv"), &reports)?;
    for (target, r) in &reports {
        for row in &r.rows {
            println!(
                "{target:<8} eps {:<6} l1 {:.4e}  energy {:.4e}  entropy {:.4e}",
                row.epsilon, row.l1_gap, row.energy_gap, row.entropy_gap
            );
        }
    }
    println!("strictly decreasing gaps: {ok}");
    Ok(if ok { 0 } else { 1 })
}

/// Run a parsed command line; the value is the process exit status.
pub fn run_command(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Check(a) => cmd_check(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Prep(a) => cmd_prep(a),
    }
}
