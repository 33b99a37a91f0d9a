//! CSV sinks and the ledger re-audit behind `kfp check`.
//!
//! Floats are written with 17 significant digits so that a ledger read back
//! reproduces the written values exactly.

use std::path::Path;

use crate::data_prep::ConvergenceReport;
use crate::diagnostics::{energy_slack, BalanceLedger, LEDGER_COLUMNS};
use crate::error::{KfpError, Result};
use crate::integrator::{SweepReport, Tolerances};

/// Bumped whenever the ledger column set or order changes.
pub const CSV_VERSION: u32 = 1;

pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv_err(e: csv::Error) -> KfpError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => KfpError::Io(io),
        other => KfpError::InvalidArgument(format!("csv: {other:?}")),
    }
}

pub fn write_ledger(path: &Path, ledger: &BalanceLedger) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(LEDGER_COLUMNS).map_err(csv_err)?;
    for row in &ledger.rows {
        let record: Vec<String> = row
            .values()
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                if LEDGER_COLUMNS[k] == "picard_iters" {
                    row.picard_iters.to_string()
                } else {
                    fmt_float(v)
                }
            })
            .collect();
        w.write_record(&record).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Ledger rows in column order; the header must match [`LEDGER_COLUMNS`].
pub fn read_ledger(path: &Path) -> Result<Vec<[f64; 17]>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_owned).collect();
    if header != LEDGER_COLUMNS {
        return Err(KfpError::InvalidArgument(format!(
            "ledger header {header:?} does not match version {CSV_VERSION} columns {LEDGER_COLUMNS:?}"
        )));
    }
    let mut rows = Vec::new();
    for (n, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let mut row = [0.0; 17];
        for (k, field) in rec.iter().enumerate() {
            row[k] = field.trim().parse().map_err(|_| {
                KfpError::InvalidArgument(format!(
                    "row {} column {}: `{field}` is not a number",
                    n + 1,
                    LEDGER_COLUMNS[k]
                ))
            })?;
        }
        rows.push(row);
    }
    Ok(rows)
}

/// One failed ledger check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckFailure {
    pub column: &'static str,
    pub row: usize,
    pub message: String,
}

fn col(name: &str) -> usize {
    LEDGER_COLUMNS.iter().position(|c| *c == name).expect("known column")
}

/// Re-audit ledger rows against `tol`.
///
/// Recomputes the energy slack from the energy and flux columns, checks the
/// mass ledger and the inequality thresholds, requires the cumulative
/// columns to be nondecreasing and bounds `min_f` below by `-negativity`.
/// The energy threshold applies only when `energy_inequality` is set, i.e.
/// for unregularized drift. The entropy slack involves the interior source,
/// which is not in the CSV, so only its threshold is checked.
pub fn audit_ledger(rows: &[[f64; 17]], tol: &Tolerances, energy_inequality: bool) -> Vec<CheckFailure> {
    let mut fails = Vec::new();
    let Some(first) = rows.first() else {
        fails.push(CheckFailure {
            column: "t",
            row: 0,
            message: "ledger has no rows".into(),
        });
        return fails;
    };
    let (t, mass, energy, entropy) = (col("t"), col("mass"), col("energy"), col("entropy"));
    let (in_m, out_m, in_e, out_e) = (
        col("influx_mass"),
        col("outflux_mass"),
        col("influx_energy"),
        col("outflux_energy"),
    );
    let (es, hs, min_f) = (col("energy_slack"), col("entropy_slack"), col("min_f"));
    let e0 = first[energy];
    let entropy_tol = tol.entropy_abs + tol.entropy_rel * first[entropy].abs();
    let cumulative = [
        "D_cum",
        "fisher_cum",
        "m3",
        "influx_mass",
        "outflux_mass",
        "influx_energy",
        "outflux_energy",
    ];

    for (n, r) in rows.iter().enumerate() {
        if r.iter().any(|x| !x.is_finite()) {
            fails.push(CheckFailure {
                column: "t",
                row: n,
                message: "non-finite entry".into(),
            });
            continue;
        }
        let recomputed = energy_slack(e0, r[energy], r[in_e], r[out_e]);
        let scale = e0.abs().max(r[energy].abs()).max(r[in_e]).max(r[out_e]).max(f64::MIN_POSITIVE);
        if (recomputed - r[es]).abs() > 1e-12 * scale {
            fails.push(CheckFailure {
                column: "energy_slack",
                row: n,
                message: format!("stored {:e} but columns give {:e}", r[es], recomputed),
            });
        }
        if energy_inequality && r[es] / e0.max(f64::MIN_POSITIVE) > tol.energy {
            fails.push(CheckFailure {
                column: "energy_slack",
                row: n,
                message: format!("relative slack {:e} exceeds {:e}", r[es] / e0.max(f64::MIN_POSITIVE), tol.energy),
            });
        }
        if r[hs] > entropy_tol {
            fails.push(CheckFailure {
                column: "entropy_slack",
                row: n,
                message: format!("slack {:e} exceeds {:e}", r[hs], entropy_tol),
            });
        }
        let mass_scale = first[mass].max(r[in_m]).max(f64::MIN_POSITIVE);
        let closure = (r[mass] - first[mass] - r[in_m] + r[out_m]).abs() / mass_scale;
        if closure > tol.mass_ledger {
            fails.push(CheckFailure {
                column: "mass",
                row: n,
                message: format!("mass ledger residual {closure:e} exceeds {:e}", tol.mass_ledger),
            });
        }
        if r[min_f] < -tol.negativity {
            fails.push(CheckFailure {
                column: "min_f",
                row: n,
                message: format!("min f = {:e}", r[min_f]),
            });
        }
        if n > 0 {
            let p = &rows[n - 1];
            if !(r[t] > p[t]) {
                fails.push(CheckFailure {
                    column: "t",
                    row: n,
                    message: "time not increasing".into(),
                });
            }
            for name in cumulative {
                let k = col(name);
                if r[k] < p[k] {
                    fails.push(CheckFailure {
                        column: LEDGER_COLUMNS[k],
                        row: n,
                        message: "cumulative column decreased".into(),
                    });
                }
            }
        }
    }
    fails
}

pub const SWEEP_COLUMNS: [&str; 4] = ["epsilon", "third_moment_integral", "fisher_integral", "verdicts_passed"];

/// One row per ε, then a `max` row carrying the bounds over the sweep.
pub fn write_sweep(path: &Path, report: &SweepReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(SWEEP_COLUMNS).map_err(csv_err)?;
    for r in &report.rows {
        w.write_record([
            fmt_float(r.epsilon),
            fmt_float(r.third_moment_integral),
            fmt_float(r.fisher_integral),
            r.all_verdicts_passed.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let all = report.rows.iter().all(|r| r.all_verdicts_passed);
    w.write_record([
        "max".to_string(),
        fmt_float(report.max_third_moment),
        fmt_float(report.max_fisher),
        all.to_string(),
    ])
    .map_err(csv_err)?;
    w.flush()?;
    Ok(())
}

pub const CONVERGENCE_COLUMNS: [&str; 6] = [
    "target",
    "epsilon",
    "l1_gap",
    "energy_gap",
    "entropy_gap",
    "cap_active_fraction",
];

/// Truncation gaps for the initial datum and, when present, the inflow datum.
pub fn write_convergence(path: &Path, reports: &[(&str, &ConvergenceReport)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(CONVERGENCE_COLUMNS).map_err(csv_err)?;
    for (target, report) in reports {
        for r in &report.rows {
            w.write_record([
                target.to_string(),
                fmt_float(r.epsilon),
                fmt_float(r.l1_gap),
                fmt_float(r.energy_gap),
                fmt_float(r.entropy_gap),
                fmt_float(r.cap_active_fraction),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::LedgerRow;

    fn ledger() -> BalanceLedger {
        let mut l = BalanceLedger::default();
        let base = LedgerRow {
            t: 0.0,
            mass: 1.0,
            energy: 2.0,
            entropy: -1.5,
            d_cum: 0.0,
            fisher_cum: 0.0,
            m3: 0.0,
            influx_mass: 0.0,
            outflux_mass: 0.0,
            influx_energy: 0.0,
            outflux_energy: 0.0,
            influx_entropy: 0.0,
            outflux_entropy: 0.0,
            energy_slack: 0.0,
            entropy_slack: 0.0,
            picard_iters: 0,
            min_f: 0.0,
            source_cum: 0.0,
        };
        l.push(base);
        l.push(LedgerRow {
            t: 0.1,
            mass: 0.9,
            energy: 1.7,
            entropy: -1.6,
            d_cum: 0.05,
            fisher_cum: 0.02,
            m3: 0.1 / 3.0,
            outflux_mass: 0.1,
            outflux_energy: 0.3,
            outflux_entropy: 0.01,
            picard_iters: 3,
            ..base
        });
        l
    }

    #[test]
    fn ledger_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ledger.csv");
        let l = ledger();
        write_ledger(&p, &l).unwrap();
        let rows = read_ledger(&p).unwrap();
        for (a, b) in rows.iter().zip(&l.rows) {
            assert_eq!(a, &b.values());
        }
        assert!(audit_ledger(&rows, &Tolerances::default(), true).is_empty());
    }

    #[test]
    fn fmt_float_round_trips() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02e23, f64::MIN_POSITIVE] {
            assert_eq!(fmt_float(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn corrupted_energy_is_named() {
        let l = ledger();
        let mut rows: Vec<_> = l.rows.iter().map(|r| r.values()).collect();
        rows[1][col("energy")] *= 1.01;
        let fails = audit_ledger(&rows, &Tolerances::default(), true);
        assert!(fails.iter().any(|f| f.column == "energy_slack"), "{fails:?}");
    }

    #[test]
    fn header_and_cumulative_checks() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "t,mass\n0,1\n").unwrap();
        assert!(read_ledger(&p).is_err());
        let l = ledger();
        let mut rows: Vec<_> = l.rows.iter().map(|r| r.values()).collect();
        rows[1][col("D_cum")] = -1.0;
        rows[1][col("min_f")] = -1.0;
        let fails = audit_ledger(&rows, &Tolerances::default(), true);
        assert!(fails.iter().any(|f| f.column == "D_cum"));
        assert!(fails.iter().any(|f| f.column == "min_f"));
    }
}
