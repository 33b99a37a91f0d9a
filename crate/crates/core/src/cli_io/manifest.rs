//! Run manifests: provenance, verdicts and output paths as JSON.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{KfpError, Result};
use crate::integrator::{RunSummary, SimulationOutput, VERDICT_NAMES};

use super::tables::CSV_VERSION;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictEntry {
    pub name: String,
    pub applicable: bool,
    pub passed: bool,
    pub slack: f64,
    pub tolerance: f64,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub steps: usize,
    pub dt: f64,
    pub unconverged_steps: usize,
    pub max_picard_change: f64,
    pub truncation_fraction: f64,
    pub max_clamp: f64,
    pub mollification_worst: f64,
    pub fisher_integral: f64,
    pub third_moment_integral: f64,
    pub rho_floor: f64,
}

impl From<&RunSummary> for SummaryEntry {
    fn from(s: &RunSummary) -> Self {
        Self {
            steps: s.steps,
            dt: s.dt,
            unconverged_steps: s.unconverged_steps,
            max_picard_change: s.max_picard_change,
            truncation_fraction: s.truncation_fraction,
            max_clamp: s.max_clamp,
            mollification_worst: s.mollification_worst,
            fisher_integral: s.fisher_integral,
            third_moment_integral: s.third_moment_integral,
            rho_floor: s.rho_floor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub scenario_hash: String,
    pub tool_version: String,
    pub csv_version: u32,
    /// Seconds since the Unix epoch.
    pub started: f64,
    pub finished: f64,
    pub workers: usize,
    pub deterministic: bool,
    pub verdicts: Vec<VerdictEntry>,
    /// Names of the failed verdicts, in report order.
    pub failures: Vec<String>,
    pub summary: SummaryEntry,
    /// Output name to path.
    pub outputs: BTreeMap<String, String>,
}

pub fn now_seconds() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

impl RunManifest {
    pub fn new(
        hash: &str,
        output: &SimulationOutput,
        started: f64,
        workers: usize,
        deterministic: bool,
        outputs: BTreeMap<String, String>,
    ) -> Self {
        let verdicts: Vec<VerdictEntry> = output
            .verdicts
            .iter()
            .map(|v| VerdictEntry {
                name: v.name.to_string(),
                applicable: v.applicable,
                passed: v.passed,
                slack: v.slack,
                tolerance: v.tolerance,
                note: v.note.clone(),
            })
            .collect();
        let failures = verdicts.iter().filter(|v| !v.passed).map(|v| v.name.clone()).collect();
        Self {
            scenario_hash: hash.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            csv_version: CSV_VERSION,
            started,
            finished: now_seconds(),
            workers,
            deterministic,
            verdicts,
            failures,
            summary: SummaryEntry::from(&output.summary),
            outputs,
        }
    }

    /// Every documented verdict appears exactly once.
    pub fn is_complete(&self) -> bool {
        self.verdicts.len() == VERDICT_NAMES.len()
            && VERDICT_NAMES
                .iter()
                .all(|n| self.verdicts.iter().filter(|v| v.name == *n).count() == 1)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| KfpError::InvalidArgument(format!("cannot serialize manifest: {e}")))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| KfpError::InvalidArgument(format!("manifest: {e}")))
    }
}
