//! Scenario files: TOML with fixed sections and no unknown keys.
//!
//! ```toml
//! [grid]            # dim, x_lower, x_upper, nx, v_max, nv (one entry per axis)
//! [boundary]        # kind = "inflow" | "reflection"; theta; inflow = "zero" |
//!                   # "maxwellian" | "equilibrium" | "snapshot"; rho, u, temp,
//!                   # temp_guess, path
//! [collision]       # model = "constant" | "density_saturating" |
//!                   # "power_saturating" | "table"; value, alpha, beta,
//!                   # rho_nodes, nu_nodes, supremum; unregularized_drift
//! [regularization]  # epsilon, truncate_data
//! [initial]         # kind = "zero" | "maxwellian" | "bimodal" | "box" |
//!                   # "near_vacuum" | "heavy_tail" | "equilibrium" | "snapshot"
//! [time]            # t_final, cfl | dt, splitting, order, reconstruction
//! [picard]          # max_iterations, tolerance
//! [output]          # every
//! [tolerances]      # audit thresholds
//! ```
//!
//! Every key a section kind does not use is rejected. Resolution fills every
//! default so that the echoed file reproduces the run on its own.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::collision::CollisionFrequencyModel;
use crate::data_prep::{BoundarySpec, DatumSpec, MaxwellianParams, Modulation};
use crate::error::{config_err, KfpError, Result};
use crate::integrator::{BoundaryScenario, DtPolicy, PicardSettings, Scenario, Splitting, Tolerances};
use crate::phase_grid::{build_grid, GridSpec};
use crate::transport_bc::Reconstruction;

use super::snapshot::{read_snapshot_for, SnapshotKind};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub grid: Option<GridSpec>,
    pub boundary: Option<BoundarySection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub collision: Option<CollisionSection>,
    pub regularization: Option<RegularizationSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialSection>,
    pub time: Option<TimeSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub picard: Option<PicardSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerances: Option<ToleranceSection>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySection {
    pub kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inflow: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temp: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temp_guess: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollisionSection {
    pub model: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_nodes: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nu_nodes: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub supremum: Option<f64>,
    pub unregularized_drift: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizationSection {
    pub epsilon: Option<f64>,
    pub truncate_data: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaxwellianSection {
    pub rho: Option<f64>,
    pub u: Option<Vec<f64>>,
    pub temp: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub kind: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temp: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub modulation_amplitude: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub modulation_wavenumber: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_range: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_range: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub height: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stripe: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub factor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub power: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temp_guess: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first: Option<MaxwellianSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub second: Option<MaxwellianSection>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub t_final: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cfl: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub splitting: Option<String>,
    pub order: Option<u8>,
    pub reconstruction: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PicardSection {
    pub max_iterations: Option<usize>,
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub every: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceSection {
    pub rho_floor_factor: Option<f64>,
    pub mass_ledger: Option<f64>,
    pub energy: Option<f64>,
    pub entropy_abs: Option<f64>,
    pub entropy_rel: Option<f64>,
    pub negativity: Option<f64>,
    pub reflection: Option<f64>,
    pub jensen: Option<f64>,
    pub variance: Option<f64>,
    pub mollification: Option<f64>,
    pub mollification_widths: Option<Vec<f64>>,
}

/// A validated scenario together with its fully materialized source.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedScenario {
    pub scenario: Scenario,
    pub resolved: ScenarioFile,
    /// The resolved file as TOML; its SHA-256 identifies the run.
    pub resolved_toml: String,
    pub hash: String,
}

/// Parse, validate and resolve a scenario file. Relative snapshot paths are
/// taken relative to the file's directory.
pub fn parse_scenario(path: &Path) -> Result<ParsedScenario> {
    parse_scenario_with(path, &[])
}

/// As [`parse_scenario`], with `key=value` overrides of the `[tolerances]` section.
pub fn parse_scenario_with(path: &Path, overrides: &[String]) -> Result<ParsedScenario> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_err(path.display().to_string(), format!("cannot read scenario: {e}")))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_scenario_str(&text, base, overrides)
}

pub fn parse_scenario_str(text: &str, base: &Path, overrides: &[String]) -> Result<ParsedScenario> {
    let mut raw: ScenarioFile = toml::from_str(text).map_err(|e| config_err("<file>", e.message().to_string()))?;
    apply_tolerance_overrides(&mut raw, overrides)?;
    resolve(raw, base)
}

/// Apply `key=value` overrides to the `[tolerances]` section.
pub fn apply_tolerance_overrides(raw: &mut ScenarioFile, overrides: &[String]) -> Result<()> {
    let tol = raw.tolerances.get_or_insert_with(Default::default);
    for item in overrides {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| config_err("--tolerance", format!("expected key=value, got `{item}`")))?;
        let key = key.trim();
        let path = format!("tolerances.{key}");
        let value = value.trim();
        let num = || -> Result<f64> {
            let x = value
                .parse::<f64>()
                .map_err(|_| config_err(path.clone(), format!("`{value}` is not a number")))?;
            if !(x.is_finite() && x >= 0.0) {
                return Err(config_err(path.clone(), "tolerances must be finite and non-negative"));
            }
            Ok(x)
        };
        match key {
            "rho_floor_factor" => tol.rho_floor_factor = Some(num()?),
            "mass_ledger" => tol.mass_ledger = Some(num()?),
            "energy" => tol.energy = Some(num()?),
            "entropy_abs" => tol.entropy_abs = Some(num()?),
            "entropy_rel" => tol.entropy_rel = Some(num()?),
            "negativity" => tol.negativity = Some(num()?),
            "reflection" => tol.reflection = Some(num()?),
            "jensen" => tol.jensen = Some(num()?),
            "variance" => tol.variance = Some(num()?),
            "mollification" => tol.mollification = Some(num()?),
            "mollification_widths" => {
                let widths = value
                    .split(',')
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| config_err(path.clone(), format!("`{value}` is not a comma-separated list")))?;
                tol.mollification_widths = Some(widths);
            }
            _ => return Err(config_err(path, "unknown tolerance key")),
        }
    }
    Ok(())
}

fn require<T>(value: Option<T>, path: &str) -> Result<T> {
    value.ok_or_else(|| config_err(path, "required key is missing"))
}

/// Reject keys that the selected kind does not read.
fn reject_unused(section: &str, kind: &str, present: &[(&str, bool)], allowed: &[&str]) -> Result<()> {
    for (key, set) in present {
        if *set && !allowed.contains(key) {
            return Err(config_err(
                format!("{section}.{key}"),
                format!("not used by kind `{kind}`"),
            ));
        }
    }
    Ok(())
}

fn positive(value: f64, path: &str) -> Result<f64> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(config_err(path, format!("must be positive and finite, got {value}")))
    }
}

fn velocity(u: Option<Vec<f64>>, dim: usize, path: &str) -> Result<Vec<f64>> {
    let u = u.unwrap_or_else(|| vec![0.0; dim]);
    if u.len() != dim {
        return Err(config_err(path, format!("needs {dim} components, got {}", u.len())));
    }
    Ok(u)
}

fn maxwellian_params(
    rho: Option<f64>,
    u: Option<Vec<f64>>,
    temp: Option<f64>,
    dim: usize,
    prefix: &str,
) -> Result<(MaxwellianParams, MaxwellianSection)> {
    let rho = positive(rho.unwrap_or(1.0), &format!("{prefix}.rho"))?;
    let u = velocity(u, dim, &format!("{prefix}.u"))?;
    let temp = positive(temp.unwrap_or(1.0), &format!("{prefix}.temp"))?;
    Ok((
        MaxwellianParams { rho, u: u.clone(), temp },
        MaxwellianSection {
            rho: Some(rho),
            u: Some(u),
            temp: Some(temp),
        },
    ))
}

fn absolute(base: &Path, p: &Path) -> PathBuf {
    let joined = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    std::fs::canonicalize(&joined).unwrap_or(joined)
}

fn resolve(raw: ScenarioFile, base: &Path) -> Result<ParsedScenario> {
    let grid = require(raw.grid, "grid")?;
    let built = build_grid(&grid).map_err(|e| config_err("grid", e.to_string()))?;
    let dim = grid.dim;

    let reg = raw.regularization.unwrap_or_default();
    let epsilon = require(reg.epsilon, "regularization.epsilon")?;
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(config_err(
            "regularization.epsilon",
            format!("the regularized system requires epsilon in (0, 1], got {epsilon}"),
        ));
    }
    let truncate_data = reg.truncate_data.unwrap_or(false);

    let b = require(raw.boundary, "boundary")?;
    let kind = require(b.kind.clone(), "boundary.kind")?;
    let present = [
        ("theta", b.theta.is_some()),
        ("inflow", b.inflow.is_some()),
        ("rho", b.rho.is_some()),
        ("u", b.u.is_some()),
        ("temp", b.temp.is_some()),
        ("temp_guess", b.temp_guess.is_some()),
        ("path", b.path.is_some()),
    ];
    let (boundary, boundary_out) = match kind.as_str() {
        "reflection" => {
            reject_unused("boundary", &kind, &present, &["theta"])?;
            let theta = require(b.theta, "boundary.theta")?;
            if !(0.0..1.0).contains(&theta) {
                return Err(config_err(
                    "boundary.theta",
                    format!("reflection coefficient must lie in [0, 1), got {theta}"),
                ));
            }
            (
                BoundaryScenario::Reflection { theta },
                BoundarySection {
                    kind: Some(kind.clone()),
                    theta: Some(theta),
                    ..Default::default()
                },
            )
        }
        "inflow" => {
            let inflow = b.inflow.clone().unwrap_or_else(|| "zero".into());
            let mut out = BoundarySection {
                kind: Some(kind.clone()),
                inflow: Some(inflow.clone()),
                ..Default::default()
            };
            let spec = match inflow.as_str() {
                "zero" => {
                    reject_unused("boundary", "inflow = zero", &present, &["inflow"])?;
                    BoundarySpec::Zero
                }
                "maxwellian" => {
                    reject_unused("boundary", "inflow = maxwellian", &present, &["inflow", "rho", "u", "temp"])?;
                    let (p, s) = maxwellian_params(b.rho, b.u, b.temp, dim, "boundary")?;
                    out.rho = s.rho;
                    out.u = s.u;
                    out.temp = s.temp;
                    BoundarySpec::Maxwellian(p)
                }
                "equilibrium" => {
                    reject_unused("boundary", "inflow = equilibrium", &present, &["inflow", "rho", "temp_guess"])?;
                    let rho = positive(b.rho.unwrap_or(1.0), "boundary.rho")?;
                    let temp_guess = positive(b.temp_guess.unwrap_or(1.0), "boundary.temp_guess")?;
                    out.rho = Some(rho);
                    out.temp_guess = Some(temp_guess);
                    BoundarySpec::Equilibrium { rho, temp_guess }
                }
                "snapshot" => {
                    reject_unused("boundary", "inflow = snapshot", &present, &["inflow", "path"])?;
                    let p = absolute(base, &require(b.path.clone(), "boundary.path")?);
                    let values = read_snapshot_for(&p, SnapshotKind::BoundaryTable, &grid)
                        .map_err(|e| config_err("boundary.path", e.to_string()))?;
                    out.path = Some(p);
                    let nv = built.nv_total;
                    BoundarySpec::Tabulated(values.chunks(nv).map(|c| c.to_vec()).collect())
                }
                other => {
                    return Err(config_err(
                        "boundary.inflow",
                        format!("unknown inflow datum `{other}` (zero, maxwellian, equilibrium, snapshot)"),
                    ))
                }
            };
            (BoundaryScenario::Inflow(spec), out)
        }
        other => {
            return Err(config_err(
                "boundary.kind",
                format!("unknown boundary kind `{other}` (inflow, reflection)"),
            ))
        }
    };

    let c = raw.collision.unwrap_or_default();
    let model_name = c.model.clone().unwrap_or_else(|| "constant".into());
    let present = [
        ("value", c.value.is_some()),
        ("alpha", c.alpha.is_some()),
        ("beta", c.beta.is_some()),
        ("rho_nodes", c.rho_nodes.is_some()),
        ("nu_nodes", c.nu_nodes.is_some()),
        ("supremum", c.supremum.is_some()),
    ];
    let unregularized_drift = c.unregularized_drift.unwrap_or(false);
    let mut collision_out = CollisionSection {
        model: Some(model_name.clone()),
        unregularized_drift: Some(unregularized_drift),
        ..Default::default()
    };
    let wrap = |e: KfpError, key: &str| config_err(format!("collision.{key}"), e.to_string());
    let collision = match model_name.as_str() {
        "constant" => {
            reject_unused("collision", &model_name, &present, &["value"])?;
            let value = c.value.unwrap_or(1.0);
            collision_out.value = Some(value);
            CollisionFrequencyModel::constant(value).map_err(|e| wrap(e, "value"))?
        }
        "density_saturating" => {
            reject_unused("collision", &model_name, &present, &[])?;
            CollisionFrequencyModel::DensitySaturating
        }
        "power_saturating" => {
            reject_unused("collision", &model_name, &present, &["alpha", "beta"])?;
            let alpha = require(c.alpha, "collision.alpha")?;
            let beta = require(c.beta, "collision.beta")?;
            collision_out.alpha = Some(alpha);
            collision_out.beta = Some(beta);
            CollisionFrequencyModel::power_saturating(alpha, beta).map_err(|e| wrap(e, "alpha"))?
        }
        "table" => {
            reject_unused("collision", &model_name, &present, &["rho_nodes", "nu_nodes", "supremum"])?;
            let rho = require(c.rho_nodes.clone(), "collision.rho_nodes")?;
            let nu = require(c.nu_nodes.clone(), "collision.nu_nodes")?;
            let sup = require(c.supremum, "collision.supremum")?;
            collision_out.rho_nodes = Some(rho.clone());
            collision_out.nu_nodes = Some(nu.clone());
            collision_out.supremum = Some(sup);
            CollisionFrequencyModel::table(rho, nu, Some(sup)).map_err(|e| wrap(e, "nu_nodes"))?
        }
        other => {
            return Err(config_err(
                "collision.model",
                format!("unknown model `{other}` (constant, density_saturating, power_saturating, table)"),
            ))
        }
    };

    let (initial, initial_out) = resolve_initial(raw.initial.unwrap_or_default(), &grid, base)?;

    let t = require(raw.time, "time")?;
    let t_final = require(t.t_final, "time.t_final")?;
    if !(t_final >= 0.0 && t_final.is_finite()) {
        return Err(config_err("time.t_final", format!("must be finite and >= 0, got {t_final}")));
    }
    let (dt, cfl_out, dt_out) = match (t.cfl, t.dt) {
        (Some(_), Some(_)) => return Err(config_err("time.dt", "give either `cfl` or `dt`, not both")),
        (_, Some(dt)) => (DtPolicy::Fixed(positive(dt, "time.dt")?), None, Some(dt)),
        (c, None) => {
            let c = c.unwrap_or(0.5);
            if !(c > 0.0 && c <= 1.0) {
                return Err(config_err("time.cfl", format!("must lie in (0, 1], got {c}")));
            }
            (DtPolicy::Cfl(c), Some(c), None)
        }
    };
    let splitting_name = t.splitting.unwrap_or_else(|| "strang".into());
    let splitting = match splitting_name.as_str() {
        "strang" => Splitting::Strang,
        "lie" => Splitting::Lie,
        other => return Err(config_err("time.splitting", format!("unknown splitting `{other}` (strang, lie)"))),
    };
    let time_order = t.order.unwrap_or(1);
    if !matches!(time_order, 1 | 2) {
        return Err(config_err("time.order", format!("must be 1 or 2, got {time_order}")));
    }
    let recon_name = t.reconstruction.unwrap_or_else(|| "upwind".into());
    let reconstruction = match recon_name.as_str() {
        "upwind" => Reconstruction::Upwind,
        "muscl" => Reconstruction::Muscl,
        other => {
            return Err(config_err(
                "time.reconstruction",
                format!("unknown reconstruction `{other}` (upwind, muscl)"),
            ))
        }
    };

    let p = raw.picard.unwrap_or_default();
    let defaults = PicardSettings::default();
    let picard = PicardSettings {
        max_iterations: p.max_iterations.unwrap_or(defaults.max_iterations),
        tolerance: p.tolerance.unwrap_or(defaults.tolerance),
    };
    if picard.max_iterations < 1 {
        return Err(config_err("picard.max_iterations", "must be at least 1"));
    }
    positive(picard.tolerance, "picard.tolerance")?;

    let output_every = raw.output.unwrap_or_default().every.unwrap_or(1);
    if output_every < 1 {
        return Err(config_err("output.every", "must be at least 1"));
    }

    let tolerances = resolve_tolerances(raw.tolerances.unwrap_or_default())?;

    let scenario = Scenario {
        grid: grid.clone(),
        boundary,
        collision,
        epsilon,
        initial,
        truncate_data,
        t_final,
        dt,
        picard,
        output_every,
        splitting,
        time_order,
        unregularized_drift,
        reconstruction,
        tolerances: tolerances.clone(),
    };
    scenario.validate().map_err(|e| config_err("<scenario>", e.to_string()))?;

    let resolved = ScenarioFile {
        grid: Some(grid),
        boundary: Some(boundary_out),
        collision: Some(collision_out),
        regularization: Some(RegularizationSection {
            epsilon: Some(epsilon),
            truncate_data: Some(truncate_data),
        }),
        initial: Some(initial_out),
        time: Some(TimeSection {
            t_final: Some(t_final),
            cfl: cfl_out,
            dt: dt_out,
            splitting: Some(splitting_name),
            order: Some(time_order),
            reconstruction: Some(recon_name),
        }),
        picard: Some(PicardSection {
            max_iterations: Some(picard.max_iterations),
            tolerance: Some(picard.tolerance),
        }),
        output: Some(OutputSection {
            every: Some(output_every),
        }),
        tolerances: Some(tolerance_section(&tolerances)),
    };
    let resolved_toml = toml::to_string(&resolved)
        .map_err(|e| KfpError::InvalidArgument(format!("cannot serialize resolved scenario: {e}")))?;
    let hash = format!("{:x}", Sha256::digest(resolved_toml.as_bytes()));
    Ok(ParsedScenario {
        scenario,
        resolved,
        resolved_toml,
        hash,
    })
}

fn resolve_initial(s: InitialSection, grid: &GridSpec, base: &Path) -> Result<(DatumSpec, InitialSection)> {
    let dim = grid.dim;
    let kind = s.kind.clone().unwrap_or_else(|| "maxwellian".into());
    let present = [
        ("rho", s.rho.is_some()),
        ("u", s.u.is_some()),
        ("temp", s.temp.is_some()),
        ("modulation_amplitude", s.modulation_amplitude.is_some()),
        ("modulation_wavenumber", s.modulation_wavenumber.is_some()),
        ("x_range", s.x_range.is_some()),
        ("v_range", s.v_range.is_some()),
        ("height", s.height.is_some()),
        ("stripe", s.stripe.is_some()),
        ("factor", s.factor.is_some()),
        ("amplitude", s.amplitude.is_some()),
        ("power", s.power.is_some()),
        ("temp_guess", s.temp_guess.is_some()),
        ("path", s.path.is_some()),
        ("first", s.first.is_some()),
        ("second", s.second.is_some()),
    ];
    let mut out = InitialSection {
        kind: Some(kind.clone()),
        ..Default::default()
    };
    const MOD: [&str; 2] = ["modulation_amplitude", "modulation_wavenumber"];
    let modulation = |out: &mut InitialSection| -> Result<Option<Modulation>> {
        let amplitude = s.modulation_amplitude.unwrap_or(0.0);
        let wavenumber = s.modulation_wavenumber.unwrap_or(1);
        if !(amplitude.abs() < 1.0) {
            return Err(config_err(
                "initial.modulation_amplitude",
                format!("must satisfy |a| < 1 to keep the density positive, got {amplitude}"),
            ));
        }
        out.modulation_amplitude = Some(amplitude);
        out.modulation_wavenumber = Some(wavenumber);
        Ok((amplitude != 0.0).then_some(Modulation { amplitude, wavenumber }))
    };
    let spec = match kind.as_str() {
        "zero" => {
            reject_unused("initial", &kind, &present, &[])?;
            DatumSpec::Zero
        }
        "maxwellian" => {
            let allowed = ["rho", "u", "temp", MOD[0], MOD[1]];
            reject_unused("initial", &kind, &present, &allowed)?;
            let (params, m) = maxwellian_params(s.rho, s.u.clone(), s.temp, dim, "initial")?;
            out.rho = m.rho;
            out.u = m.u;
            out.temp = m.temp;
            DatumSpec::Maxwellian {
                params,
                modulation: modulation(&mut out)?,
            }
        }
        "bimodal" => {
            reject_unused("initial", &kind, &present, &["first", "second", MOD[0], MOD[1]])?;
            let first = require(s.first.clone(), "initial.first")?;
            let second = require(s.second.clone(), "initial.second")?;
            let (p1, m1) = maxwellian_params(first.rho, first.u, first.temp, dim, "initial.first")?;
            let (p2, m2) = maxwellian_params(second.rho, second.u, second.temp, dim, "initial.second")?;
            out.first = Some(m1);
            out.second = Some(m2);
            DatumSpec::Bimodal {
                first: p1,
                second: p2,
                modulation: modulation(&mut out)?,
            }
        }
        "box" => {
            reject_unused("initial", &kind, &present, &["x_range", "v_range", "height"])?;
            let x = require(s.x_range, "initial.x_range")?;
            let v = require(s.v_range, "initial.v_range")?;
            let height = positive(require(s.height, "initial.height")?, "initial.height")?;
            for (key, r) in [("x_range", x), ("v_range", v)] {
                if !(r[0] < r[1]) {
                    return Err(config_err(format!("initial.{key}"), "lower end must be below upper end"));
                }
            }
            out.x_range = Some(x);
            out.v_range = Some(v);
            out.height = Some(height);
            DatumSpec::Box { x, v, height }
        }
        "near_vacuum" => {
            reject_unused("initial", &kind, &present, &["rho", "u", "temp", "stripe", "factor"])?;
            let (base_params, m) = maxwellian_params(s.rho, s.u.clone(), s.temp, dim, "initial")?;
            let stripe = require(s.stripe, "initial.stripe")?;
            let factor = require(s.factor, "initial.factor")?;
            if !(factor >= 0.0 && factor <= 1.0) {
                return Err(config_err("initial.factor", format!("must lie in [0, 1], got {factor}")));
            }
            out.rho = m.rho;
            out.u = m.u;
            out.temp = m.temp;
            out.stripe = Some(stripe);
            out.factor = Some(factor);
            DatumSpec::NearVacuumStripe {
                base: base_params,
                stripe,
                factor,
            }
        }
        "heavy_tail" => {
            reject_unused("initial", &kind, &present, &["amplitude", "power"])?;
            let amplitude = positive(require(s.amplitude, "initial.amplitude")?, "initial.amplitude")?;
            let power = positive(require(s.power, "initial.power")?, "initial.power")?;
            out.amplitude = Some(amplitude);
            out.power = Some(power);
            DatumSpec::HeavyTail { amplitude, power }
        }
        "equilibrium" => {
            reject_unused("initial", &kind, &present, &["rho", "temp_guess"])?;
            let rho = positive(s.rho.unwrap_or(1.0), "initial.rho")?;
            let temp_guess = positive(s.temp_guess.unwrap_or(1.0), "initial.temp_guess")?;
            out.rho = Some(rho);
            out.temp_guess = Some(temp_guess);
            DatumSpec::Equilibrium { rho, temp_guess }
        }
        "snapshot" => {
            reject_unused("initial", &kind, &present, &["path"])?;
            let p = absolute(base, &require(s.path.clone(), "initial.path")?);
            let values = read_snapshot_for(&p, SnapshotKind::State, grid)
                .map_err(|e| config_err("initial.path", e.to_string()))?;
            out.path = Some(p);
            DatumSpec::Tabulated { values }
        }
        other => {
            return Err(config_err(
                "initial.kind",
                format!(
                    "unknown initial datum `{other}` (zero, maxwellian, bimodal, box, near_vacuum, heavy_tail, equilibrium, snapshot)"
                ),
            ))
        }
    };
    Ok((spec, out))
}

fn resolve_tolerances(s: ToleranceSection) -> Result<Tolerances> {
    let d = Tolerances::default();
    let t = Tolerances {
        rho_floor_factor: s.rho_floor_factor.unwrap_or(d.rho_floor_factor),
        mass_ledger: s.mass_ledger.unwrap_or(d.mass_ledger),
        energy: s.energy.unwrap_or(d.energy),
        entropy_abs: s.entropy_abs.unwrap_or(d.entropy_abs),
        entropy_rel: s.entropy_rel.unwrap_or(d.entropy_rel),
        negativity: s.negativity.unwrap_or(d.negativity),
        reflection: s.reflection.unwrap_or(d.reflection),
        jensen: s.jensen.unwrap_or(d.jensen),
        variance: s.variance.unwrap_or(d.variance),
        mollification: s.mollification.unwrap_or(d.mollification),
        mollification_widths: s.mollification_widths.unwrap_or(d.mollification_widths),
    };
    let scalars = [
        ("rho_floor_factor", t.rho_floor_factor),
        ("mass_ledger", t.mass_ledger),
        ("energy", t.energy),
        ("entropy_abs", t.entropy_abs),
        ("entropy_rel", t.entropy_rel),
        ("negativity", t.negativity),
        ("reflection", t.reflection),
        ("jensen", t.jensen),
        ("variance", t.variance),
        ("mollification", t.mollification),
    ];
    for (key, v) in scalars {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(config_err(format!("tolerances.{key}"), format!("must be finite and >= 0, got {v}")));
        }
    }
    if t.mollification_widths.is_empty() || t.mollification_widths.iter().any(|&w| !(w > 0.0)) {
        return Err(config_err(
            "tolerances.mollification_widths",
            "needs at least one positive width",
        ));
    }
    Ok(t)
}

fn tolerance_section(t: &Tolerances) -> ToleranceSection {
    ToleranceSection {
        rho_floor_factor: Some(t.rho_floor_factor),
        mass_ledger: Some(t.mass_ledger),
        energy: Some(t.energy),
        entropy_abs: Some(t.entropy_abs),
        entropy_rel: Some(t.entropy_rel),
        negativity: Some(t.negativity),
        reflection: Some(t.reflection),
        jensen: Some(t.jensen),
        variance: Some(t.variance),
        mollification: Some(t.mollification),
        mollification_widths: Some(t.mollification_widths.clone()),
    }
}

/// Tolerances and drift mode read from a resolved scenario file. Without a
/// file the defaults apply and the drift is taken as unregularized, so that
/// every inequality is audited.
pub fn check_settings(path: Option<&Path>, overrides: &[String]) -> Result<(Tolerances, bool)> {
    let (mut raw, found) = match path.filter(|p| p.exists()) {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            let raw = toml::from_str::<ScenarioFile>(&text)
                .map_err(|e| config_err(path.display().to_string(), e.message().to_string()))?;
            (raw, true)
        }
        None => (ScenarioFile::default(), false),
    };
    let unregularized = match &raw.collision {
        Some(c) => c.unregularized_drift.unwrap_or(false),
        None => !found,
    };
    apply_tolerance_overrides(&mut raw, overrides)?;
    Ok((resolve_tolerances(raw.tolerances.unwrap_or_default())?, unregularized))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[grid]
dim = 1
x_lower = [0.0]
x_upper = [1.0]
nx = [8]
v_max = [6.0]
nv = [16]

[boundary]
kind = "reflection"
theta = 0.5

[regularization]
epsilon = 0.1

[time]
t_final = 0.1
"#;

    fn parse(text: &str) -> Result<ParsedScenario> {
        parse_scenario_str(text, Path::new("."), &[])
    }

    fn err_path(text: &str) -> String {
        match parse(text).unwrap_err() {
            KfpError::Config { path, .. } => path,
            e => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn minimal_file_gets_documented_defaults() {
        let p = parse(MINIMAL).unwrap();
        let s = &p.scenario;
        assert_eq!(s.collision, CollisionFrequencyModel::Constant { value: 1.0 });
        assert_eq!(s.dt, DtPolicy::Cfl(0.5));
        assert_eq!(s.splitting, Splitting::Strang);
        assert_eq!(s.time_order, 1);
        assert_eq!(s.picard, PicardSettings::default());
        assert_eq!(s.tolerances, Tolerances::default());
        assert!(matches!(s.initial, DatumSpec::Maxwellian { modulation: None, .. }));
        assert!(p.resolved_toml.contains("unregularized_drift = false"));
        assert!(p.resolved_toml.contains("[tolerances]"));
    }

    #[test]
    fn resolved_echo_is_a_fixed_point() {
        let p = parse(MINIMAL).unwrap();
        let q = parse(&p.resolved_toml).unwrap();
        assert_eq!(p.scenario, q.scenario);
        assert_eq!(p.hash, q.hash);
        assert_eq!(p.hash.len(), 64);
    }

    #[test]
    fn theta_one_is_rejected_with_range() {
        let text = MINIMAL.replace("theta = 0.5", "theta = 1.0");
        let e = parse(&text).unwrap_err().to_string();
        assert!(e.contains("boundary.theta") && e.contains("[0, 1)"), "{e}");
    }

    #[test]
    fn epsilon_zero_is_rejected() {
        let text = MINIMAL.replace("epsilon = 0.1", "epsilon = 0.0");
        let e = parse(&text).unwrap_err().to_string();
        assert!(e.contains("regularization.epsilon") && e.contains("epsilon"), "{e}");
    }

    #[test]
    fn unknown_and_misplaced_keys_are_rejected() {
        let typo = MINIMAL.replace("t_final", "t_fianl");
        assert!(parse(&typo).unwrap_err().to_string().contains("t_fianl"));
        let extra = format!("{MINIMAL}\n[bogus]\nx = 1\n");
        assert!(parse(&extra).is_err());
        let misplaced = MINIMAL.replace("theta = 0.5", "theta = 0.5\ninflow = \"zero\"");
        assert_eq!(err_path(&misplaced), "boundary.inflow");
    }

    #[test]
    fn constraint_errors_carry_key_paths() {
        assert_eq!(err_path(&MINIMAL.replace("nx = [8]", "nx = [0]")), "grid");
        assert_eq!(err_path(&format!("{MINIMAL}cfl = 1.5\n")), "time.cfl");
        let inflow = MINIMAL.replace(
            "kind = \"reflection\"\ntheta = 0.5",
            "kind = \"inflow\"\ninflow = \"maxwellian\"\nu = [0.0, 1.0]",
        );
        assert_eq!(err_path(&inflow), "boundary.u");
        let table = format!("{MINIMAL}\n[collision]\nmodel = \"table\"\nrho_nodes = [0.0, 1.0]\nnu_nodes = [0.5, 1.0]\n");
        assert_eq!(err_path(&table), "collision.supremum");
    }

    #[test]
    fn tolerance_overrides_apply_and_change_hash() {
        let base = parse(MINIMAL).unwrap();
        let p = parse_scenario_str(MINIMAL, Path::new("."), &["energy=1e-6".into(), "mollification_widths=2,4".into()])
            .unwrap();
        assert_eq!(p.scenario.tolerances.energy, 1e-6);
        assert_eq!(p.scenario.tolerances.mollification_widths, vec![2.0, 4.0]);
        assert_ne!(base.hash, p.hash);
        assert!(parse_scenario_str(MINIMAL, Path::new("."), &["nope=1".into()]).is_err());
        assert!(parse_scenario_str(MINIMAL, Path::new("."), &["energy".into()]).is_err());
    }

    #[test]
    fn bimodal_section_parses() {
        let text = MINIMAL.to_string()
            + "\n[initial]\nkind = \"bimodal\"\nmodulation_amplitude = 0.5\n\
               first = { rho = 0.5, u = [-2.0], temp = 0.5 }\nsecond = { rho = 0.5, u = [2.0], temp = 0.5 }\n";
        let p = parse(&text).unwrap();
        match &p.scenario.initial {
            DatumSpec::Bimodal { first, second, modulation } => {
                assert_eq!(first.u, vec![-2.0]);
                assert_eq!(second.temp, 0.5);
                assert_eq!(modulation.unwrap().wavenumber, 1);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(parse(&p.resolved_toml).unwrap().scenario, p.scenario);
    }
}
