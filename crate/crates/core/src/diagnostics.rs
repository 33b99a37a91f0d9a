//! Integral diagnostics and the audited inequalities.
//!
//! Everything here is a pure function of a read-only snapshot. Gradients are
//! central differences, one-sided at the velocity cutoff. `√f` is differenced
//! directly.

use crate::collision::{
    cell_coefficients, eval_collision_frequency, velocity_gradient, CollisionFrequencyModel,
    CollisionSettings, POSITIVITY_FLOOR,
};
use crate::error::{KfpError, Result};
use crate::moments::{MacroFields, RegularizedFields};
use crate::phase_grid::PhaseGrid;

/// Column order of the ledger CSV.
pub const LEDGER_COLUMNS: [&str; 17] = [
    "t",
    "mass",
    "energy",
    "entropy",
    "D_cum",
    "fisher_cum",
    "m3",
    "influx_mass",
    "outflux_mass",
    "influx_energy",
    "outflux_energy",
    "influx_entropy",
    "outflux_entropy",
    "energy_slack",
    "entropy_slack",
    "picard_iters",
    "min_f",
];

#[inline]
fn phi(x: f64) -> f64 {
    if x < POSITIVITY_FLOOR {
        0.0
    } else {
        x * x.ln()
    }
}

pub fn total_mass(f: &[f64], grid: &PhaseGrid) -> f64 {
    f.iter().sum::<f64>() * grid.cell_volume()
}

/// `∫∫ (1 + |v|²) f`.
pub fn total_energy(f: &[f64], grid: &PhaseGrid) -> f64 {
    let w: Vec<f64> = (0..grid.nv_total).map(|iv| 1.0 + grid.v_norm_sq(iv)).collect();
    weighted_sum(f, grid, &w)
}

/// `∫∫ f log f` with `0 log 0 = 0`; values below the positivity floor are skipped.
pub fn entropy(f: &[f64], grid: &PhaseGrid) -> f64 {
    f.iter().map(|&x| phi(x)).sum::<f64>() * grid.cell_volume()
}

/// `∫∫ |v|³ f`.
pub fn third_moment(f: &[f64], grid: &PhaseGrid) -> f64 {
    let w: Vec<f64> = (0..grid.nv_total).map(|iv| grid.v_norm_sq(iv).powf(1.5)).collect();
    weighted_sum(f, grid, &w)
}

fn weighted_sum(f: &[f64], grid: &PhaseGrid, w: &[f64]) -> f64 {
    let mut total = 0.0;
    for ix in 0..grid.nx_total {
        total += grid.column(f, ix).iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
    }
    total * grid.cell_volume()
}

/// Share of the mass within 10% of the velocity cutoff on any axis.
pub fn truncation_fraction(f: &[f64], grid: &PhaseGrid) -> f64 {
    let mass = total_mass(f, grid);
    if mass <= 0.0 {
        return 0.0;
    }
    let w: Vec<f64> = (0..grid.nv_total)
        .map(|iv| {
            let v = grid.v_center(iv);
            let near = (0..grid.dim).any(|a| v[a].abs() >= 0.9 * grid.v[a].upper);
            if near {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    weighted_sum(f, grid, &w) / mass
}

/// Squared central-difference gradient of `g` at velocity `iv`.
fn grad_sq(grid: &PhaseGrid, g: &[f64], iv: usize) -> f64 {
    (0..grid.dim)
        .map(|a| velocity_gradient(grid, g, iv, a).powi(2))
        .sum()
}

/// `∫ |∇_v √f|² dv` of a single column.
pub fn fisher_information(col: &[f64], grid: &PhaseGrid) -> f64 {
    let s: Vec<f64> = col.iter().map(|x| x.max(0.0).sqrt()).collect();
    (0..grid.nv_total).map(|iv| grad_sq(grid, &s, iv)).sum::<f64>() * grid.dv_vol
}

/// `∫ |∇_v f| dv` of a single column.
pub fn total_variation(col: &[f64], grid: &PhaseGrid) -> f64 {
    (0..grid.nv_total)
        .map(|iv| grad_sq(grid, col, iv).sqrt())
        .sum::<f64>()
        * grid.dv_vol
}

/// `∫∫ w(x) |∇_v √f|²` with a per-cell weight.
pub fn weighted_fisher_with(f: &[f64], grid: &PhaseGrid, weights: &[f64]) -> Result<f64> {
    grid.check_shape(f)?;
    if weights.len() != grid.nx_total {
        return Err(KfpError::ShapeMismatch {
            expected: grid.nx_total,
            actual: weights.len(),
        });
    }
    let total: f64 = (0..grid.nx_total)
        .map(|ix| weights[ix] * fisher_information(grid.column(f, ix), grid))
        .sum();
    Ok(total * grid.dx_vol)
}

/// `∫∫ (ν+ε) T^(ε) |∇_v √f|²`.
pub fn weighted_fisher(
    f: &[f64],
    grid: &PhaseGrid,
    reg: &RegularizedFields,
    model: &CollisionFrequencyModel,
    macro_fields: &MacroFields,
) -> Result<f64> {
    let coeffs = cell_coefficients(macro_fields, reg, model, &CollisionSettings::default())?;
    let w: Vec<f64> = coeffs.iter().map(|c| c.rate * c.temp).collect();
    weighted_fisher_with(f, grid, &w)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DissipationValue {
    pub value: f64,
    /// Phase cells skipped for vanishing `f`, `ρ`, or `T`.
    pub degenerate_cells: usize,
}

/// `∫∫ ν/(fT) |T∇_v f + (v-u)f|²` with the per-cell `(ν, T, u)` supplied.
pub fn dissipation_with(
    f: &[f64],
    grid: &PhaseGrid,
    nu: &[f64],
    temp: &[f64],
    u: &[[f64; 2]],
    active: &[bool],
) -> Result<DissipationValue> {
    grid.check_shape(f)?;
    let mut out = DissipationValue::default();
    for ix in 0..grid.nx_total {
        let col = grid.column(f, ix);
        if !active[ix] || !(temp[ix] > 0.0) {
            out.degenerate_cells += grid.nv_total;
            continue;
        }
        let mut s = 0.0;
        for (iv, &fv) in col.iter().enumerate() {
            if fv < POSITIVITY_FLOOR {
                out.degenerate_cells += 1;
                continue;
            }
            let v = grid.v_center(iv);
            let r2: f64 = (0..grid.dim)
                .map(|a| {
                    let r = temp[ix] * velocity_gradient(grid, col, iv, a) + (v[a] - u[ix][a]) * fv;
                    r * r
                })
                .sum();
            s += r2 / (fv * temp[ix]);
        }
        out.value += nu[ix] * s;
    }
    out.value *= grid.cell_volume();
    Ok(out)
}

/// Dissipation functional at the unregularized moments of `f`.
pub fn dissipation_functional(
    f: &[f64],
    grid: &PhaseGrid,
    macro_fields: &MacroFields,
    model: &CollisionFrequencyModel,
) -> Result<DissipationValue> {
    let d = macro_fields.dim;
    let mut nu = Vec::with_capacity(grid.nx_total);
    for c in &macro_fields.cells {
        nu.push(eval_collision_frequency(model, c.rho, &c.j[..d], c.var)?);
    }
    let temp: Vec<f64> = macro_fields.cells.iter().map(|c| c.temp).collect();
    let u: Vec<[f64; 2]> = macro_fields.cells.iter().map(|c| c.u).collect();
    let active: Vec<bool> = macro_fields.cells.iter().map(|c| !c.vacuum).collect();
    dissipation_with(f, grid, &nu, &temp, &u, &active)
}

/// `max |V - ∫|v-u|²f / d|` over non-vacuum cells, relative to `E2 / d`.
pub fn variance_identity_check(f: &[f64], grid: &PhaseGrid, macro_fields: &MacroFields) -> Result<f64> {
    grid.check_shape(f)?;
    let d = grid.dim as f64;
    let mut worst: f64 = 0.0;
    for (ix, c) in macro_fields.cells.iter().enumerate() {
        if c.vacuum {
            continue;
        }
        let direct: f64 = grid
            .column(f, ix)
            .iter()
            .enumerate()
            .map(|(iv, x)| {
                let v = grid.v_center(iv);
                ((v[0] - c.u[0]).powi(2) + (v[1] - c.u[1]).powi(2)) * x
            })
            .sum::<f64>()
            * grid.dv_vol
            / d;
        let scale = (c.e2 / d).max(f64::MIN_POSITIVE);
        worst = worst.max((c.var - direct).abs() / scale);
    }
    Ok(worst)
}

/// `max (ρ|u|² - E2) / E2` over cells; nonpositive when Jensen holds.
pub fn jensen_excess(macro_fields: &MacroFields) -> f64 {
    macro_fields
        .cells
        .iter()
        .filter(|c| !c.vacuum && c.e2 > 0.0)
        .map(|c| (c.rho * (c.u[0] * c.u[0] + c.u[1] * c.u[1]) - c.e2) / c.e2)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Discrete quartic bump `(1 - |w|²)²` on `|w| < 1`, sampled at offsets `jΔv/δ`.
/// Returns `(offsets, weights)`, weights summing to one.
pub fn mollifier(grid: &PhaseGrid, delta: f64) -> Result<(Vec<[isize; 2]>, Vec<f64>)> {
    for a in 0..grid.dim {
        if !(delta >= 2.0 * grid.v[a].width) {
            return Err(KfpError::InvalidArgument(format!(
                "mollifier width {delta} is below the resolvable 2Δv = {}",
                2.0 * grid.v[a].width
            )));
        }
    }
    let reach: Vec<isize> = (0..2)
        .map(|a| if a < grid.dim { (delta / grid.v[a].width).ceil() as isize } else { 0 })
        .collect();
    let mut offsets = Vec::new();
    let mut weights = Vec::new();
    for j0 in -reach[0]..=reach[0] {
        for j1 in -reach[1]..=reach[1] {
            let w0 = j0 as f64 * grid.v[0].width / delta;
            let w1 = if grid.dim == 2 { j1 as f64 * grid.v[1].width / delta } else { 0.0 };
            let r2 = w0 * w0 + w1 * w1;
            if r2 < 1.0 {
                offsets.push([j0, j1]);
                weights.push((1.0 - r2).powi(2));
            }
        }
    }
    let s: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= s);
    Ok((offsets, weights))
}

/// `f ∗ η_δ` on one column, zero-extended outside the velocity box.
pub fn mollify(col: &[f64], grid: &PhaseGrid, delta: f64) -> Result<Vec<f64>> {
    let (offsets, weights) = mollifier(grid, delta)?;
    let n = [grid.v[0].cells as isize, if grid.dim == 2 { grid.v[1].cells as isize } else { 1 }];
    Ok((0..grid.nv_total)
        .map(|iv| {
            let m = grid.v_multi(iv);
            let mut s = 0.0;
            for (o, w) in offsets.iter().zip(&weights) {
                let k0 = m[0] as isize - o[0];
                let k1 = m[1] as isize - o[1];
                if (0..n[0]).contains(&k0) && (0..n[1]).contains(&k1) {
                    s += w * col[grid.v_flat([k0 as usize, k1 as usize])];
                }
            }
            s
        })
        .collect())
}

/// Per-cell terms of the chain `∫|f - f∗η_δ| ≤ δ∫|∇f| ≤ 2δ √∫f √∫|∇√f|²`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompactnessProbe {
    pub delta: f64,
    pub lhs: Vec<f64>,
    pub mid: Vec<f64>,
    pub rhs: Vec<f64>,
    pub vacuum: Vec<bool>,
}

impl CompactnessProbe {
    /// Largest of `lhs/mid` and `mid/rhs` over non-vacuum cells; the chain holds
    /// within `tol` when this is at most `1 + tol`.
    pub fn worst_ratio(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.lhs.len() {
            if self.vacuum[i] {
                continue;
            }
            if self.mid[i] > 0.0 {
                worst = worst.max(self.lhs[i] / self.mid[i]);
            } else if self.lhs[i] > 0.0 {
                worst = f64::INFINITY;
            }
            if self.rhs[i] > 0.0 {
                worst = worst.max(self.mid[i] / self.rhs[i]);
            } else if self.mid[i] > 0.0 {
                worst = f64::INFINITY;
            }
        }
        worst
    }

    pub fn holds(&self, tol: f64) -> bool {
        self.worst_ratio() <= 1.0 + tol
    }
}

pub fn mollification_probe(
    f: &[f64],
    grid: &PhaseGrid,
    delta: f64,
    rho_floor: f64,
) -> Result<CompactnessProbe> {
    grid.check_shape(f)?;
    mollifier(grid, delta)?;
    let mut p = CompactnessProbe {
        delta,
        lhs: Vec::with_capacity(grid.nx_total),
        mid: Vec::with_capacity(grid.nx_total),
        rhs: Vec::with_capacity(grid.nx_total),
        vacuum: Vec::with_capacity(grid.nx_total),
    };
    for ix in 0..grid.nx_total {
        let col = grid.column(f, ix);
        let mass = col.iter().sum::<f64>() * grid.dv_vol;
        let smooth = mollify(col, grid, delta)?;
        let lhs = col.iter().zip(&smooth).map(|(a, b)| (a - b).abs()).sum::<f64>() * grid.dv_vol;
        p.lhs.push(lhs);
        p.mid.push(delta * total_variation(col, grid));
        p.rhs.push(2.0 * delta * mass.max(0.0).sqrt() * fisher_information(col, grid).sqrt());
        p.vacuum.push(mass <= rho_floor);
    }
    Ok(p)
}

/// Snapshot values of `∫∫|v|³f` and their trapezoidal time integral.
#[derive(Debug, Clone, PartialEq)]
pub struct ThirdMomentSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub integral: f64,
}

pub fn third_moment_series(times: &[f64], history: &[Vec<f64>], grid: &PhaseGrid) -> Result<ThirdMomentSeries> {
    if history.is_empty() || times.len() != history.len() {
        return Err(KfpError::InvalidArgument(
            "third-moment series needs a nonempty history with one time per snapshot".into(),
        ));
    }
    let values: Vec<f64> = history.iter().map(|f| third_moment(f, grid)).collect();
    Ok(ThirdMomentSeries {
        integral: trapezoid(times, &values),
        times: times.to_vec(),
        values,
    })
}

pub fn trapezoid(t: &[f64], y: &[f64]) -> f64 {
    t.windows(2)
        .zip(y.windows(2))
        .map(|(t, y)| 0.5 * (t[1] - t[0]) * (y[0] + y[1]))
        .sum()
}

/// One row of the balance ledger.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LedgerRow {
    pub t: f64,
    pub mass: f64,
    pub energy: f64,
    pub entropy: f64,
    pub d_cum: f64,
    pub fisher_cum: f64,
    /// Time integral of `∫∫|v|³f`.
    pub m3: f64,
    pub influx_mass: f64,
    pub outflux_mass: f64,
    pub influx_energy: f64,
    pub outflux_energy: f64,
    pub influx_entropy: f64,
    pub outflux_entropy: f64,
    pub energy_slack: f64,
    pub entropy_slack: f64,
    pub picard_iters: usize,
    pub min_f: f64,
    /// Cumulative interior entropy source; kept out of the CSV.
    pub source_cum: f64,
}

impl LedgerRow {
    pub fn values(&self) -> [f64; 17] {
        [
            self.t,
            self.mass,
            self.energy,
            self.entropy,
            self.d_cum,
            self.fisher_cum,
            self.m3,
            self.influx_mass,
            self.outflux_mass,
            self.influx_energy,
            self.outflux_energy,
            self.influx_entropy,
            self.outflux_entropy,
            self.energy_slack,
            self.entropy_slack,
            self.picard_iters as f64,
            self.min_f,
        ]
    }

    /// Fill both slacks against the initial row.
    pub fn with_slacks(mut self, initial: &LedgerRow) -> Self {
        self.energy_slack = energy_slack(initial.energy, self.energy, self.influx_energy, self.outflux_energy);
        self.entropy_slack = self.entropy + self.outflux_entropy + self.d_cum
            - initial.entropy
            - self.influx_entropy
            - self.source_cum;
        self
    }
}

/// `E(t) - E(0) + outflux - influx`.
pub fn energy_slack(e0: f64, e: f64, influx: f64, outflux: f64) -> f64 {
    e - e0 + outflux - influx
}

/// Time series of ledger rows.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BalanceLedger {
    pub rows: Vec<LedgerRow>,
}

impl BalanceLedger {
    pub fn push(&mut self, row: LedgerRow) {
        let row = match self.rows.first() {
            Some(first) => row.with_slacks(first),
            None => row.with_slacks(&row),
        };
        self.rows.push(row);
    }

    pub fn max_energy_slack(&self) -> f64 {
        self.rows.iter().map(|r| r.energy_slack).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_entropy_slack(&self) -> f64 {
        self.rows.iter().map(|r| r.entropy_slack).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Whether every cumulative nonnegative-integrand column is nondecreasing.
    pub fn cumulative_monotone(&self) -> bool {
        self.rows.windows(2).all(|w| {
            let (a, b) = (&w[0], &w[1]);
            b.d_cum >= a.d_cum
                && b.fisher_cum >= a.fisher_cum
                && b.m3 >= a.m3
                && b.influx_mass >= a.influx_mass
                && b.outflux_mass >= a.outflux_mass
                && b.influx_energy >= a.influx_energy
                && b.outflux_energy >= a.outflux_energy
        })
    }
}
