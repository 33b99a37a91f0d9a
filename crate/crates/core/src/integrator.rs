//! Time stepping of the regularized system and the run driver.
//!
//! One step is `transport(dt/2) → collision(dt) → transport(dt/2)` (Strang)
//! or `transport(dt) → collision(dt)` (Lie). Inside the collision substep the
//! coefficients are re-evaluated from the provisional state until the moment
//! triple `(ρ, j, V)` stops changing.

use crate::collision::{
    cell_coefficients, collision_step_with, CollisionFrequencyModel, CollisionSettings,
    CollisionStepReport,
};
use crate::data_prep::{
    boundary_table, sample_datum, truncate_boundary, truncate_initial, BoundarySpec, DatumSpec,
    EquilibriumContext,
};
use crate::diagnostics::{
    entropy, jensen_excess, mollification_probe, third_moment, total_energy, total_mass,
    truncation_fraction, variance_identity_check, weighted_fisher, BalanceLedger, LedgerRow,
};
use crate::error::{KfpError, Result};
use crate::moments::{compute_moments, default_rho_floor, regularize_fields, MacroFields};
use crate::phase_grid::{build_grid, classify_boundary, BoundaryFace, GridSpec, PhaseGrid};
use crate::transport_bc::{
    boundary_flux_integrals, transport_step, BoundaryCondition, FluxWeight, Reconstruction,
    TimeStages, TraceIncrement, TraceRecord, TransportOptions,
};

/// Names of the audited verdicts, in report order.
pub const VERDICT_NAMES: [&str; 10] = [
    "mass_ledger",
    "energy_inequality",
    "entropy_inequality",
    "dissipation_nonnegative",
    "nonnegativity",
    "reflection_flux_identity",
    "jensen_bound",
    "variance_identity",
    "mollification_chain",
    "picard_convergence",
];

#[derive(Debug, Clone, PartialEq)]
pub enum BoundaryScenario {
    Inflow(BoundarySpec),
    Reflection { theta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DtPolicy {
    /// `fraction · Δx / Vmax`.
    Cfl(f64),
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Splitting {
    Strang,
    Lie,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardSettings {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for PicardSettings {
    fn default() -> Self {
        Self {
            max_iterations: 25,
            tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tolerances {
    /// Vacuum threshold as a multiple of the mean initial density.
    pub rho_floor_factor: f64,
    pub mass_ledger: f64,
    /// Relative to the initial energy.
    pub energy: f64,
    pub entropy_abs: f64,
    /// Relative to `|entropy(0)|`.
    pub entropy_rel: f64,
    pub negativity: f64,
    pub reflection: f64,
    pub jensen: f64,
    pub variance: f64,
    pub mollification: f64,
    /// Mollifier widths in units of `Δv`.
    pub mollification_widths: Vec<f64>,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rho_floor_factor: 1e-12,
            mass_ledger: 1e-12,
            energy: 1e-8,
            entropy_abs: 1e-6,
            entropy_rel: 1e-6,
            negativity: 1e-14,
            reflection: 1e-12,
            jensen: 1e-12,
            variance: 1e-12,
            mollification: 0.05,
            mollification_widths: vec![4.0, 8.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub grid: GridSpec,
    pub boundary: BoundaryScenario,
    pub collision: CollisionFrequencyModel,
    pub epsilon: f64,
    pub initial: DatumSpec,
    /// Apply `min{1_{|v|≤1/ε} ·, 1/ε}` to the initial and inflow data.
    pub truncate_data: bool,
    pub t_final: f64,
    pub dt: DtPolicy,
    pub picard: PicardSettings,
    /// Emit a ledger row every this many steps (and at the end).
    pub output_every: usize,
    pub splitting: Splitting,
    /// 1: backward Euler collision and upwind transport. 2: Crank–Nicolson
    /// collision and two-stage Runge–Kutta transport.
    pub time_order: u8,
    pub unregularized_drift: bool,
    pub reconstruction: Reconstruction,
    pub tolerances: Tolerances,
}

impl Scenario {
    /// Scenario with documented defaults around the given essentials.
    pub fn new(grid: GridSpec, boundary: BoundaryScenario, epsilon: f64, t_final: f64) -> Self {
        Self {
            grid,
            boundary,
            collision: CollisionFrequencyModel::Constant { value: 1.0 },
            epsilon,
            initial: DatumSpec::Zero,
            truncate_data: false,
            t_final,
            dt: DtPolicy::Cfl(0.5),
            picard: PicardSettings::default(),
            output_every: 1,
            splitting: Splitting::Strang,
            time_order: 1,
            unregularized_drift: false,
            reconstruction: Reconstruction::Upwind,
            tolerances: Tolerances::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(KfpError::InvalidArgument(m));
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return bad(format!("epsilon must lie in (0, 1], got {}", self.epsilon));
        }
        if !(self.t_final >= 0.0 && self.t_final.is_finite()) {
            return bad(format!("final time must be finite and >= 0, got {}", self.t_final));
        }
        if self.picard.max_iterations < 1 {
            return bad("Picard max iterations must be at least 1".into());
        }
        if !(self.picard.tolerance > 0.0) {
            return bad("Picard tolerance must be positive".into());
        }
        if self.output_every < 1 {
            return bad("output cadence must be at least 1".into());
        }
        if !matches!(self.time_order, 1 | 2) {
            return bad(format!("time order must be 1 or 2, got {}", self.time_order));
        }
        match self.dt {
            DtPolicy::Cfl(c) if !(c > 0.0 && c <= 1.0) => {
                return bad(format!("CFL fraction must lie in (0, 1], got {c}"))
            }
            DtPolicy::Fixed(dt) if !(dt > 0.0 && dt.is_finite()) => {
                return bad(format!("fixed dt must be positive, got {dt}"))
            }
            _ => {}
        }
        if let BoundaryScenario::Reflection { theta } = self.boundary {
            BoundaryCondition::reflection(theta)?;
        }
        Ok(())
    }

    fn settings(&self) -> CollisionSettings {
        CollisionSettings {
            unregularized_drift: self.unregularized_drift,
            theta: if self.time_order == 2 { 0.5 } else { 1.0 },
        }
    }

    fn transport_options(&self) -> TransportOptions {
        TransportOptions {
            reconstruction: self.reconstruction,
            stages: if self.time_order == 2 {
                TimeStages::SspRk2
            } else {
                TimeStages::ForwardEuler
            },
        }
    }
}

/// `fraction · min_a Δx_a / Vmax_a`.
pub fn stable_dt(grid: &PhaseGrid, cfl_fraction: f64) -> Result<f64> {
    if !(cfl_fraction > 0.0 && cfl_fraction <= 1.0) {
        return Err(KfpError::InvalidArgument(format!(
            "CFL fraction must lie in (0, 1], got {cfl_fraction}"
        )));
    }
    Ok(cfl_fraction
        * (0..grid.dim)
            .map(|a| grid.x[a].width / grid.v[a].upper)
            .fold(f64::INFINITY, f64::min))
}

/// Everything a step needs besides the state.
#[derive(Debug, Clone)]
pub struct StepContext {
    pub grid: PhaseGrid,
    pub faces: Vec<BoundaryFace>,
    pub bc: BoundaryCondition,
    pub model: CollisionFrequencyModel,
    pub epsilon: f64,
    pub settings: CollisionSettings,
    pub transport: TransportOptions,
    pub picard: PicardSettings,
    pub splitting: Splitting,
    pub rho_floor: f64,
}

/// Grid, boundary data and initial state of a scenario.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub ctx: StepContext,
    pub initial: Vec<f64>,
    pub n_steps: usize,
    pub dt: f64,
}

pub fn prepare(scenario: &Scenario) -> Result<Prepared> {
    scenario.validate()?;
    let grid = build_grid(&scenario.grid)?;
    let faces = classify_boundary(&grid);
    let eq = EquilibriumContext {
        epsilon: scenario.epsilon,
        unregularized_drift: scenario.unregularized_drift,
    };
    let mut initial = sample_datum(&scenario.initial, &grid, &eq)?;
    if scenario.truncate_data {
        initial = truncate_initial(&initial, &grid, scenario.epsilon)?;
    }
    let bc = match &scenario.boundary {
        BoundaryScenario::Reflection { theta } => BoundaryCondition::reflection(*theta)?,
        BoundaryScenario::Inflow(spec) => {
            let mut table = boundary_table(spec, &grid, &faces, &eq)?;
            if scenario.truncate_data {
                table = truncate_boundary(&table, &grid, scenario.epsilon)?;
            }
            BoundaryCondition::inflow(&grid, &faces, table)?
        }
    };
    let (n_steps, dt) = if scenario.t_final == 0.0 {
        (0, 0.0)
    } else {
        let target = match scenario.dt {
            DtPolicy::Cfl(c) => stable_dt(&grid, c)?,
            DtPolicy::Fixed(dt) => dt,
        };
        let n = (scenario.t_final / target * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        (n, scenario.t_final / n as f64)
    };
    let rho_floor = default_rho_floor(&initial, &grid, scenario.tolerances.rho_floor_factor);
    Ok(Prepared {
        ctx: StepContext {
            grid,
            faces,
            bc,
            model: scenario.collision.clone(),
            epsilon: scenario.epsilon,
            settings: scenario.settings(),
            transport: scenario.transport_options(),
            picard: scenario.picard,
            splitting: scenario.splitting,
            rho_floor,
        },
        initial,
        n_steps,
        dt,
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PicardReport {
    /// Collision solves performed.
    pub iterations: usize,
    /// Relative coefficient change after each solve.
    pub changes: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: Vec<f64>,
    pub traces: Vec<TraceIncrement>,
    pub collision: CollisionStepReport,
    pub picard: PicardReport,
}

/// Largest relative change of `(ρ, j, V)` between two moment sets, with
/// per-cell scales `ρ`, `√(ρ E2)` and `E2/d`. Vacuum cells are skipped.
pub fn coefficient_change(a: &MacroFields, b: &MacroFields) -> f64 {
    let d = a.dim as f64;
    let mut worst: f64 = 0.0;
    for (p, q) in a.cells.iter().zip(&b.cells) {
        if p.vacuum && q.vacuum {
            continue;
        }
        let rho = p.rho.max(q.rho);
        let e2 = p.e2.max(q.e2);
        if rho > 0.0 {
            worst = worst.max((p.rho - q.rho).abs() / rho);
        }
        let js = (rho * e2).sqrt();
        if js > 0.0 {
            worst = worst.max((p.j[0] - q.j[0]).hypot(p.j[1] - q.j[1]) / js);
        }
        if e2 > 0.0 {
            worst = worst.max((p.var - q.var).abs() / (e2 / d));
        }
    }
    worst
}

fn collide(ctx: &StepContext, start: &[f64], source: &[f64], dt: f64) -> Result<(Vec<f64>, CollisionStepReport)> {
    let m = compute_moments(source, &ctx.grid, ctx.rho_floor)?;
    let reg = regularize_fields(&m, ctx.epsilon)?;
    let coeffs = cell_coefficients(&m, &reg, &ctx.model, &ctx.settings)?;
    collision_step_with(start, &ctx.grid, &coeffs, dt, ctx.settings.theta)
}

/// Collision substep with Picard re-evaluation of the coefficients.
pub fn collision_substep(
    ctx: &StepContext,
    start: &[f64],
    dt: f64,
) -> Result<(Vec<f64>, CollisionStepReport, PicardReport)> {
    let crank_nicolson = ctx.settings.theta < 1.0;
    let (mut state, mut report) = collide(ctx, start, start, dt)?;
    let mut picard = PicardReport {
        iterations: 1,
        ..Default::default()
    };
    let mut prev = compute_moments(start, &ctx.grid, ctx.rho_floor)?;
    loop {
        let source = if crank_nicolson {
            start.iter().zip(&state).map(|(a, b)| 0.5 * (a + b)).collect()
        } else {
            state.clone()
        };
        let now = compute_moments(&source, &ctx.grid, ctx.rho_floor)?;
        let change = coefficient_change(&prev, &now);
        picard.changes.push(change);
        if change <= ctx.picard.tolerance {
            picard.converged = true;
            break;
        }
        if picard.iterations >= ctx.picard.max_iterations {
            break;
        }
        let (next, r) = collide(ctx, start, &source, dt)?;
        state = next;
        report = r;
        picard.iterations += 1;
        prev = now;
    }
    Ok((state, report, picard))
}

/// Advance the state by one full step.
pub fn step(state: &[f64], ctx: &StepContext, dt: f64) -> Result<StepOutcome> {
    let g = &ctx.grid;
    let mut traces = Vec::with_capacity(2);
    let (after_collision, collision, picard) = match ctx.splitting {
        Splitting::Strang => {
            let (half, tr) = transport_step(state, &ctx.bc, 0.5 * dt, g, &ctx.faces, &ctx.transport)?;
            traces.push(tr);
            collision_substep(ctx, &half, dt)?
        }
        Splitting::Lie => {
            let (full, tr) = transport_step(state, &ctx.bc, dt, g, &ctx.faces, &ctx.transport)?;
            traces.push(tr);
            collision_substep(ctx, &full, dt)?
        }
    };
    let state = match ctx.splitting {
        Splitting::Strang => {
            let (out, tr) = transport_step(&after_collision, &ctx.bc, 0.5 * dt, g, &ctx.faces, &ctx.transport)?;
            traces.push(tr);
            out
        }
        Splitting::Lie => after_collision,
    };
    Ok(StepOutcome {
        state,
        traces,
        collision,
        picard,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub name: &'static str,
    /// False when the audited property does not apply to the scenario; such
    /// verdicts pass and keep their measured slack for reference.
    pub applicable: bool,
    pub passed: bool,
    /// Worst measured value of the audited quantity.
    pub slack: f64,
    pub tolerance: f64,
    pub note: String,
}

/// Per-step audit values.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub mass_residual: f64,
    /// `|in - θ out|` for the mass and `1 + |v|²` weights, relative to `θ out`.
    pub reflection_mass_residual: f64,
    pub reflection_energy_residual: f64,
    pub min_f: f64,
    pub max_f: f64,
    pub dissipation: f64,
    pub picard_iterations: usize,
    pub picard_change: f64,
    pub picard_converged: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSummary {
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

#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub final_state: Vec<f64>,
    pub grid: PhaseGrid,
    pub ledger: BalanceLedger,
    pub trace: TraceRecord,
    pub steps: Vec<StepRecord>,
    pub verdicts: Vec<Verdict>,
    pub summary: RunSummary,
}

impl SimulationOutput {
    pub fn verdict(&self, name: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.name == name)
    }

    pub fn all_passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }
}

/// Snapshot audits that do not need the time history.
#[derive(Debug, Clone, Copy, Default)]
struct SnapshotAudit {
    jensen: f64,
    variance: f64,
    mollification: f64,
}

fn snapshot_audit(
    f: &[f64],
    grid: &PhaseGrid,
    m: &MacroFields,
    tol: &Tolerances,
    rho_floor: f64,
) -> Result<SnapshotAudit> {
    let mut worst: f64 = 0.0;
    let dv = (0..grid.dim).map(|a| grid.v[a].width).fold(0.0, f64::max);
    for w in &tol.mollification_widths {
        worst = worst.max(mollification_probe(f, grid, w * dv, rho_floor)?.worst_ratio());
    }
    Ok(SnapshotAudit {
        jensen: jensen_excess(m).max(0.0),
        variance: variance_identity_check(f, grid, m)?,
        mollification: worst,
    })
}

struct Cumulative {
    d: f64,
    source: f64,
    fisher: f64,
    m3: f64,
    last_fisher: f64,
    last_m3: f64,
}

fn ledger_row(
    t: f64,
    f: &[f64],
    grid: &PhaseGrid,
    trace: &TraceRecord,
    cum: &Cumulative,
    picard_iters: usize,
) -> LedgerRow {
    let (im, om) = boundary_flux_integrals(trace, FluxWeight::Mass);
    let (ie, oe) = boundary_flux_integrals(trace, FluxWeight::Energy);
    let (is, os) = boundary_flux_integrals(trace, FluxWeight::Entropy);
    LedgerRow {
        t,
        mass: total_mass(f, grid),
        energy: total_energy(f, grid),
        entropy: entropy(f, grid),
        d_cum: cum.d,
        fisher_cum: cum.fisher,
        m3: cum.m3,
        influx_mass: im,
        outflux_mass: om,
        influx_energy: ie,
        outflux_energy: oe,
        influx_entropy: is,
        outflux_entropy: os,
        energy_slack: 0.0,
        entropy_slack: 0.0,
        picard_iters,
        min_f: f.iter().cloned().fold(f64::INFINITY, f64::min),
        source_cum: cum.source,
    }
}

/// Run a scenario on the current rayon pool.
pub fn run(scenario: &Scenario) -> Result<SimulationOutput> {
    let prep = prepare(scenario)?;
    run_prepared(scenario, prep)
}

/// Run inside a dedicated pool of `workers` threads.
pub fn run_with_workers(scenario: &Scenario, workers: usize) -> Result<SimulationOutput> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| KfpError::InvalidArgument(format!("cannot build worker pool: {e}")))?;
    pool.install(|| run(scenario))
}

fn run_prepared(scenario: &Scenario, prep: Prepared) -> Result<SimulationOutput> {
    let Prepared {
        ctx,
        initial,
        n_steps,
        dt,
    } = prep;
    let grid = ctx.grid.clone();
    let tol = &scenario.tolerances;
    let theta = ctx.bc.theta();
    let mut trace = TraceRecord::new(&ctx.faces);
    let mut ledger = BalanceLedger::default();
    let mut steps = Vec::with_capacity(n_steps);

    let fisher_at = |f: &[f64], m: &MacroFields| -> Result<f64> {
        let reg = regularize_fields(m, ctx.epsilon)?;
        weighted_fisher(f, &grid, &reg, &ctx.model, m)
    };

    let m0 = compute_moments(&initial, &grid, ctx.rho_floor)?;
    let mut cum = Cumulative {
        d: 0.0,
        source: 0.0,
        fisher: 0.0,
        m3: 0.0,
        last_fisher: fisher_at(&initial, &m0)?,
        last_m3: third_moment(&initial, &grid),
    };
    let row0 = ledger_row(0.0, &initial, &grid, &trace, &cum, 0);
    let first = row0.with_slacks(&row0);
    ledger.push(first);
    let mass0 = first.mass;
    let energy0 = first.energy;
    let entropy_tol = tol.entropy_abs + tol.entropy_rel * first.entropy.abs();

    let mut audit = snapshot_audit(&initial, &grid, &m0, tol, ctx.rho_floor)?;
    let mut worst_energy: f64 = 0.0;
    let mut worst_entropy: f64 = 0.0;
    let mut worst_mass: f64 = 0.0;
    let mut worst_reflection: f64 = 0.0;
    let mut worst_negativity: f64 = 0.0;
    let mut min_dissipation = f64::INFINITY;
    let mut max_clamp = m0.clamp_magnitude;
    let mut summary = RunSummary {
        steps: n_steps,
        dt,
        rho_floor: ctx.rho_floor,
        ..Default::default()
    };
    let init_max = initial.iter().cloned().fold(0.0_f64, f64::max);
    let init_min = initial.iter().cloned().fold(f64::INFINITY, f64::min);
    if init_max > 0.0 {
        worst_negativity = (-init_min / init_max).max(0.0);
    }

    let mut f = initial;
    for n in 0..n_steps {
        let t = (n + 1) as f64 * dt;
        let out = step(&f, &ctx, dt).map_err(|e| KfpError::Step {
            t: n as f64 * dt,
            source: Box::new(e),
        })?;
        f = out.state;
        let mut step_in = [0.0; 2];
        let mut step_out = [0.0; 2];
        for tr in &out.traces {
            trace.accumulate(&grid, tr);
            for (k, w) in [FluxWeight::Mass, FluxWeight::Energy].into_iter().enumerate() {
                let (i, o) = tr.totals(&grid, w);
                step_in[k] += i;
                step_out[k] += o;
            }
        }
        let m = compute_moments(&f, &grid, ctx.rho_floor).map_err(|e| KfpError::Step {
            t,
            source: Box::new(e),
        })?;
        max_clamp = max_clamp.max(m.clamp_magnitude);
        cum.d += out.collision.dissipation;
        cum.source += out.collision.entropy_source;
        let fisher = fisher_at(&f, &m)?;
        let m3 = third_moment(&f, &grid);
        cum.fisher += 0.5 * dt * (cum.last_fisher + fisher);
        cum.m3 += 0.5 * dt * (cum.last_m3 + m3);
        cum.last_fisher = fisher;
        cum.last_m3 = m3;

        let row = ledger_row(t, &f, &grid, &trace, &cum, out.picard.iterations).with_slacks(&first);
        let mass_scale = mass0.max(row.influx_mass).max(f64::MIN_POSITIVE);
        let mass_residual =
            (row.mass - mass0 - row.influx_mass + row.outflux_mass).abs() / mass_scale;
        let (refl_m, refl_e) = match theta {
            Some(th) => {
                let r = |k: usize| {
                    let scale = (th * step_out[k]).abs().max(step_in[k].abs());
                    if scale > 0.0 {
                        (step_in[k] - th * step_out[k]).abs() / scale
                    } else {
                        0.0
                    }
                };
                (r(0), r(1))
            }
            None => (0.0, 0.0),
        };
        let max_f = f.iter().cloned().fold(0.0_f64, f64::max);
        let neg = if max_f > 0.0 { (-row.min_f / max_f).max(0.0) } else { 0.0 };
        let change = out.picard.changes.last().copied().unwrap_or(0.0);
        steps.push(StepRecord {
            t,
            mass_residual,
            reflection_mass_residual: refl_m,
            reflection_energy_residual: refl_e,
            min_f: row.min_f,
            max_f,
            dissipation: out.collision.dissipation,
            picard_iterations: out.picard.iterations,
            picard_change: change,
            picard_converged: out.picard.converged,
        });
        worst_mass = worst_mass.max(mass_residual);
        worst_reflection = worst_reflection.max(refl_m).max(refl_e);
        worst_negativity = worst_negativity.max(neg);
        worst_energy = worst_energy.max(row.energy_slack / energy0.max(f64::MIN_POSITIVE));
        worst_entropy = worst_entropy.max(row.entropy_slack);
        min_dissipation = min_dissipation.min(out.collision.dissipation);
        summary.max_picard_change = summary.max_picard_change.max(change);
        if !out.picard.converged {
            summary.unconverged_steps += 1;
        }

        if (n + 1) % scenario.output_every == 0 || n + 1 == n_steps {
            ledger.rows.push(row);
            let a = snapshot_audit(&f, &grid, &m, tol, ctx.rho_floor)?;
            audit.jensen = audit.jensen.max(a.jensen);
            audit.variance = audit.variance.max(a.variance);
            audit.mollification = audit.mollification.max(a.mollification);
        }
    }

    summary.truncation_fraction = truncation_fraction(&f, &grid);
    summary.max_clamp = max_clamp;
    summary.mollification_worst = audit.mollification;
    summary.fisher_integral = cum.fisher;
    summary.third_moment_integral = cum.m3;

    let monotone = ledger.cumulative_monotone();
    let single_pass = ctx.picard.max_iterations == 1;
    let verdicts = vec![
        Verdict {
            name: "mass_ledger",
            applicable: true,
            passed: worst_mass <= tol.mass_ledger,
            slack: worst_mass,
            tolerance: tol.mass_ledger,
            note: "max |Δmass - influx + outflux| / initial mass over steps".into(),
        },
        Verdict {
            name: "energy_inequality",
            applicable: scenario.unregularized_drift,
            passed: !scenario.unregularized_drift || worst_energy <= tol.energy,
            slack: worst_energy,
            tolerance: tol.energy,
            note: if scenario.unregularized_drift {
                "max (E(t) - E(0) + outflux - influx) / E(0) over steps".into()
            } else {
                "not applicable: regularized drift does collisional work on the energy".into()
            },
        },
        Verdict {
            name: "entropy_inequality",
            applicable: true,
            passed: worst_entropy <= entropy_tol,
            slack: worst_entropy,
            tolerance: entropy_tol,
            note: "max of H(t) + outflux + D - H(0) - influx - source over steps".into(),
        },
        Verdict {
            name: "dissipation_nonnegative",
            applicable: true,
            passed: n_steps == 0 || (min_dissipation >= 0.0 && monotone),
            slack: if n_steps == 0 { 0.0 } else { min_dissipation },
            tolerance: 0.0,
            note: "smallest per-step dissipation increment; cumulative columns nondecreasing".into(),
        },
        Verdict {
            name: "nonnegativity",
            applicable: true,
            passed: worst_negativity <= tol.negativity,
            slack: worst_negativity,
            tolerance: tol.negativity,
            note: "max (-min f) / max f over steps".into(),
        },
        Verdict {
            name: "reflection_flux_identity",
            applicable: theta.is_some(),
            passed: worst_reflection <= tol.reflection,
            slack: worst_reflection,
            tolerance: tol.reflection,
            note: if theta.is_some() {
                "max |in - θ out| / (θ out) per step, mass and energy weights".into()
            } else {
                "not applicable: inflow boundary".into()
            },
        },
        Verdict {
            name: "jensen_bound",
            applicable: true,
            passed: audit.jensen <= tol.jensen,
            slack: audit.jensen,
            tolerance: tol.jensen,
            note: "max (ρ|u|² - E2) / E2 over snapshots".into(),
        },
        Verdict {
            name: "variance_identity",
            applicable: true,
            passed: audit.variance <= tol.variance,
            slack: audit.variance,
            tolerance: tol.variance,
            note: "max |V - ∫|v-u|²f/d| / (E2/d) over snapshots".into(),
        },
        Verdict {
            name: "mollification_chain",
            applicable: true,
            passed: audit.mollification <= 1.0 + tol.mollification,
            slack: audit.mollification,
            tolerance: 1.0 + tol.mollification,
            note: "worst ratio lhs/mid or mid/rhs over snapshots and widths".into(),
        },
        Verdict {
            name: "picard_convergence",
            applicable: true,
            passed: single_pass || summary.unconverged_steps == 0,
            slack: summary.max_picard_change,
            tolerance: ctx.picard.tolerance,
            note: if single_pass {
                "frozen coefficients: single pass by configuration".into()
            } else {
                format!("{} unconverged steps", summary.unconverged_steps)
            },
        },
    ];

    Ok(SimulationOutput {
        final_state: f,
        grid,
        ledger,
        trace,
        steps,
        verdicts,
        summary,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub epsilon: f64,
    pub third_moment_integral: f64,
    pub fisher_integral: f64,
    pub all_verdicts_passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub max_third_moment: f64,
    pub max_fisher: f64,
    /// `max / min` over the sweep.
    pub third_moment_ratio: f64,
    pub fisher_ratio: f64,
    /// Strictly increasing with non-shrinking increments as ε decreases.
    pub third_moment_blowup: bool,
    pub fisher_blowup: bool,
}

impl SweepReport {
    pub fn uniform(&self, ratio_bound: f64) -> bool {
        self.third_moment_ratio < ratio_bound
            && self.fisher_ratio < ratio_bound
            && !self.third_moment_blowup
            && !self.fisher_blowup
    }
}

fn blowup(values: &[f64]) -> bool {
    if values.len() < 3 {
        return false;
    }
    let inc: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
    inc.iter().all(|&d| d > 0.0) && inc.windows(2).all(|w| w[1] >= w[0])
}

fn ratio(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    if min > 0.0 {
        max / min
    } else if max == 0.0 {
        1.0
    } else {
        f64::INFINITY
    }
}

/// Run `scenario` once per ε (in the given order, expected decreasing).
pub fn sweep(scenario: &Scenario, epsilons: &[f64]) -> Result<(SweepReport, Vec<SimulationOutput>)> {
    if epsilons.is_empty() {
        return Err(KfpError::InvalidArgument("sweep needs at least one epsilon".into()));
    }
    let mut rows = Vec::with_capacity(epsilons.len());
    let mut outputs = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let mut s = scenario.clone();
        s.epsilon = eps;
        let out = run(&s)?;
        rows.push(SweepRow {
            epsilon: eps,
            third_moment_integral: out.summary.third_moment_integral,
            fisher_integral: out.summary.fisher_integral,
            all_verdicts_passed: out.all_passed(),
        });
        outputs.push(out);
    }
    let m3: Vec<f64> = rows.iter().map(|r| r.third_moment_integral).collect();
    let fi: Vec<f64> = rows.iter().map(|r| r.fisher_integral).collect();
    Ok((
        SweepReport {
            max_third_moment: m3.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            max_fisher: fi.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            third_moment_ratio: ratio(&m3),
            fisher_ratio: ratio(&fi),
            third_moment_blowup: blowup(&m3),
            fisher_blowup: blowup(&fi),
            rows,
        },
        outputs,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_prep::MaxwellianParams;

    fn small(boundary: BoundaryScenario) -> Scenario {
        let mut s = Scenario::new(GridSpec::uniform_1d(0.0, 1.0, 16, 6.0, 32), boundary, 0.1, 0.1);
        s.initial = DatumSpec::Bimodal {
            first: MaxwellianParams {
                rho: 0.5,
                u: vec![-1.0],
                temp: 0.5,
            },
            second: MaxwellianParams {
                rho: 0.5,
                u: vec![1.0],
                temp: 0.5,
            },
            modulation: None,
        };
        s
    }

    #[test]
    fn stable_dt_examples() {
        let g = build_grid(&GridSpec::uniform_1d(0.0, 1.0, 4, 2.0, 4)).unwrap();
        assert_eq!(stable_dt(&g, 0.5).unwrap(), 0.0625);
        let g = build_grid(&GridSpec::uniform_1d(0.0, 1.0, 10, 4.0, 4)).unwrap();
        assert!((stable_dt(&g, 1.0).unwrap() - 0.025).abs() < 1e-17);
        assert!(stable_dt(&g, 0.0).is_err());
        assert!(stable_dt(&g, 1.5).is_err());
    }

    #[test]
    fn zero_final_time_has_only_initial_row() {
        let mut s = small(BoundaryScenario::Reflection { theta: 0.5 });
        s.t_final = 0.0;
        let out = run(&s).unwrap();
        assert_eq!(out.ledger.rows.len(), 1);
        assert!(out.steps.is_empty());
    }

    #[test]
    fn zero_state_stays_zero() {
        let mut s = small(BoundaryScenario::Inflow(BoundarySpec::Zero));
        s.initial = DatumSpec::Zero;
        let out = run(&s).unwrap();
        assert!(out.final_state.iter().all(|&x| x == 0.0));
        assert!(out.all_passed(), "{:?}", out.verdicts);
    }

    #[test]
    fn single_picard_pass_is_frozen_step() {
        let mut s = small(BoundaryScenario::Reflection { theta: 0.5 });
        s.picard.max_iterations = 1;
        let prep = prepare(&s).unwrap();
        let f = prep.initial.clone();
        let out = step(&f, &prep.ctx, prep.dt).unwrap();
        let g = &prep.ctx.grid;
        let (half, _) = transport_step(&f, &prep.ctx.bc, 0.5 * prep.dt, g, &prep.ctx.faces, &prep.ctx.transport).unwrap();
        let (coll, _) = collide(&prep.ctx, &half, &half, prep.dt).unwrap();
        let (full, _) = transport_step(&coll, &prep.ctx.bc, 0.5 * prep.dt, g, &prep.ctx.faces, &prep.ctx.transport).unwrap();
        assert!(out.state.iter().zip(&full).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(out.picard.iterations, 1);
        assert_eq!(out.picard.changes.len(), 1);
    }

    #[test]
    fn picard_converges_and_ledgers_close() {
        for b in [
            BoundaryScenario::Reflection { theta: 0.9 },
            BoundaryScenario::Inflow(BoundarySpec::Maxwellian(MaxwellianParams::standard(1))),
        ] {
            let out = run(&small(b)).unwrap();
            for name in ["mass_ledger", "entropy_inequality", "nonnegativity", "picard_convergence", "reflection_flux_identity"] {
                let v = out.verdict(name).unwrap();
                assert!(v.passed, "{v:?}");
            }
            assert_eq!(out.verdicts.len(), VERDICT_NAMES.len());
            for (v, n) in out.verdicts.iter().zip(VERDICT_NAMES) {
                assert_eq!(v.name, n);
            }
        }
    }

    #[test]
    fn scenario_validation() {
        let mut s = small(BoundaryScenario::Reflection { theta: 1.0 });
        assert!(s.validate().is_err());
        s.boundary = BoundaryScenario::Reflection { theta: 0.2 };
        s.epsilon = 0.0;
        assert!(s.validate().is_err());
        s.epsilon = 0.2;
        s.picard.max_iterations = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn blowup_detection() {
        assert!(blowup(&[1.0, 2.0, 3.5]));
        assert!(!blowup(&[1.0, 2.0, 2.5]));
        assert!(!blowup(&[1.0, 0.9, 1.2]));
        assert_eq!(ratio(&[0.0, 0.0]), 1.0);
    }
}
