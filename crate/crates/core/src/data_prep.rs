//! Initial and boundary data: presets, truncation `min{1_{|v|≤1/ε} f, 1/ε}`,
//! and the truncation convergence report.

use std::f64::consts::PI;

use crate::collision::{discrete_equilibrium, CellCoefficients};
use crate::diagnostics::{entropy, total_energy, total_mass};
use crate::error::{KfpError, Result};
use crate::moments::{cell_moments, maxwellian, regularize_cell};
use crate::phase_grid::{BoundaryFace, FlowClass, PhaseGrid};

#[derive(Debug, Clone, PartialEq)]
pub struct MaxwellianParams {
    pub rho: f64,
    pub u: Vec<f64>,
    pub temp: f64,
}

impl MaxwellianParams {
    pub fn standard(dim: usize) -> Self {
        Self {
            rho: 1.0,
            u: vec![0.0; dim],
            temp: 1.0,
        }
    }

    fn column(&self, grid: &PhaseGrid) -> Result<Vec<f64>> {
        maxwellian(self.rho, &self.u, self.temp, grid)
    }
}

/// Density factor `1 + a sin(2πk (x₀ - lower) / L)` along the first spatial axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Modulation {
    pub amplitude: f64,
    pub wavenumber: u32,
}

impl Modulation {
    fn factor(&self, grid: &PhaseGrid, ix: usize) -> f64 {
        let ax = &grid.x[0];
        let x = grid.x_center(ix)[0];
        1.0 + self.amplitude * (2.0 * PI * self.wavenumber as f64 * (x - ax.lower) / ax.length()).sin()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatumSpec {
    Zero,
    Maxwellian {
        params: MaxwellianParams,
        modulation: Option<Modulation>,
    },
    /// Mixture of two Maxwellians.
    Bimodal {
        first: MaxwellianParams,
        second: MaxwellianParams,
        modulation: Option<Modulation>,
    },
    /// `height` on `x ∈ [x0, x1]^d`, `v ∈ [v0, v1]^d`, zero elsewhere.
    Box { x: [f64; 2], v: [f64; 2], height: f64 },
    /// Maxwellian scaled by `factor` on `x₀ ∈ [a, b]`.
    NearVacuumStripe {
        base: MaxwellianParams,
        stripe: [f64; 2],
        factor: f64,
    },
    /// `amplitude (1 + |v|²)^(-power)`, uniform in x.
    HeavyTail { amplitude: f64, power: f64 },
    /// Spatially uniform discrete equilibrium of the collision operator.
    Equilibrium { rho: f64, temp_guess: f64 },
    Tabulated { values: Vec<f64> },
}

/// Inflow datum on `Σ₋`.
#[derive(Debug, Clone, PartialEq)]
pub enum BoundarySpec {
    Zero,
    Maxwellian(MaxwellianParams),
    Equilibrium { rho: f64, temp_guess: f64 },
    /// `[face][velocity]`.
    Tabulated(Vec<Vec<f64>>),
}

/// Regularization context needed by the equilibrium presets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilibriumContext {
    pub epsilon: f64,
    pub unregularized_drift: bool,
}

/// Self-consistent discrete equilibrium: the column `G` whose regularized
/// moments `(T^(ε), u^(ε))` reproduce the coefficients it was built from.
///
/// Solved by Newton's method on `(T, u)` with a finite-difference Jacobian;
/// plain fixed-point iteration contracts only at rate `1 - O(ε)`.
pub fn equilibrium_column(
    grid: &PhaseGrid,
    rho: f64,
    temp_guess: f64,
    ctx: &EquilibriumContext,
) -> Result<Vec<f64>> {
    if !(rho > 0.0 && temp_guess > 0.0) {
        return Err(KfpError::InvalidArgument(format!(
            "equilibrium needs rho > 0 and a positive temperature guess, got ({rho}, {temp_guess})"
        )));
    }
    let d = grid.dim;
    let n = d + 1;
    let vel: Vec<[f64; 2]> = (0..grid.nv_total).map(|iv| grid.v_center(iv)).collect();
    let coeff_of = |x: &[f64]| {
        let mut shift = [0.0; 2];
        shift[..d].copy_from_slice(&x[1..]);
        CellCoefficients {
            rate: 1.0,
            temp: x[0],
            shift,
            epsilon: ctx.epsilon,
            unregularized: ctx.unregularized_drift,
        }
    };
    let residual = |x: &[f64]| -> Result<Vec<f64>> {
        let g = discrete_equilibrium(grid, &coeff_of(x), rho)?;
        let (m, _) = cell_moments(&g, &vel, grid.dv_vol, d as f64, 0.0);
        let (t, u) = regularize_cell(&m, ctx.epsilon);
        let mut r = vec![t - x[0]];
        r.extend((0..d).map(|a| u[a] - x[1 + a]));
        Ok(r)
    };
    let mut x = vec![0.0; n];
    x[0] = temp_guess;
    for _ in 0..100 {
        let r = residual(&x)?;
        let norm = r.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if norm <= 1e-14 * (1.0 + x[0]) {
            return discrete_equilibrium(grid, &coeff_of(&x), rho);
        }
        let mut jac = vec![vec![0.0; n]; n];
        for k in 0..n {
            let h = 1e-7 * (1.0 + x[k].abs());
            let mut xp = x.clone();
            xp[k] += h;
            let rp = residual(&xp)?;
            for i in 0..n {
                jac[i][k] = (rp[i] - r[i]) / h;
            }
        }
        let step = solve_dense(jac, r.iter().map(|v| -v).collect())?;
        let mut lam = 1.0;
        while x[0] + lam * step[0] <= 0.0 {
            lam *= 0.5;
        }
        for k in 0..n {
            x[k] += lam * step[k];
        }
    }
    Err(KfpError::InvalidArgument(
        "equilibrium fixed point did not converge".into(),
    ))
}

/// Gaussian elimination with partial pivoting for tiny dense systems.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
            .unwrap_or(c);
        if a[p][c] == 0.0 || !a[p][c].is_finite() {
            return Err(KfpError::LinearSolve("singular equilibrium Jacobian".into()));
        }
        a.swap(c, p);
        b.swap(c, p);
        for i in c + 1..n {
            let f = a[i][c] / a[c][c];
            for k in c..n {
                a[i][k] -= f * a[c][k];
            }
            b[i] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Ok(x)
}

fn tile(grid: &PhaseGrid, mut per_cell: impl FnMut(usize) -> Result<Vec<f64>>) -> Result<Vec<f64>> {
    let mut f = Vec::with_capacity(grid.len());
    for ix in 0..grid.nx_total {
        f.extend(per_cell(ix)?);
    }
    Ok(f)
}

/// Sample an initial datum on the grid and check it is admissible.
pub fn sample_datum(spec: &DatumSpec, grid: &PhaseGrid, ctx: &EquilibriumContext) -> Result<Vec<f64>> {
    let f = match spec {
        DatumSpec::Zero => vec![0.0; grid.len()],
        DatumSpec::Maxwellian { params, modulation } => {
            let col = params.column(grid)?;
            tile(grid, |ix| {
                let s = modulation.map_or(1.0, |m| m.factor(grid, ix));
                Ok(col.iter().map(|x| s * x).collect())
            })?
        }
        DatumSpec::Bimodal {
            first,
            second,
            modulation,
        } => {
            let a = first.column(grid)?;
            let b = second.column(grid)?;
            tile(grid, |ix| {
                let s = modulation.map_or(1.0, |m| m.factor(grid, ix));
                Ok(a.iter().zip(&b).map(|(p, q)| s * (p + q)).collect())
            })?
        }
        DatumSpec::Box { x, v, height } => {
            if !(*height >= 0.0) {
                return Err(KfpError::InvalidArgument("box height must be nonnegative".into()));
            }
            tile(grid, |ix| {
                let xc = grid.x_center(ix);
                let inside_x = (0..grid.dim).all(|a| xc[a] >= x[0] && xc[a] <= x[1]);
                Ok((0..grid.nv_total)
                    .map(|iv| {
                        let vc = grid.v_center(iv);
                        let inside_v = (0..grid.dim).all(|a| vc[a] >= v[0] && vc[a] <= v[1]);
                        if inside_x && inside_v {
                            *height
                        } else {
                            0.0
                        }
                    })
                    .collect())
            })?
        }
        DatumSpec::NearVacuumStripe { base, stripe, factor } => {
            if !(*factor >= 0.0) {
                return Err(KfpError::InvalidArgument("stripe factor must be nonnegative".into()));
            }
            let col = base.column(grid)?;
            tile(grid, |ix| {
                let x = grid.x_center(ix)[0];
                let s = if x >= stripe[0] && x <= stripe[1] { *factor } else { 1.0 };
                Ok(col.iter().map(|c| s * c).collect())
            })?
        }
        DatumSpec::HeavyTail { amplitude, power } => {
            if !(*amplitude >= 0.0 && *power > 0.0) {
                return Err(KfpError::InvalidArgument(
                    "heavy tail needs amplitude >= 0 and power > 0".into(),
                ));
            }
            let col: Vec<f64> = (0..grid.nv_total)
                .map(|iv| amplitude * (1.0 + grid.v_norm_sq(iv)).powf(-power))
                .collect();
            tile(grid, |_| Ok(col.clone()))?
        }
        DatumSpec::Equilibrium { rho, temp_guess } => {
            let col = equilibrium_column(grid, *rho, *temp_guess, ctx)?;
            tile(grid, |_| Ok(col.clone()))?
        }
        DatumSpec::Tabulated { values } => {
            grid.check_shape(values)?;
            values.clone()
        }
    };
    check_admissible(&f, grid)?;
    Ok(f)
}

/// Inflow table `[face][velocity]`, zero off the incoming set.
pub fn boundary_table(
    spec: &BoundarySpec,
    grid: &PhaseGrid,
    faces: &[BoundaryFace],
    ctx: &EquilibriumContext,
) -> Result<Vec<Vec<f64>>> {
    let column = match spec {
        BoundarySpec::Zero => vec![0.0; grid.nv_total],
        BoundarySpec::Maxwellian(p) => p.column(grid)?,
        BoundarySpec::Equilibrium { rho, temp_guess } => equilibrium_column(grid, *rho, *temp_guess, ctx)?,
        BoundarySpec::Tabulated(rows) => {
            if rows.len() != faces.len() {
                return Err(KfpError::ShapeMismatch {
                    expected: faces.len(),
                    actual: rows.len(),
                });
            }
            let mut rows = rows.clone();
            restrict_incoming(&mut rows, faces);
            check_boundary_admissible(&rows, grid, faces)?;
            return Ok(rows);
        }
    };
    let mut rows = vec![column; faces.len()];
    restrict_incoming(&mut rows, faces);
    check_boundary_admissible(&rows, grid, faces)?;
    Ok(rows)
}

fn restrict_incoming(rows: &mut [Vec<f64>], faces: &[BoundaryFace]) {
    for (row, face) in rows.iter_mut().zip(faces) {
        for (x, class) in row.iter_mut().zip(&face.classes) {
            if *class != FlowClass::Incoming {
                *x = 0.0;
            }
        }
    }
}

/// Mass, energy and `∫|f log f|` of an admissible datum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatumSummary {
    pub mass: f64,
    pub energy: f64,
    pub abs_entropy: f64,
}

/// `f ≥ 0` with finite mass, energy and entropy.
pub fn check_admissible(f: &[f64], grid: &PhaseGrid) -> Result<DatumSummary> {
    grid.check_shape(f)?;
    if let Some(x) = f.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(KfpError::InvalidArgument(format!(
            "datum must be finite and nonnegative, found {x}"
        )));
    }
    let s = DatumSummary {
        mass: total_mass(f, grid),
        energy: total_energy(f, grid),
        abs_entropy: f
            .iter()
            .map(|&x| if x > 0.0 { (x * x.ln()).abs() } else { 0.0 })
            .sum::<f64>()
            * grid.cell_volume(),
    };
    if !(s.mass.is_finite() && s.energy.is_finite() && s.abs_entropy.is_finite()) {
        return Err(KfpError::InvalidArgument("datum has infinite mass, energy or entropy".into()));
    }
    Ok(s)
}

pub fn check_boundary_admissible(
    g: &[Vec<f64>],
    grid: &PhaseGrid,
    faces: &[BoundaryFace],
) -> Result<[f64; 3]> {
    if let Some(x) = g.iter().flatten().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(KfpError::InvalidArgument(format!(
            "boundary datum must be finite and nonnegative, found {x}"
        )));
    }
    let totals = boundary_totals(g, grid, faces);
    if totals.iter().any(|t| !t.is_finite()) {
        return Err(KfpError::InvalidArgument(
            "boundary datum has infinite flux-weighted mass, energy or entropy".into(),
        ));
    }
    Ok(totals)
}

/// `|n·v|`-weighted mass, energy and entropy of an inflow table.
pub fn boundary_totals(g: &[Vec<f64>], grid: &PhaseGrid, faces: &[BoundaryFace]) -> [f64; 3] {
    let mut t = [0.0; 3];
    for (row, face) in g.iter().zip(faces) {
        for (iv, &x) in row.iter().enumerate() {
            if face.classes[iv] != FlowClass::Incoming {
                continue;
            }
            let w = face.normal_velocity(grid, iv).abs() * face.area * grid.dv_vol;
            t[0] += w * x;
            t[1] += w * (1.0 + grid.v_norm_sq(iv)) * x;
            if x > 0.0 {
                t[2] += w * x * x.ln();
            }
        }
    }
    t
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(KfpError::InvalidArgument(format!(
            "truncation epsilon must lie in (0, 1], got {epsilon}"
        )));
    }
    Ok(())
}

#[inline]
fn truncate_value(x: f64, v_norm_sq: f64, epsilon: f64) -> f64 {
    let r = 1.0 / epsilon;
    if v_norm_sq <= r * r {
        x.min(r)
    } else {
        0.0
    }
}

/// `min{1_{|v|≤1/ε} f⁰, 1/ε}`.
pub fn truncate_initial(f0: &[f64], grid: &PhaseGrid, epsilon: f64) -> Result<Vec<f64>> {
    grid.check_shape(f0)?;
    check_epsilon(epsilon)?;
    let v2: Vec<f64> = (0..grid.nv_total).map(|iv| grid.v_norm_sq(iv)).collect();
    Ok(f0
        .iter()
        .enumerate()
        .map(|(i, &x)| truncate_value(x, v2[i % grid.nv_total], epsilon))
        .collect())
}

/// Same truncation applied to an inflow table.
pub fn truncate_boundary(g: &[Vec<f64>], grid: &PhaseGrid, epsilon: f64) -> Result<Vec<Vec<f64>>> {
    check_epsilon(epsilon)?;
    g.iter()
        .map(|row| {
            if row.len() != grid.nv_total {
                return Err(KfpError::ShapeMismatch {
                    expected: grid.nv_total,
                    actual: row.len(),
                });
            }
            Ok(row
                .iter()
                .enumerate()
                .map(|(iv, &x)| truncate_value(x, grid.v_norm_sq(iv), epsilon))
                .collect())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub epsilon: f64,
    pub l1_gap: f64,
    pub energy_gap: f64,
    pub entropy_gap: f64,
    /// Share of phase cells where the height cap `1/ε` is active.
    pub cap_active_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    /// L¹ gaps nonincreasing as ε decreases.
    pub monotone: bool,
}

impl ConvergenceReport {
    /// Every gap column strictly decreasing along the ε list.
    pub fn strictly_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| {
            w[1].l1_gap < w[0].l1_gap && w[1].energy_gap < w[0].energy_gap && w[1].entropy_gap < w[0].entropy_gap
        })
    }
}

fn check_epsilon_list(epsilons: &[f64]) -> Result<()> {
    if epsilons.len() < 2 {
        return Err(KfpError::InvalidArgument(
            "convergence report needs at least two epsilons".into(),
        ));
    }
    if epsilons.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(KfpError::InvalidArgument("epsilons must be strictly decreasing".into()));
    }
    epsilons.iter().try_for_each(|&e| check_epsilon(e))
}

fn finish(rows: Vec<ConvergenceRow>) -> ConvergenceReport {
    let monotone = rows.windows(2).all(|w| w[1].l1_gap <= w[0].l1_gap);
    ConvergenceReport { rows, monotone }
}

/// Gaps between `f⁰` and its truncations for a decreasing list of ε.
pub fn convergence_report(f0: &[f64], grid: &PhaseGrid, epsilons: &[f64]) -> Result<ConvergenceReport> {
    check_epsilon_list(epsilons)?;
    check_admissible(f0, grid)?;
    let (m0, e0, h0) = (total_mass(f0, grid), total_energy(f0, grid), entropy(f0, grid));
    let mut rows = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let fe = truncate_initial(f0, grid, eps)?;
        let capped = f0.iter().filter(|&&x| x > 1.0 / eps).count();
        rows.push(ConvergenceRow {
            epsilon: eps,
            // f_ε ≤ f⁰ pointwise, so the L¹ distance is the mass gap
            l1_gap: m0 - total_mass(&fe, grid),
            energy_gap: e0 - total_energy(&fe, grid),
            entropy_gap: (h0 - entropy(&fe, grid)).abs(),
            cap_active_fraction: capped as f64 / f0.len() as f64,
        });
    }
    Ok(finish(rows))
}

/// Flux-weighted version of [`convergence_report`] for inflow data.
pub fn boundary_convergence_report(
    g: &[Vec<f64>],
    grid: &PhaseGrid,
    faces: &[BoundaryFace],
    epsilons: &[f64],
) -> Result<ConvergenceReport> {
    check_epsilon_list(epsilons)?;
    let t0 = check_boundary_admissible(g, grid, faces)?;
    let cells = g.iter().map(Vec::len).sum::<usize>().max(1);
    let mut rows = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let ge = truncate_boundary(g, grid, eps)?;
        let t = boundary_totals(&ge, grid, faces);
        let capped = g.iter().flatten().filter(|&&x| x > 1.0 / eps).count();
        rows.push(ConvergenceRow {
            epsilon: eps,
            l1_gap: t0[0] - t[0],
            energy_gap: t0[1] - t[1],
            entropy_gap: (t0[2] - t[2]).abs(),
            cap_active_fraction: capped as f64 / cells as f64,
        });
    }
    Ok(finish(rows))
}
