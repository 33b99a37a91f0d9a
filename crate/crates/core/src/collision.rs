//! Velocity-space drift-diffusion step `(ν+ε)∇_v·(T^(ε)∇_v f + (⟦v⟧ - u^(ε)) f)`.
//!
//! Each velocity line is discretized in conservative flux form with
//! Chang–Cooper (Scharfetter–Gummel) face weights. Writing
//! `z = c Δv / T` for the face drift `c`, the flux leaving cell `k` through
//! face `k+1/2` is
//!
//! ```text
//! G = (ν+ε) T / Δv · (B(-z) f_{k+1} - B(z) f_k),    B(z) = z / (e^z - 1)
//! ```
//!
//! which vanishes exactly on `f_{k+1} / f_k = e^{-z}`. The implicit matrix is
//! a column-stochastic M-matrix, so the backward Euler step preserves mass
//! per cell and maps nonnegative data to nonnegative data. In two velocity
//! dimensions the axes are swept one after another.

use rayon::prelude::*;

use crate::error::{KfpError, Result};
use crate::moments::{renorm_velocity, MacroFields, RegularizedFields, NEG_TOLERANCE};
use crate::phase_grid::PhaseGrid;

/// Cells below this value are left out of `f log f` and of the dissipation sums.
pub const POSITIVITY_FLOOR: f64 = 1e-30;

/// Bounded collision frequency `ν(ρ, j, V)`.
#[derive(Debug, Clone, PartialEq)]
pub enum CollisionFrequencyModel {
    /// `ν ≡ value > 0`.
    Constant { value: f64 },
    /// `ρ / (1 + ρ)`.
    DensitySaturating,
    /// `ρ^α T^β / (1 + ρ^α T^β)`.
    PowerSaturating { alpha: f64, beta: f64 },
    /// Piecewise-linear in `ρ`, constant beyond the last node.
    Table {
        rho: Vec<f64>,
        nu: Vec<f64>,
        supremum: f64,
    },
}

impl CollisionFrequencyModel {
    pub fn constant(value: f64) -> Result<Self> {
        if !(value > 0.0 && value.is_finite()) {
            return Err(KfpError::InvalidArgument(format!(
                "constant collision frequency must be positive and finite, got {value}"
            )));
        }
        Ok(Self::Constant { value })
    }

    pub fn power_saturating(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha >= 0.0 && beta >= 0.0 && alpha.is_finite() && beta.is_finite()) {
            return Err(KfpError::InvalidArgument(format!(
                "power-saturating exponents must be finite and >= 0, got ({alpha}, {beta})"
            )));
        }
        Ok(Self::PowerSaturating { alpha, beta })
    }

    /// A tabulated model. The supremum must be declared; it is never inferred.
    pub fn table(rho: Vec<f64>, nu: Vec<f64>, supremum: Option<f64>) -> Result<Self> {
        let supremum = supremum.ok_or_else(|| {
            KfpError::InvalidArgument("tabulated collision model must declare its supremum".into())
        })?;
        if rho.len() != nu.len() || rho.len() < 2 {
            return Err(KfpError::InvalidArgument(
                "table needs at least two (rho, nu) nodes of equal length".into(),
            ));
        }
        if rho[0] != 0.0 || rho.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(KfpError::InvalidArgument(
                "table densities must start at 0 and increase strictly".into(),
            ));
        }
        if nu.iter().any(|&x| !(x >= 0.0 && x <= supremum && x.is_finite())) {
            return Err(KfpError::InvalidArgument(format!(
                "table values must lie in [0, {supremum}]"
            )));
        }
        if nu[1..].iter().any(|&x| x == 0.0) {
            return Err(KfpError::InvalidArgument(
                "table may vanish only at rho = 0".into(),
            ));
        }
        Ok(Self::Table { rho, nu, supremum })
    }

    pub fn supremum(&self) -> f64 {
        match self {
            Self::Constant { value } => *value,
            Self::DensitySaturating | Self::PowerSaturating { .. } => 1.0,
            Self::Table { supremum, .. } => *supremum,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Constant { .. } => "constant",
            Self::DensitySaturating => "density_saturating",
            Self::PowerSaturating { .. } => "power_saturating",
            Self::Table { .. } => "table",
        }
    }
}

/// `ν(ρ, j, V)`.
pub fn eval_collision_frequency(
    model: &CollisionFrequencyModel,
    rho: f64,
    j: &[f64],
    var: f64,
) -> Result<f64> {
    if !rho.is_finite() || !var.is_finite() || j.iter().any(|c| !c.is_finite()) {
        return Err(KfpError::InvalidArgument(
            "collision frequency inputs must be finite".into(),
        ));
    }
    if rho < 0.0 || var < 0.0 {
        return Err(KfpError::InvalidArgument(format!(
            "collision frequency needs rho >= 0 and V >= 0, got ({rho}, {var})"
        )));
    }
    let nu = match model {
        CollisionFrequencyModel::Constant { value } => *value,
        CollisionFrequencyModel::DensitySaturating => rho / (1.0 + rho),
        CollisionFrequencyModel::PowerSaturating { alpha, beta } => {
            if rho == 0.0 {
                0.0
            } else {
                let p = rho.powf(*alpha) * (var / rho).powf(*beta);
                if p.is_infinite() {
                    1.0
                } else {
                    p / (1.0 + p)
                }
            }
        }
        CollisionFrequencyModel::Table { rho: nodes, nu, .. } => {
            let last = nodes.len() - 1;
            if rho >= nodes[last] {
                nu[last]
            } else {
                let k = nodes.partition_point(|&r| r <= rho) - 1;
                let w = (rho - nodes[k]) / (nodes[k + 1] - nodes[k]);
                nu[k] + w * (nu[k + 1] - nu[k])
            }
        }
    };
    Ok(nu)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionSettings {
    /// Replace `⟦v⟧₁^ε` by `v` in the drift.
    pub unregularized_drift: bool,
    /// Implicitness: 1 is backward Euler, 1/2 is Crank–Nicolson.
    pub theta: f64,
}

impl Default for CollisionSettings {
    fn default() -> Self {
        Self {
            unregularized_drift: false,
            theta: 1.0,
        }
    }
}

/// Frozen per-cell coefficients of the velocity operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellCoefficients {
    /// `ν + ε`.
    pub rate: f64,
    /// `T^(ε)`.
    pub temp: f64,
    /// `u^(ε)`.
    pub shift: [f64; 2],
    pub epsilon: f64,
    pub unregularized: bool,
}

impl CellCoefficients {
    /// Drift component `axis` at velocity `v`.
    #[inline]
    pub fn drift(&self, v: [f64; 2], axis: usize) -> f64 {
        let w = if self.unregularized {
            v[axis]
        } else {
            renorm_velocity(v, self.epsilon)[axis]
        };
        w - self.shift[axis]
    }
}

pub fn cell_coefficients(
    macro_fields: &MacroFields,
    reg: &RegularizedFields,
    model: &CollisionFrequencyModel,
    settings: &CollisionSettings,
) -> Result<Vec<CellCoefficients>> {
    if macro_fields.cells.len() != reg.temp.len() {
        return Err(KfpError::ShapeMismatch {
            expected: macro_fields.cells.len(),
            actual: reg.temp.len(),
        });
    }
    macro_fields
        .cells
        .iter()
        .enumerate()
        .map(|(ix, c)| {
            let nu = eval_collision_frequency(model, c.rho, &c.j[..macro_fields.dim], c.var)?;
            Ok(CellCoefficients {
                rate: nu + reg.epsilon,
                temp: reg.temp[ix],
                shift: reg.u[ix],
                epsilon: reg.epsilon,
                unregularized: settings.unregularized_drift,
            })
        })
        .collect()
}

/// `B(z) = z / (e^z - 1)` with `B(0) = 1`.
#[inline]
pub fn bernoulli(z: f64) -> f64 {
    if z == 0.0 {
        1.0
    } else {
        z / z.exp_m1()
    }
}

/// Thomas algorithm; overwrites `rhs` with the solution.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64]) -> Result<()> {
    let n = diag.len();
    if lower.len() != n || upper.len() != n || rhs.len() != n || n == 0 {
        return Err(KfpError::LinearSolve("tridiagonal bands have inconsistent lengths".into()));
    }
    let mut c = vec![0.0; n];
    let mut pivot = diag[0];
    if !(pivot.is_finite() && pivot != 0.0) {
        return Err(KfpError::LinearSolve(format!("zero pivot {pivot} at row 0")));
    }
    c[0] = upper[0] / pivot;
    rhs[0] /= pivot;
    for i in 1..n {
        pivot = diag[i] - lower[i] * c[i - 1];
        if !(pivot.is_finite() && pivot != 0.0) {
            return Err(KfpError::LinearSolve(format!("zero pivot {pivot} at row {i}")));
        }
        c[i] = upper[i] / pivot;
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / pivot;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
    Ok(())
}

/// Geometry of one velocity line inside a column.
#[derive(Debug, Clone, Copy)]
struct Line {
    axis: usize,
    start: usize,
    stride: usize,
    len: usize,
}

fn lines(grid: &PhaseGrid, axis: usize) -> Vec<Line> {
    let len = grid.v[axis].cells;
    let stride = grid.v_stride(axis);
    if grid.dim == 1 {
        return vec![Line {
            axis,
            start: 0,
            stride,
            len,
        }];
    }
    let other = 1 - axis;
    (0..grid.v[other].cells)
        .map(|k| {
            let mut m = [0usize; 2];
            m[other] = k;
            Line {
                axis,
                start: grid.v_flat(m),
                stride,
                len,
            }
        })
        .collect()
}

/// Face velocity between elements `i` and `i + 1` of `line`.
fn face_velocity(grid: &PhaseGrid, line: &Line, i: usize) -> [f64; 2] {
    let mut v = grid.v_center(line.start + i * line.stride);
    v[line.axis] = grid.v[line.axis].face(i + 1);
    v
}

/// Face weights `(B(z), B(-z))` of every interior face of a line.
fn face_weights(grid: &PhaseGrid, line: &Line, coeff: &CellCoefficients) -> Vec<(f64, f64)> {
    let dv = grid.v[line.axis].width;
    (0..line.len - 1)
        .map(|i| {
            let c = coeff.drift(face_velocity(grid, line, i), line.axis);
            let z = c * dv / coeff.temp;
            (bernoulli(z), bernoulli(-z))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ColumnReport {
    /// `dt ∫ D dv` for the step: discrete `4(ν+ε)T^(ε)|∇√f|²`.
    pub dissipation: f64,
    /// `dt ∫ S dv`: discrete `(ν+ε) f ∇·⟦v⟧` source of the entropy budget.
    pub entropy_source: f64,
    pub solves: usize,
}

/// One collision substep on a single velocity column.
pub fn collide_column(
    grid: &PhaseGrid,
    col: &mut [f64],
    coeff: &CellCoefficients,
    dt: f64,
    theta: f64,
) -> Result<ColumnReport> {
    let mut report = ColumnReport::default();
    if col.iter().all(|&x| x == 0.0) {
        return Ok(report);
    }
    for axis in 0..grid.dim {
        let dv = grid.v[axis].width;
        let dv_other = if grid.dim == 2 { grid.v[1 - axis].width } else { 1.0 };
        let kappa = coeff.rate * coeff.temp / (dv * dv);
        let lam = theta * dt * kappa;
        for line in lines(grid, axis) {
            let n = line.len;
            let w = face_weights(grid, &line, coeff);
            let old: Vec<f64> = (0..n).map(|i| col[line.start + i * line.stride]).collect();
            let mut lower = vec![0.0; n];
            let mut diag = vec![1.0; n];
            let mut upper = vec![0.0; n];
            for (i, &(bm, bp)) in w.iter().enumerate() {
                // face between i and i+1
                diag[i] += lam * bm;
                upper[i] = -lam * bp;
                diag[i + 1] += lam * bp;
                lower[i + 1] = -lam * bm;
            }
            let mut rhs = old.clone();
            if theta < 1.0 {
                let expl = (1.0 - theta) * dt * kappa;
                for (i, &(bm, bp)) in w.iter().enumerate() {
                    let g = bp * old[i + 1] - bm * old[i];
                    rhs[i] += expl * g;
                    rhs[i + 1] -= expl * g;
                }
            }
            solve_tridiagonal(&lower, &diag, &upper, &mut rhs)?;
            report.solves += 1;

            let mut d_sum = 0.0;
            let mut s_sum = 0.0;
            for (i, &(bm, bp)) in w.iter().enumerate() {
                let (a, b) = (rhs[i], rhs[i + 1]);
                if a < POSITIVITY_FLOOR || b < POSITIVITY_FLOOR {
                    continue;
                }
                let dlog = b.ln() - a.ln();
                let (ta, tb) = (
                    theta * a + (1.0 - theta) * old[i],
                    theta * b + (1.0 - theta) * old[i + 1],
                );
                let flux = coeff.rate * coeff.temp / dv * (bp * tb - bm * ta);
                let diss = coeff.rate * coeff.temp * (b - a) / dv * dlog;
                d_sum += diss;
                s_sum += diss - flux * dlog;
            }
            report.dissipation += dt * dv_other * d_sum;
            report.entropy_source += dt * dv_other * s_sum;
            for (i, x) in rhs.into_iter().enumerate() {
                col[line.start + i * line.stride] = x;
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CollisionStepReport {
    /// Largest `|Δρ| / ρ` over spatial cells.
    pub mass_change: f64,
    pub min_value: f64,
    pub solves: usize,
    /// Phase-space integrated, time-integrated dissipation of this step.
    pub dissipation: f64,
    pub entropy_source: f64,
}

/// Advance the collision operator by `dt` with coefficients frozen at the
/// supplied fields.
pub fn collision_step(
    f: &[f64],
    grid: &PhaseGrid,
    macro_fields: &MacroFields,
    reg: &RegularizedFields,
    model: &CollisionFrequencyModel,
    dt: f64,
    settings: &CollisionSettings,
) -> Result<(Vec<f64>, CollisionStepReport)> {
    let coeffs = cell_coefficients(macro_fields, reg, model, settings)?;
    collision_step_with(f, grid, &coeffs, dt, settings.theta)
}

pub fn collision_step_with(
    f: &[f64],
    grid: &PhaseGrid,
    coeffs: &[CellCoefficients],
    dt: f64,
    theta: f64,
) -> Result<(Vec<f64>, CollisionStepReport)> {
    grid.check_shape(f)?;
    if !(dt > 0.0) {
        return Err(KfpError::InvalidArgument(format!("collision dt must be positive, got {dt}")));
    }
    if coeffs.len() != grid.nx_total {
        return Err(KfpError::ShapeMismatch {
            expected: grid.nx_total,
            actual: coeffs.len(),
        });
    }
    let mut out = f.to_vec();
    let reports: Vec<Result<ColumnReport>> = out
        .par_chunks_mut(grid.nv_total)
        .zip(coeffs.par_iter())
        .map(|(col, c)| collide_column(grid, col, c, dt, theta))
        .collect();
    let mut report = CollisionStepReport {
        min_value: f64::INFINITY,
        ..Default::default()
    };
    let max = out.iter().cloned().fold(0.0_f64, f64::max);
    for (ix, r) in reports.into_iter().enumerate() {
        let r = r?;
        report.solves += r.solves;
        report.dissipation += r.dissipation * grid.dx_vol;
        report.entropy_source += r.entropy_source * grid.dx_vol;
        let before: f64 = grid.column(f, ix).iter().sum();
        let after: f64 = grid.column(&out, ix).iter().sum();
        if before > 0.0 {
            report.mass_change = report.mass_change.max((after - before).abs() / before);
        }
    }
    report.min_value = out.iter().cloned().fold(f64::INFINITY, f64::min);
    if report.min_value < -NEG_TOLERANCE * max {
        return Err(KfpError::Negativity {
            stage: "collision step",
            value: report.min_value,
        });
    }
    Ok((out, report))
}

/// Discrete equilibrium of a line-swept operator: `f_{k+1}/f_k = e^{-z}` on
/// every face, normalized to density `rho`.
///
/// In two velocity dimensions the face ratios are only path-independent for
/// the unregularized drift, so the regularized case is rejected there.
pub fn discrete_equilibrium(grid: &PhaseGrid, coeff: &CellCoefficients, rho: f64) -> Result<Vec<f64>> {
    if grid.dim == 2 && !coeff.unregularized {
        return Err(KfpError::InvalidArgument(
            "exact discrete equilibria in two velocity dimensions need the unregularized drift"
                .into(),
        ));
    }
    let mut logs = vec![0.0; grid.nv_total];
    // accumulate along axis 0 from index 0, then along axis 1 within each row
    let line0 = &lines(grid, 0)[0];
    let dv0 = grid.v[0].width;
    for i in 0..line0.len - 1 {
        let c = coeff.drift(face_velocity(grid, line0, i), 0);
        logs[line0.start + (i + 1) * line0.stride] =
            logs[line0.start + i * line0.stride] - c * dv0 / coeff.temp;
    }
    if grid.dim == 2 {
        let dv1 = grid.v[1].width;
        for line in lines(grid, 1) {
            for i in 0..line.len - 1 {
                let c = coeff.drift(face_velocity(grid, &line, i), 1);
                logs[line.start + (i + 1) * line.stride] =
                    logs[line.start + i * line.stride] - c * dv1 / coeff.temp;
            }
        }
    }
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut g: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let mass: f64 = g.iter().sum::<f64>() * grid.dv_vol;
    for x in &mut g {
        *x *= rho / mass;
    }
    Ok(g)
}

/// Pointwise `T^(ε)∇_v f + (⟦v⟧ - u^(ε)) f` by central differences (one-sided
/// at the velocity cutoff). Output is `[phase cell][component]`, flattened.
pub fn collision_flux_residual(
    f: &[f64],
    grid: &PhaseGrid,
    macro_fields: &MacroFields,
    reg: &RegularizedFields,
    model: &CollisionFrequencyModel,
    settings: &CollisionSettings,
) -> Result<Vec<f64>> {
    grid.check_shape(f)?;
    let coeffs = cell_coefficients(macro_fields, reg, model, settings)?;
    let d = grid.dim;
    let mut out = vec![0.0; f.len() * d];
    for ix in 0..grid.nx_total {
        if macro_fields.cells[ix].vacuum {
            continue;
        }
        let col = grid.column(f, ix);
        let c = &coeffs[ix];
        for iv in 0..grid.nv_total {
            let v = grid.v_center(iv);
            for a in 0..d {
                let grad = velocity_gradient(grid, col, iv, a);
                out[(ix * grid.nv_total + iv) * d + a] = c.temp * grad + c.drift(v, a) * col[iv];
            }
        }
    }
    Ok(out)
}

/// Central difference of `col` along velocity axis `a` at `iv`, one-sided at
/// the ends.
pub fn velocity_gradient(grid: &PhaseGrid, col: &[f64], iv: usize, a: usize) -> f64 {
    let m = grid.v_multi(iv);
    let n = grid.v[a].cells;
    let s = grid.v_stride(a);
    let h = grid.v[a].width;
    if m[a] == 0 {
        (col[iv + s] - col[iv]) / h
    } else if m[a] == n - 1 {
        (col[iv] - col[iv - s]) / h
    } else {
        (col[iv + s] - col[iv - s]) / (2.0 * h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::{compute_moments, maxwellian, regularize_fields};
    use crate::phase_grid::{build_grid, GridSpec};
    use proptest::prelude::*;

    fn grid_1d(nv: usize) -> PhaseGrid {
        build_grid(&GridSpec::uniform_1d(0.0, 1.0, 2, 8.0, nv)).unwrap()
    }

    fn coeff(temp: f64, shift: f64, eps: f64, unregularized: bool) -> CellCoefficients {
        CellCoefficients {
            rate: 1.0 + eps,
            temp,
            shift: [shift, 0.0],
            epsilon: eps,
            unregularized,
        }
    }

    #[test]
    fn frequency_examples() {
        let c = CollisionFrequencyModel::constant(1.0).unwrap();
        assert_eq!(eval_collision_frequency(&c, 3.0, &[1.0], 2.0).unwrap(), 1.0);
        let d = CollisionFrequencyModel::DensitySaturating;
        assert_eq!(eval_collision_frequency(&d, 1.0, &[0.0], 0.0).unwrap(), 0.5);
        let p = CollisionFrequencyModel::power_saturating(1.0, 1.0).unwrap();
        assert_eq!(eval_collision_frequency(&p, 1.0, &[0.0], 1.0).unwrap(), 0.5);
        assert!(eval_collision_frequency(&c, f64::NAN, &[0.0], 0.0).is_err());
        assert!(eval_collision_frequency(&c, -1.0, &[0.0], 0.0).is_err());
    }

    #[test]
    fn table_requires_supremum() {
        assert!(CollisionFrequencyModel::table(vec![0.0, 1.0], vec![0.0, 1.0], None).is_err());
        let t =
            CollisionFrequencyModel::table(vec![0.0, 1.0, 2.0], vec![0.0, 0.5, 0.8], Some(1.0)).unwrap();
        assert_eq!(eval_collision_frequency(&t, 0.0, &[0.0], 0.0).unwrap(), 0.0);
        assert!((eval_collision_frequency(&t, 1.5, &[0.0], 0.0).unwrap() - 0.65).abs() < 1e-15);
        assert_eq!(eval_collision_frequency(&t, 9.0, &[0.0], 0.0).unwrap(), 0.8);
        assert!(CollisionFrequencyModel::table(vec![0.0, 1.0], vec![0.0, 2.0], Some(1.0)).is_err());
        assert!(CollisionFrequencyModel::table(vec![0.0, 1.0, 2.0], vec![0.0, 0.0, 1.0], Some(1.0))
            .is_err());
    }

    #[test]
    fn bernoulli_identities() {
        for z in [-40.0, -3.0, -1e-9, 0.0, 1e-9, 0.5, 7.0, 800.0] {
            assert!((bernoulli(-z) - bernoulli(z) - z).abs() < 1e-12 * (1.0 + z.abs()));
        }
        assert_eq!(bernoulli(0.0), 1.0);
    }

    #[test]
    fn tridiagonal_matches_dense_product() {
        let lower = [0.0, -1.0, -0.5, -0.2];
        let diag = [3.0, 4.0, 2.5, 3.0];
        let upper = [-1.0, -0.3, -0.7, 0.0];
        let x = [1.0, -2.0, 0.5, 4.0];
        let mut b = [0.0; 4];
        for i in 0..4 {
            b[i] = diag[i] * x[i];
            if i > 0 {
                b[i] += lower[i] * x[i - 1];
            }
            if i < 3 {
                b[i] += upper[i] * x[i + 1];
            }
        }
        solve_tridiagonal(&lower, &diag, &upper, &mut b).unwrap();
        for i in 0..4 {
            assert!((b[i] - x[i]).abs() < 1e-14);
        }
        let mut bad = [1.0; 2];
        assert!(solve_tridiagonal(&[0.0, 0.0], &[0.0, 1.0], &[0.0, 0.0], &mut bad).is_err());
    }

    #[test]
    fn discrete_equilibrium_is_stationary() {
        let g = grid_1d(128);
        for (eps, unreg) in [(0.3, false), (0.05, false), (0.01, true)] {
            let c = coeff(0.8, 0.25, eps, unreg);
            let eq = discrete_equilibrium(&g, &c, 1.3).unwrap();
            let mut col = eq.clone();
            collide_column(&g, &mut col, &c, 0.01, 1.0).unwrap();
            let err = col
                .iter()
                .zip(&eq)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let max = eq.iter().cloned().fold(0.0, f64::max);
            assert!(err <= 1e-12 * max, "eps={eps}: {err:e}");
        }
    }

    #[test]
    fn zero_state_is_fixed() {
        let g = grid_1d(16);
        let mut col = vec![0.0; 16];
        let r = collide_column(&g, &mut col, &coeff(1.0, 0.0, 0.1, false), 0.1, 1.0).unwrap();
        assert!(col.iter().all(|&x| x == 0.0));
        assert_eq!(r.solves, 0);
    }

    #[test]
    fn flux_residual_of_constant_is_drift() {
        let g = grid_1d(16);
        let f = vec![2.0; g.len()];
        let m = compute_moments(&f, &g, 0.0).unwrap();
        let mut reg = regularize_fields(&m, 1e-3).unwrap();
        reg.temp.iter_mut().for_each(|t| *t = 1.0);
        reg.u.iter_mut().for_each(|u| *u = [0.0; 2]);
        let s = CollisionSettings {
            unregularized_drift: true,
            theta: 1.0,
        };
        let model = CollisionFrequencyModel::constant(1.0).unwrap();
        let r = collision_flux_residual(&f, &g, &m, &reg, &model, &s).unwrap();
        for iv in 0..16 {
            assert!((r[iv] - g.v[0].centers[iv] * 2.0).abs() < 1e-14);
        }
        let z = vec![0.0; g.len()];
        let mz = compute_moments(&z, &g, 0.0).unwrap();
        let regz = regularize_fields(&mz, 1e-3).unwrap();
        let r = collision_flux_residual(&z, &g, &mz, &regz, &model, &s).unwrap();
        assert!(r.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn maxwellian_flux_residual_is_second_order() {
        let mut errs = Vec::new();
        for nv in [64, 128] {
            let g = grid_1d(nv);
            let col = maxwellian(1.0, &[0.0], 1.0, &g).unwrap();
            let mut f = vec![0.0; g.len()];
            f[..nv].copy_from_slice(&col);
            f[nv..].copy_from_slice(&col);
            let m = compute_moments(&f, &g, 0.0).unwrap();
            let mut reg = regularize_fields(&m, 1e-3).unwrap();
            reg.temp.iter_mut().for_each(|t| *t = 1.0);
            reg.u.iter_mut().for_each(|u| *u = [0.0; 2]);
            let s = CollisionSettings {
                unregularized_drift: true,
                theta: 1.0,
            };
            let model = CollisionFrequencyModel::constant(1.0).unwrap();
            let r = collision_flux_residual(&f, &g, &m, &reg, &model, &s).unwrap();
            // interior cells only; the cutoff uses one-sided differences
            let e = r[4..nv - 4].iter().map(|x| x.abs()).fold(0.0, f64::max);
            errs.push(e);
        }
        assert!(errs[0] / errs[1] >= 3.5, "{errs:?}");
    }

    #[test]
    fn two_dimensional_equilibrium_and_conservation() {
        let g = build_grid(&GridSpec::square_2d(0.0, 1.0, 2, 6.0, 16)).unwrap();
        let c = CellCoefficients {
            rate: 1.2,
            temp: 0.9,
            shift: [0.3, -0.2],
            epsilon: 0.01,
            unregularized: true,
        };
        let eq = discrete_equilibrium(&g, &c, 1.0).unwrap();
        let mut col = eq.clone();
        collide_column(&g, &mut col, &c, 0.05, 1.0).unwrap();
        let max = eq.iter().cloned().fold(0.0, f64::max);
        for (a, b) in col.iter().zip(&eq) {
            assert!((a - b).abs() <= 1e-12 * max);
        }
        let mut reg = c;
        reg.unregularized = false;
        assert!(discrete_equilibrium(&g, &reg, 1.0).is_err());
        let mut col: Vec<f64> = (0..g.nv_total).map(|i| ((i * 7) % 11) as f64).collect();
        let before: f64 = col.iter().sum();
        collide_column(&g, &mut col, &reg, 0.2, 1.0).unwrap();
        let after: f64 = col.iter().sum();
        assert!((after - before).abs() <= 1e-12 * before);
        assert!(col.iter().all(|&x| x >= 0.0));
    }

    proptest! {
        #[test]
        fn step_is_positive_conservative_and_dissipative(
            vals in proptest::collection::vec(0.0f64..5.0, 24),
            temp in 0.05f64..5.0,
            shift in -3.0f64..3.0,
            eps in 0.01f64..1.0,
            dt in 1e-4f64..2.0,
            unreg in any::<bool>(),
        ) {
            let g = build_grid(&GridSpec::uniform_1d(0.0, 1.0, 2, 6.0, 24)).unwrap();
            let c = coeff(temp, shift, eps, unreg);
            let mut col = vals.clone();
            let before: f64 = col.iter().sum();
            collide_column(&g, &mut col, &c, dt, 1.0).unwrap();
            let after: f64 = col.iter().sum();
            prop_assert!((after - before).abs() <= 1e-12 * before.max(1e-300));
            prop_assert!(col.iter().all(|&x| x >= 0.0));

            // relative entropy against the step's own equilibrium cannot grow
            if before > 0.0 {
                let eq = discrete_equilibrium(&g, &c, 1.0).unwrap();
                let rel = |f: &[f64]| -> f64 {
                    f.iter().zip(&eq).filter(|(x, _)| **x > 0.0)
                        .map(|(x, q)| x * (x / q).ln()).sum::<f64>() * g.dv_vol
                };
                prop_assert!(rel(&col) <= rel(&vals) + 1e-10);
            }
        }
    }

    #[test]
    fn frequency_dichotomy_over_samples() {
        let models = [
            CollisionFrequencyModel::constant(1.0).unwrap(),
            CollisionFrequencyModel::DensitySaturating,
            CollisionFrequencyModel::power_saturating(1.0, 0.5).unwrap(),
            CollisionFrequencyModel::table(vec![0.0, 1.0], vec![0.0, 0.7], Some(1.0)).unwrap(),
        ];
        for m in &models {
            for &rho in &[1e-10, 1e-3, 0.5, 1.0, 10.0, 1e6] {
                for &var in &[1e-6, 1.0, 100.0] {
                    let nu = eval_collision_frequency(m, rho, &[0.3], var).unwrap();
                    assert!(nu > 0.0 && nu <= m.supremum(), "{m:?} {rho} {var}");
                }
            }
            let nu0 = eval_collision_frequency(m, 0.0, &[0.0], 0.0).unwrap();
            match m {
                CollisionFrequencyModel::Constant { .. } => assert!(nu0 > 0.0),
                _ => assert_eq!(nu0, 0.0),
            }
        }
    }
}
