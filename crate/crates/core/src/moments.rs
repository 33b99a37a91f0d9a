//! Macroscopic fields, their ε-regularization, and the local Maxwellian.

use std::f64::consts::PI;

use crate::error::{KfpError, Result};
use crate::phase_grid::PhaseGrid;

/// Entries below `-NEG_TOLERANCE · max f` mark a corrupted state.
pub const NEG_TOLERANCE: f64 = 1e-14;

/// Moments of one spatial cell. Unused vector components are zero when `d = 1`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CellMoments {
    pub rho: f64,
    pub j: [f64; 2],
    /// `∫ |v|² f dv`.
    pub e2: f64,
    pub u: [f64; 2],
    /// Variance density `V = ρT`.
    pub var: f64,
    pub temp: f64,
    pub vacuum: bool,
}

impl CellMoments {
    pub fn j_norm(&self) -> f64 {
        self.j[0].hypot(self.j[1])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacroFields {
    pub dim: usize,
    pub cells: Vec<CellMoments>,
    pub rho_floor: f64,
    /// Largest amount by which `E2 - |j|²/ρ` went negative before clamping.
    pub clamp_magnitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularizedFields {
    pub epsilon: f64,
    pub temp: Vec<f64>,
    pub u: Vec<[f64; 2]>,
}

/// `r / (ε₁ + ε₂(1 + r))`.
pub fn renorm_scalar(r: f64, eps1: f64, eps2: f64) -> Result<f64> {
    if !(r >= 0.0) || !r.is_finite() {
        return Err(KfpError::InvalidArgument(format!(
            "renormalized scalar must be finite and nonnegative, got {r}"
        )));
    }
    check_eps_pair(eps1, eps2)?;
    Ok(r / (eps1 + eps2 * (1.0 + r)))
}

/// `r / (ε₁ + ε₂(1 + |r|))`, applied to a vector.
pub fn renorm_vector(r: &[f64], eps1: f64, eps2: f64) -> Result<Vec<f64>> {
    if r.iter().any(|c| !c.is_finite()) {
        return Err(KfpError::InvalidArgument(
            "renormalized vector has non-finite components".into(),
        ));
    }
    check_eps_pair(eps1, eps2)?;
    let norm = r.iter().map(|c| c * c).sum::<f64>().sqrt();
    let denom = eps1 + eps2 * (1.0 + norm);
    Ok(r.iter().map(|c| c / denom).collect())
}

fn check_eps_pair(eps1: f64, eps2: f64) -> Result<()> {
    if !(eps1 >= 0.0 && eps2 >= 0.0) || eps1 + eps2 <= 0.0 {
        return Err(KfpError::InvalidArgument(format!(
            "renormalization parameters must be nonnegative with a positive sum, got ({eps1}, {eps2})"
        )));
    }
    Ok(())
}

/// Regularized velocity `⟦v⟧₁^ε = v / (1 + ε(1 + |v|))` for a 2-slot vector.
#[inline]
pub fn renorm_velocity(v: [f64; 2], eps: f64) -> [f64; 2] {
    let s = 1.0 / (1.0 + eps * (1.0 + v[0].hypot(v[1])));
    [v[0] * s, v[1] * s]
}

/// `∇_v · ⟦v⟧₁^ε = (d + εd + ε(d-1)|v|) / (1 + ε(1 + |v|))²`.
pub fn div_renorm_v(v: &[f64], eps: f64) -> f64 {
    let d = v.len() as f64;
    let r = v.iter().map(|c| c * c).sum::<f64>().sqrt();
    let den = 1.0 + eps * (1.0 + r);
    (d + eps * d + eps * (d - 1.0) * r) / (den * den)
}

/// Default vacuum threshold: `1e-12 · (global mass / |Ω|)` scaled by `factor / 1e-12`.
pub fn default_rho_floor(f: &[f64], grid: &PhaseGrid, factor: f64) -> f64 {
    let mass: f64 = f.iter().sum::<f64>() * grid.cell_volume();
    factor * mass / grid.domain_volume()
}

/// Midpoint-rule moments of every spatial cell.
pub fn compute_moments(f: &[f64], grid: &PhaseGrid, rho_floor: f64) -> Result<MacroFields> {
    grid.check_shape(f)?;
    let max = f.iter().cloned().fold(0.0_f64, f64::max);
    let min = f.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -NEG_TOLERANCE * max || f.iter().any(|x| !x.is_finite()) {
        return Err(KfpError::CorruptedState(format!(
            "distribution has entries down to {min:e} (max {max:e})"
        )));
    }
    let vel: Vec<[f64; 2]> = (0..grid.nv_total).map(|iv| grid.v_center(iv)).collect();
    let d = grid.dim as f64;
    let mut clamp: f64 = 0.0;
    let cells = (0..grid.nx_total)
        .map(|ix| {
            let (m, c) = cell_moments(grid.column(f, ix), &vel, grid.dv_vol, d, rho_floor);
            clamp = clamp.max(c);
            m
        })
        .collect();
    Ok(MacroFields {
        dim: grid.dim,
        cells,
        rho_floor,
        clamp_magnitude: clamp,
    })
}

/// Moments of one velocity column; returns the clamp magnitude alongside.
pub fn cell_moments(
    col: &[f64],
    vel: &[[f64; 2]],
    dv: f64,
    d: f64,
    rho_floor: f64,
) -> (CellMoments, f64) {
    let (mut rho, mut j0, mut j1, mut e2) = (0.0, 0.0, 0.0, 0.0);
    for (fv, v) in col.iter().zip(vel) {
        rho += fv;
        j0 += fv * v[0];
        j1 += fv * v[1];
        e2 += fv * (v[0] * v[0] + v[1] * v[1]);
    }
    let rho = rho * dv;
    let j = [j0 * dv, j1 * dv];
    let e2 = e2 * dv;
    if rho <= rho_floor {
        return (
            CellMoments {
                rho: rho.max(0.0),
                j: [0.0; 2],
                e2: e2.max(0.0),
                vacuum: true,
                ..Default::default()
            },
            0.0,
        );
    }
    let raw = (e2 - (j[0] * j[0] + j[1] * j[1]) / rho) / d;
    let var = raw.max(0.0);
    (
        CellMoments {
            rho,
            j,
            e2,
            u: [j[0] / rho, j[1] / rho],
            var,
            temp: var / rho,
            vacuum: false,
        },
        (-raw).max(0.0),
    )
}

/// Regularized temperature and bulk velocity of every cell.
pub fn regularize_fields(m: &MacroFields, epsilon: f64) -> Result<RegularizedFields> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(KfpError::InvalidArgument(format!(
            "epsilon must lie in (0, 1], got {epsilon}"
        )));
    }
    let mut temp = Vec::with_capacity(m.cells.len());
    let mut u = Vec::with_capacity(m.cells.len());
    for c in &m.cells {
        let (t, w) = regularize_cell(c, epsilon);
        temp.push(t);
        u.push(w);
    }
    Ok(RegularizedFields { epsilon, temp, u })
}

/// `(T^(ε), u^(ε))` of a single cell; vacuum cells give `(ε, 0)`.
pub fn regularize_cell(c: &CellMoments, eps: f64) -> (f64, [f64; 2]) {
    if c.vacuum {
        return (eps, [0.0; 2]);
    }
    let t = c.var / (c.rho + eps * (1.0 + c.var)) + eps;
    let s = 1.0 / (c.rho + eps * (1.0 + c.j_norm()));
    (t, [c.j[0] * s, c.j[1] * s])
}

/// Local Maxwellian sampled at velocity cell centers.
pub fn maxwellian(rho: f64, u: &[f64], temp: f64, grid: &PhaseGrid) -> Result<Vec<f64>> {
    if u.len() != grid.dim {
        return Err(KfpError::InvalidArgument(format!(
            "bulk velocity has {} components, grid dimension is {}",
            u.len(),
            grid.dim
        )));
    }
    if !(rho >= 0.0) || !(temp >= 0.0) {
        return Err(KfpError::InvalidArgument(format!(
            "Maxwellian needs rho >= 0 and T >= 0, got ({rho}, {temp})"
        )));
    }
    if rho == 0.0 {
        return Ok(vec![0.0; grid.nv_total]);
    }
    if temp == 0.0 {
        return Err(KfpError::InvalidArgument(
            "degenerate Maxwellian: rho > 0 with T = 0".into(),
        ));
    }
    let d = grid.dim as f64;
    let norm = rho / (2.0 * PI * temp).powf(d / 2.0);
    Ok((0..grid.nv_total)
        .map(|iv| {
            let v = grid.v_center(iv);
            let mut r2 = 0.0;
            for a in 0..grid.dim {
                r2 += (v[a] - u[a]).powi(2);
            }
            norm * (-r2 / (2.0 * temp)).exp()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase_grid::{build_grid, GridSpec};
    use proptest::prelude::*;

    fn grid_1d(nx: usize, vmax: f64, nv: usize) -> PhaseGrid {
        build_grid(&GridSpec::uniform_1d(0.0, 1.0, nx, vmax, nv)).unwrap()
    }

    #[test]
    fn renorm_scalar_examples() {
        assert_eq!(renorm_scalar(0.0, 1.0, 1.0).unwrap(), 0.0);
        assert!((renorm_scalar(1.0, 1.0, 1.0).unwrap() - 1.0 / 3.0).abs() < 1e-16);
        let big = renorm_scalar(1e15, 1.0, 0.5).unwrap();
        assert!((big - 2.0).abs() < 1e-9);
        assert!(renorm_scalar(-1.0, 1.0, 1.0).is_err());
        // density-like eps1 = 0 is allowed
        assert!((renorm_scalar(2.0, 0.0, 0.5).unwrap() - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn renorm_vector_examples() {
        assert_eq!(renorm_vector(&[0.0, 0.0], 1.0, 0.5).unwrap(), vec![0.0, 0.0]);
        let r = renorm_vector(&[3.0, 4.0], 1.0, 0.5).unwrap();
        assert!((r[0] - 0.75).abs() < 1e-15 && (r[1] - 1.0).abs() < 1e-15);
        assert!(r[0].hypot(r[1]) <= 2.0_f64.min(5.0));
        assert_eq!(renorm_vector(&[1.0, 0.0], 1.0, 0.0).unwrap(), vec![1.0, 0.0]);
        assert!(renorm_vector(&[f64::NAN], 1.0, 0.5).is_err());
    }

    #[test]
    fn divergence_examples() {
        assert!((div_renorm_v(&[0.0], 1.0) - 0.5).abs() < 1e-15);
        assert!((div_renorm_v(&[1.0, 0.0], 1.0) - 5.0 / 9.0).abs() < 1e-15);
        assert!((div_renorm_v(&[3.0, -2.0], 1e-12) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn divergence_matches_finite_differences() {
        // independent route: central differences of the vector field itself
        let h = 1e-5;
        for &eps in &[0.05, 0.4, 1.0] {
            for v in [[0.3, -1.2], [2.0, 0.5], [-4.0, 3.0]] {
                let mut div = 0.0;
                for a in 0..2 {
                    let (mut p, mut m) = (v, v);
                    p[a] += h;
                    m[a] -= h;
                    div += (renorm_velocity(p, eps)[a] - renorm_velocity(m, eps)[a]) / (2.0 * h);
                }
                assert!((div - div_renorm_v(&v, eps)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn vacuum_state_moments() {
        let g = grid_1d(3, 4.0, 8);
        let m = compute_moments(&vec![0.0; g.len()], &g, 0.0).unwrap();
        for c in &m.cells {
            assert!(c.vacuum);
            assert_eq!((c.rho, c.u[0], c.temp), (0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn gaussian_moments_round_trip() {
        let g = grid_1d(2, 8.0, 256);
        let col = maxwellian(2.0, &[1.0], 0.5, &g).unwrap();
        let mut f = vec![0.0; g.len()];
        f[g.nv_total..].copy_from_slice(&col);
        let m = compute_moments(&f, &g, 1e-14).unwrap();
        assert!(m.cells[0].vacuum);
        assert_eq!(m.cells[0].temp, 0.0);
        let c = m.cells[1];
        assert!((c.rho - 2.0).abs() < 1e-6);
        assert!((c.u[0] - 1.0).abs() < 1e-6);
        assert!((c.temp - 0.5).abs() < 1e-6);
    }

    #[test]
    fn rejects_corrupted_state() {
        let g = grid_1d(2, 4.0, 4);
        let mut f = vec![1.0; g.len()];
        f[3] = -1e-6;
        assert!(compute_moments(&f, &g, 0.0).is_err());
        f[3] = -1e-16;
        assert!(compute_moments(&f, &g, 0.0).is_ok());
    }

    #[test]
    fn regularized_examples() {
        let vac = CellMoments {
            vacuum: true,
            ..Default::default()
        };
        assert_eq!(regularize_cell(&vac, 0.1), (0.1, [0.0, 0.0]));

        let c = CellMoments {
            rho: 2.0,
            j: [2.0, 0.0],
            var: 1.0,
            temp: 0.5,
            u: [1.0, 0.0],
            ..Default::default()
        };
        let (t, u) = regularize_cell(&c, 0.5);
        assert!((t - 5.0 / 6.0).abs() < 1e-15);
        assert!((u[0] - 4.0 / 7.0).abs() < 1e-15);
        assert!(t <= c.temp + 0.5);

        let hot = CellMoments {
            rho: 1.0,
            var: 1e6,
            temp: 1e6,
            ..Default::default()
        };
        assert!(regularize_cell(&hot, 0.5).0 <= 2.5);
    }

    #[test]
    fn regularize_rejects_bad_epsilon() {
        let m = MacroFields {
            dim: 1,
            cells: vec![],
            rho_floor: 0.0,
            clamp_magnitude: 0.0,
        };
        assert!(regularize_fields(&m, 0.0).is_err());
        assert!(regularize_fields(&m, 1.5).is_err());
    }

    #[test]
    fn maxwellian_examples() {
        let g = grid_1d(2, 8.0, 256);
        assert!(maxwellian(0.0, &[0.0], 0.0, &g).unwrap().iter().all(|&x| x == 0.0));
        assert!(maxwellian(1.0, &[0.0], 0.0, &g).is_err());
        let odd = grid_1d(2, 8.0, 257);
        let m = maxwellian(1.0, &[0.0], 1.0, &odd).unwrap();
        assert!((m[128] - 0.398942280401432678).abs() < 1e-15);
        let m = maxwellian(1.0, &[0.0], 1.0, &g).unwrap();
        let mass: f64 = m.iter().sum::<f64>() * g.dv_vol;
        assert!((mass - 1.0).abs() < 1e-6);
    }

    #[test]
    fn round_trip_error_shrinks_at_second_order() {
        // Coarse grids keep the discretization error above round-off.
        let mut errs = Vec::new();
        for nv in [12, 24] {
            let g = grid_1d(2, 8.0, nv);
            let col = maxwellian(1.0, &[0.3], 0.7, &g).unwrap();
            let mut f = vec![0.0; g.len()];
            f[..g.nv_total].copy_from_slice(&col);
            let c = compute_moments(&f, &g, 0.0).unwrap().cells[0];
            errs.push((c.rho - 1.0).abs() + (c.u[0] - 0.3).abs() + (c.temp - 0.7).abs());
        }
        assert!(errs[0] / errs[1] >= 4.0, "{errs:?}");
    }

    proptest! {
        #[test]
        fn renorm_bounded_by_min(r in 0.0f64..1e8, eps in 1e-6f64..=1.0) {
            let v = renorm_scalar(r, 1.0, eps).unwrap();
            prop_assert!(v <= (1.0 / eps).min(r) * (1.0 + 1e-15));
        }

        #[test]
        fn regularized_fields_are_capped(
            rho in 0.0f64..1e9, j0 in -1e9f64..1e9, j1 in -1e9f64..1e9,
            var in 0.0f64..1e9, eps in 1e-4f64..=1.0,
        ) {
            let c = CellMoments { rho, j: [j0, j1], var, vacuum: rho == 0.0, ..Default::default() };
            let (t, u) = regularize_cell(&c, eps);
            prop_assert!(t >= eps);
            prop_assert!(t <= 1.0 / eps + eps);
            prop_assert!(u[0].hypot(u[1]) <= 1.0 / eps * (1.0 + 1e-12));
            if rho > 0.0 {
                prop_assert!(t <= var / rho + eps + 1e-12 * t);
                prop_assert!(u[0].hypot(u[1]) <= (j0.hypot(j1) / rho) * (1.0 + 1e-12));
            }
        }

        #[test]
        fn jensen_holds_for_random_columns(vals in proptest::collection::vec(0.0f64..10.0, 16)) {
            let g = grid_1d(2, 4.0, 16);
            let mut f = vec![0.0; g.len()];
            f[..16].copy_from_slice(&vals);
            let m = compute_moments(&f, &g, 0.0).unwrap();
            for c in &m.cells {
                let ru2 = c.rho * (c.u[0] * c.u[0] + c.u[1] * c.u[1]);
                prop_assert!(ru2 <= c.e2 * (1.0 + 1e-12) + 1e-300);
            }
        }
    }
}
