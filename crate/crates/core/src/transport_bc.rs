//! Free transport `v·∇_x f` and the kinetic boundary conditions.
//!
//! Every velocity cell is advected independently by a finite-volume upwind
//! scheme (optionally MUSCL with a minmod limiter). Boundary faces take the
//! prescribed inflow datum or `θ` times the outgoing trace at the mirrored
//! velocity. The face values used by the flux are recorded as the trace, so
//! the discrete mass balance telescopes exactly.

use rayon::prelude::*;

use crate::error::{KfpError, Result};
use crate::moments::NEG_TOLERANCE;
use crate::phase_grid::{BoundaryFace, FlowClass, PhaseGrid, Side};

/// Relative slack allowed on the CFL bound for rounding in `T / n`.
const CFL_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum BoundaryKind {
    /// `γf = g` on `Σ₋`. `g[face][iv]` is only read on incoming cells.
    Inflow { g: Vec<Vec<f64>> },
    /// `γf(v) = θ γf(L_x v)` on `Σ₋`.
    Reflection { theta: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryCondition {
    pub kind: BoundaryKind,
}

impl BoundaryCondition {
    pub fn reflection(theta: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&theta) {
            return Err(KfpError::InvalidArgument(format!(
                "reflection coefficient must lie in [0, 1), got {theta}"
            )));
        }
        Ok(Self {
            kind: BoundaryKind::Reflection { theta },
        })
    }

    /// Inflow with a tabulated datum; outgoing and grazing entries are zeroed.
    pub fn inflow(grid: &PhaseGrid, faces: &[BoundaryFace], mut g: Vec<Vec<f64>>) -> Result<Self> {
        if g.len() != faces.len() {
            return Err(KfpError::ShapeMismatch {
                expected: faces.len(),
                actual: g.len(),
            });
        }
        for (face, row) in faces.iter().zip(g.iter_mut()) {
            if row.len() != grid.nv_total {
                return Err(KfpError::ShapeMismatch {
                    expected: grid.nv_total,
                    actual: row.len(),
                });
            }
            for (iv, x) in row.iter_mut().enumerate() {
                if face.classes[iv] != FlowClass::Incoming {
                    *x = 0.0;
                } else if !(x.is_finite() && *x >= 0.0) {
                    return Err(KfpError::InvalidArgument(format!(
                        "inflow datum must be finite and nonnegative, got {x} on face {} velocity {iv}",
                        face.id
                    )));
                }
            }
        }
        Ok(Self {
            kind: BoundaryKind::Inflow { g },
        })
    }

    pub fn zero_inflow(grid: &PhaseGrid, faces: &[BoundaryFace]) -> Self {
        Self {
            kind: BoundaryKind::Inflow {
                g: vec![vec![0.0; grid.nv_total]; faces.len()],
            },
        }
    }

    /// Same incoming column on every face, e.g. a boundary Maxwellian.
    pub fn uniform_inflow(grid: &PhaseGrid, faces: &[BoundaryFace], column: &[f64]) -> Result<Self> {
        Self::inflow(grid, faces, vec![column.to_vec(); faces.len()])
    }

    pub fn theta(&self) -> Option<f64> {
        match self.kind {
            BoundaryKind::Reflection { theta } => Some(theta),
            BoundaryKind::Inflow { .. } => None,
        }
    }
}

/// `v - 2(n·v)n`.
pub fn reflect_velocity(v: &[f64], n: &[f64]) -> Result<Vec<f64>> {
    if v.len() != n.len() {
        return Err(KfpError::ShapeMismatch {
            expected: n.len(),
            actual: v.len(),
        });
    }
    let n2: f64 = n.iter().map(|c| c * c).sum();
    if !((n2 - 1.0).abs() <= 1e-12) {
        return Err(KfpError::InvalidArgument(format!(
            "reflection normal must have unit length, |n|² = {n2}"
        )));
    }
    let vn: f64 = v.iter().zip(n).map(|(a, b)| a * b).sum();
    Ok(v.iter().zip(n).map(|(a, b)| a - 2.0 * vn * b).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reconstruction {
    #[default]
    Upwind,
    /// Minmod-limited slopes; needs `dt · Vmax / Δx ≤ 1/2`.
    Muscl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimeStages {
    #[default]
    ForwardEuler,
    /// Two-stage strong-stability-preserving Runge–Kutta.
    SspRk2,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TransportOptions {
    pub reconstruction: Reconstruction,
    pub stages: TimeStages,
}

impl TransportOptions {
    /// Largest admissible Courant number.
    pub fn courant_limit(&self) -> f64 {
        match self.reconstruction {
            Reconstruction::Upwind => 1.0,
            Reconstruction::Muscl => 0.5,
        }
    }
}

/// One trace sample `γf` with its measure `|n·v| dσ Δv^d dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub face: usize,
    pub iv: usize,
    pub value: f64,
    pub weight: f64,
    pub incoming: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TraceIncrement {
    /// Sorted by face, then velocity, then stage.
    pub entries: Vec<TraceEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FluxWeight {
    Mass,
    /// `1 + |v|²`.
    Energy,
    /// `γf log γf`.
    Entropy,
}

impl FluxWeight {
    pub const ALL: [FluxWeight; 3] = [FluxWeight::Mass, FluxWeight::Energy, FluxWeight::Entropy];

    pub fn parse(tag: &str) -> Result<Self> {
        match tag {
            "mass" | "1" => Ok(Self::Mass),
            "energy" | "1+|v|^2" => Ok(Self::Energy),
            "entropy" => Ok(Self::Entropy),
            other => Err(KfpError::InvalidArgument(format!("unknown flux weight `{other}`"))),
        }
    }

    fn index(self) -> usize {
        self as usize
    }

    #[inline]
    pub fn apply(self, value: f64, v_norm_sq: f64) -> f64 {
        match self {
            Self::Mass => value,
            Self::Energy => (1.0 + v_norm_sq) * value,
            Self::Entropy => {
                if value > 0.0 {
                    value * value.ln()
                } else {
                    0.0
                }
            }
        }
    }
}

impl TraceIncrement {
    /// `(incoming, outgoing)` weighted totals of this increment.
    pub fn totals(&self, grid: &PhaseGrid, weight: FluxWeight) -> (f64, f64) {
        let (mut inc, mut out) = (0.0, 0.0);
        for e in &self.entries {
            let x = e.weight * weight.apply(e.value, grid.v_norm_sq(e.iv));
            if e.incoming {
                inc += x;
            } else {
                out += x;
            }
        }
        (inc, out)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FaceTotals {
    /// Indexed by [`FluxWeight`]: mass, energy, entropy.
    pub incoming: [f64; 3],
    pub outgoing: [f64; 3],
}

/// Cumulative boundary flux integrals per face.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub faces: Vec<FaceTotals>,
    pub corner: Vec<bool>,
    pub increments: usize,
}

impl TraceRecord {
    pub fn new(faces: &[BoundaryFace]) -> Self {
        Self {
            faces: vec![FaceTotals::default(); faces.len()],
            corner: faces.iter().map(|f| f.corner).collect(),
            increments: 0,
        }
    }

    pub fn accumulate(&mut self, grid: &PhaseGrid, inc: &TraceIncrement) {
        for e in &inc.entries {
            let slot = &mut self.faces[e.face];
            let v2 = grid.v_norm_sq(e.iv);
            for w in FluxWeight::ALL {
                let x = e.weight * w.apply(e.value, v2);
                if e.incoming {
                    slot.incoming[w.index()] += x;
                } else {
                    slot.outgoing[w.index()] += x;
                }
            }
        }
        self.increments += 1;
    }

    /// Totals restricted to faces touching a corner of the domain.
    pub fn corner_totals(&self, weight: FluxWeight) -> (f64, f64) {
        self.faces
            .iter()
            .zip(&self.corner)
            .filter(|(_, &c)| c)
            .fold((0.0, 0.0), |(a, b), (t, _)| {
                (a + t.incoming[weight.index()], b + t.outgoing[weight.index()])
            })
    }
}

/// Cumulative `(incoming, outgoing)` flux integrals of `weight`, summed in face order.
pub fn boundary_flux_integrals(trace: &TraceRecord, weight: FluxWeight) -> (f64, f64) {
    trace.faces.iter().fold((0.0, 0.0), |(a, b), t| {
        (a + t.incoming[weight.index()], b + t.outgoing[weight.index()])
    })
}

/// String-tagged variant of [`boundary_flux_integrals`].
pub fn boundary_flux_integrals_by_tag(trace: &TraceRecord, tag: &str) -> Result<(f64, f64)> {
    Ok(boundary_flux_integrals(trace, FluxWeight::parse(tag)?))
}

/// `lookup[axis][side][j]` = face id, `j` the cell index along the other axis.
fn face_lookup(grid: &PhaseGrid, faces: &[BoundaryFace]) -> Result<Vec<[Vec<usize>; 2]>> {
    let mut out: Vec<[Vec<usize>; 2]> = (0..grid.dim)
        .map(|a| {
            let n = if grid.dim == 2 { grid.x[1 - a].cells } else { 1 };
            [vec![usize::MAX; n], vec![usize::MAX; n]]
        })
        .collect();
    for face in faces {
        let j = if grid.dim == 2 {
            grid.x_multi(face.cell)[1 - face.axis]
        } else {
            0
        };
        let s = match face.side {
            Side::Lower => 0,
            Side::Upper => 1,
        };
        out[face.axis][s][j] = face.id;
    }
    if out
        .iter()
        .any(|sides| sides.iter().any(|v| v.iter().any(|&id| id == usize::MAX)))
    {
        return Err(KfpError::InvalidArgument(
            "boundary faces do not cover the grid".into(),
        ));
    }
    Ok(out)
}

#[inline]
fn minmod(a: f64, b: f64) -> f64 {
    if a * b <= 0.0 {
        0.0
    } else if a.abs() < b.abs() {
        a
    } else {
        b
    }
}

/// Forward-Euler transport along `axis` with face weights scaled by `dt_weight`.
#[allow(clippy::too_many_arguments)]
fn sweep(
    src: &[f64],
    grid: &PhaseGrid,
    bc: &BoundaryCondition,
    lookup: &[[Vec<usize>; 2]],
    axis: usize,
    dt: f64,
    dt_weight: f64,
    recon: Reconstruction,
) -> (Vec<f64>, Vec<TraceEntry>) {
    let nv = grid.nv_total;
    let n = grid.x[axis].cells;
    let dx = grid.x[axis].width;
    let xs = grid.x_stride(axis);
    let other_cells = if grid.dim == 2 { grid.x[1 - axis].cells } else { 1 };
    let dsigma = if grid.dim == 2 { grid.x[1 - axis].width } else { 1.0 };
    let lam = dt / dx;

    let per_velocity: Vec<(Vec<f64>, Vec<TraceEntry>)> = (0..nv)
        .into_par_iter()
        .map(|iv| {
            let c = grid.v_center(iv)[axis];
            let mut col = vec![0.0; grid.nx_total];
            let mut entries = Vec::new();
            for ix in 0..grid.nx_total {
                col[ix] = src[ix * nv + iv];
            }
            if c == 0.0 {
                return (col, entries);
            }
            let mirror = grid.mirror_velocity(iv, axis);
            let weight = c.abs() * dsigma * grid.dv_vol * dt_weight;
            let mut q = vec![0.0; n];
            let mut face_val = vec![0.0; n + 1];
            for j in 0..other_cells {
                let start = if grid.dim == 2 {
                    let mut m = [0usize; 2];
                    m[1 - axis] = j;
                    grid.x_flat(m)
                } else {
                    0
                };
                let cell = |i: usize| start + i * xs;
                for (i, qi) in q.iter_mut().enumerate() {
                    *qi = src[cell(i) * nv + iv];
                }
                let slope = |i: usize| -> f64 {
                    if recon == Reconstruction::Upwind || i == 0 || i == n - 1 {
                        0.0
                    } else {
                        minmod(q[i + 1] - q[i], q[i] - q[i - 1])
                    }
                };
                // incoming side, outgoing side
                let (in_side, in_cell, out_cell) = if c > 0.0 { (0, 0, n - 1) } else { (1, n - 1, 0) };
                let in_face = lookup[axis][in_side][j];
                let out_face = lookup[axis][1 - in_side][j];
                let incoming = match &bc.kind {
                    BoundaryKind::Inflow { g } => g[in_face][iv],
                    BoundaryKind::Reflection { theta } => theta * src[cell(in_cell) * nv + mirror],
                };
                let outgoing = q[out_cell];
                if c > 0.0 {
                    face_val[0] = incoming;
                    for i in 0..n - 1 {
                        face_val[i + 1] = q[i] + 0.5 * slope(i);
                    }
                    face_val[n] = outgoing;
                } else {
                    face_val[n] = incoming;
                    for i in 1..n {
                        face_val[i] = q[i] - 0.5 * slope(i);
                    }
                    face_val[0] = outgoing;
                }
                for i in 0..n {
                    col[cell(i)] = q[i] - lam * c * (face_val[i + 1] - face_val[i]);
                }
                entries.push(TraceEntry {
                    face: in_face,
                    iv,
                    value: incoming,
                    weight,
                    incoming: true,
                });
                entries.push(TraceEntry {
                    face: out_face,
                    iv,
                    value: outgoing,
                    weight,
                    incoming: false,
                });
            }
            (col, entries)
        })
        .collect();

    let mut dst = vec![0.0; src.len()];
    let mut entries = Vec::with_capacity(per_velocity.len() * 2 * other_cells);
    for (iv, (col, e)) in per_velocity.into_iter().enumerate() {
        for (ix, x) in col.into_iter().enumerate() {
            dst[ix * nv + iv] = x;
        }
        entries.extend(e);
    }
    (dst, entries)
}

/// One forward-Euler stage: dimensional sweeps over every spatial axis.
fn euler_stage(
    f: &[f64],
    grid: &PhaseGrid,
    bc: &BoundaryCondition,
    lookup: &[[Vec<usize>; 2]],
    dt: f64,
    dt_weight: f64,
    recon: Reconstruction,
) -> (Vec<f64>, Vec<TraceEntry>) {
    let mut state = f.to_vec();
    let mut entries = Vec::new();
    for axis in 0..grid.dim {
        let (next, e) = sweep(&state, grid, bc, lookup, axis, dt, dt_weight, recon);
        state = next;
        entries.extend(e);
    }
    (state, entries)
}

/// Largest `dt` admitted by the Courant bound of `opts`.
pub fn transport_dt_limit(grid: &PhaseGrid, opts: &TransportOptions) -> f64 {
    (0..grid.dim)
        .map(|a| grid.x[a].width / grid.v[a].upper)
        .fold(f64::INFINITY, f64::min)
        * opts.courant_limit()
}

/// Advance `v·∇_x f = 0` by `dt` with the boundary condition `bc`.
pub fn transport_step(
    f: &[f64],
    bc: &BoundaryCondition,
    dt: f64,
    grid: &PhaseGrid,
    faces: &[BoundaryFace],
    opts: &TransportOptions,
) -> Result<(Vec<f64>, TraceIncrement)> {
    grid.check_shape(f)?;
    if !(dt > 0.0) {
        return Err(KfpError::InvalidArgument(format!("transport dt must be positive, got {dt}")));
    }
    let limit = transport_dt_limit(grid, opts);
    if dt > limit * (1.0 + CFL_SLACK) {
        return Err(KfpError::Cfl { dt, limit });
    }
    let max = f.iter().cloned().fold(0.0_f64, f64::max);
    let min = f.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -NEG_TOLERANCE * max || !min.is_finite() {
        return Err(KfpError::Negativity {
            stage: "transport input",
            value: min,
        });
    }
    let lookup = face_lookup(grid, faces)?;
    let (out, mut entries) = match opts.stages {
        TimeStages::ForwardEuler => euler_stage(f, grid, bc, &lookup, dt, dt, opts.reconstruction),
        TimeStages::SspRk2 => {
            let (f1, mut e1) = euler_stage(f, grid, bc, &lookup, dt, 0.5 * dt, opts.reconstruction);
            let (f2, e2) = euler_stage(&f1, grid, bc, &lookup, dt, 0.5 * dt, opts.reconstruction);
            e1.extend(e2);
            let avg = f.iter().zip(&f2).map(|(a, b)| 0.5 * a + 0.5 * b).collect();
            (avg, e1)
        }
    };
    entries.sort_by_key(|e| (e.face, e.iv));
    Ok((out, TraceIncrement { entries }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase_grid::{build_grid, classify_boundary, GridSpec};
    use proptest::prelude::*;

    fn setup(nx: usize, nv: usize) -> (PhaseGrid, Vec<BoundaryFace>) {
        let g = build_grid(&GridSpec::uniform_1d(0.0, 1.0, nx, 2.0, nv)).unwrap();
        let faces = classify_boundary(&g);
        (g, faces)
    }

    fn mass(f: &[f64], g: &PhaseGrid) -> f64 {
        f.iter().sum::<f64>() * g.cell_volume()
    }

    #[test]
    fn reflect_examples() {
        assert_eq!(reflect_velocity(&[3.0, 4.0], &[1.0, 0.0]).unwrap(), vec![-3.0, 4.0]);
        assert!(reflect_velocity(&[1.0, 1.0], &[1.0, 1.0]).is_err());
    }

    proptest! {
        #[test]
        fn reflection_is_isometric_involution(
            v in proptest::array::uniform2(-10.0f64..10.0),
            angle in 0.0f64..std::f64::consts::TAU,
        ) {
            let n = [angle.cos(), angle.sin()];
            let w = reflect_velocity(&v, &n).unwrap();
            let back = reflect_velocity(&w, &n).unwrap();
            let nv = v[0].hypot(v[1]);
            prop_assert!((w[0].hypot(w[1]) - nv).abs() <= 1e-12 * (1.0 + nv));
            prop_assert!((back[0] - v[0]).abs() <= 1e-12 * (1.0 + nv));
            prop_assert!((back[1] - v[1]).abs() <= 1e-12 * (1.0 + nv));
        }
    }

    #[test]
    fn theta_one_rejected() {
        assert!(BoundaryCondition::reflection(1.0).is_err());
        assert!(BoundaryCondition::reflection(-0.1).is_err());
        assert!(BoundaryCondition::reflection(0.0).is_ok());
    }

    #[test]
    fn interior_support_has_no_trace() {
        let (g, faces) = setup(16, 8);
        let mut f = vec![0.0; g.len()];
        for iv in 0..8 {
            f[8 * 8 + iv] = 1.0;
        }
        let bc = BoundaryCondition::reflection(0.0).unwrap();
        let dt = 0.5 * transport_dt_limit(&g, &TransportOptions::default());
        let (out, inc) = transport_step(&f, &bc, dt, &g, &faces, &TransportOptions::default()).unwrap();
        assert!((mass(&out, &g) - mass(&f, &g)).abs() < 1e-15);
        assert!(inc.entries.iter().all(|e| e.value == 0.0));
    }

    #[test]
    fn reflection_pairs_mirror_velocities() {
        let (g, faces) = setup(8, 8);
        let f = vec![1.0; g.len()];
        let bc = BoundaryCondition::reflection(0.5).unwrap();
        let dt = 0.5 * transport_dt_limit(&g, &TransportOptions::default());
        let (_, inc) = transport_step(&f, &bc, dt, &g, &faces, &TransportOptions::default()).unwrap();
        let upper = faces.iter().find(|fc| fc.side == Side::Upper).unwrap().id;
        for e in inc.entries.iter().filter(|e| e.face == upper && e.incoming) {
            let m = g.mirror_velocity(e.iv, 0);
            let out = inc
                .entries
                .iter()
                .find(|o| o.face == upper && !o.incoming && o.iv == m)
                .unwrap();
            assert_eq!(e.value, 0.5 * out.value);
            assert_eq!(g.v_center(m)[0], -g.v_center(e.iv)[0]);
        }
    }

    #[test]
    fn constant_inflow_accumulates_linearly() {
        let (g, faces) = setup(10, 8);
        let g0 = 0.7;
        let iv = 6; // v = 1.25 > 0, incoming at x = 0
        let mut table = vec![vec![0.0; 8]; 2];
        table[0][iv] = g0;
        let bc = BoundaryCondition::inflow(&g, &faces, table).unwrap();
        let dt = 0.02;
        let mut f = vec![0.0; g.len()];
        let k = 3;
        for _ in 0..k {
            f = transport_step(&f, &bc, dt, &g, &faces, &TransportOptions::default()).unwrap().0;
        }
        let v = g.v_center(iv)[0];
        let expected = g0 * v * g.v[0].width * k as f64 * dt;
        assert!((mass(&f, &g) - expected).abs() <= 1e-14 * expected);
    }

    #[test]
    fn theta_zero_matches_zero_inflow_bitwise() {
        let (g, faces) = setup(12, 10);
        let f: Vec<f64> = (0..g.len()).map(|i| ((i * 37) % 13) as f64 * 0.1).collect();
        let dt = 0.9 * transport_dt_limit(&g, &TransportOptions::default());
        for opts in [
            TransportOptions::default(),
            TransportOptions {
                reconstruction: Reconstruction::Muscl,
                stages: TimeStages::SspRk2,
            },
        ] {
            let dt = dt.min(transport_dt_limit(&g, &opts));
            let a = transport_step(&f, &BoundaryCondition::reflection(0.0).unwrap(), dt, &g, &faces, &opts)
                .unwrap();
            let b = transport_step(&f, &BoundaryCondition::zero_inflow(&g, &faces), dt, &g, &faces, &opts)
                .unwrap();
            assert_eq!(a.0, b.0);
            assert_eq!(a.1, b.1);
        }
    }

    #[test]
    fn cfl_and_negative_inflow_rejected() {
        let (g, faces) = setup(8, 8);
        let f = vec![1.0; g.len()];
        let bc = BoundaryCondition::zero_inflow(&g, &faces);
        let limit = transport_dt_limit(&g, &TransportOptions::default());
        assert!(matches!(
            transport_step(&f, &bc, 1.5 * limit, &g, &faces, &TransportOptions::default()),
            Err(KfpError::Cfl { .. })
        ));
        let mut table = vec![vec![0.0; 8]; 2];
        table[0][7] = -1.0;
        assert!(BoundaryCondition::inflow(&g, &faces, table).is_err());
        assert!(FluxWeight::parse("momentum").is_err());
    }

    #[test]
    fn two_dimensional_mass_balance_and_reflection_identity() {
        let g = build_grid(&GridSpec::square_2d(0.0, 1.0, 6, 3.0, 6)).unwrap();
        let faces = classify_boundary(&g);
        let f: Vec<f64> = (0..g.len()).map(|i| 1.0 + ((i * 31) % 7) as f64).collect();
        let bc = BoundaryCondition::reflection(0.9).unwrap();
        let opts = TransportOptions::default();
        let dt = transport_dt_limit(&g, &opts);
        let (out, inc) = transport_step(&f, &bc, dt, &g, &faces, &opts).unwrap();
        let (i, o) = inc.totals(&g, FluxWeight::Mass);
        let dm = mass(&out, &g) - mass(&f, &g);
        assert!((dm - i + o).abs() <= 1e-13 * mass(&f, &g));
        for w in [FluxWeight::Mass, FluxWeight::Energy] {
            let (i, o) = inc.totals(&g, w);
            assert!((i - 0.9 * o).abs() <= 1e-13 * o);
        }
        let mut rec = TraceRecord::new(&faces);
        rec.accumulate(&g, &inc);
        let (ci, co) = rec.corner_totals(FluxWeight::Mass);
        assert!(ci > 0.0 && co > 0.0);
        assert_eq!(boundary_flux_integrals_by_tag(&rec, "mass").unwrap().0, {
            boundary_flux_integrals(&rec, FluxWeight::Mass).0
        });
    }

    proptest! {
        #[test]
        fn transport_is_positive_and_conservative(
            vals in proptest::collection::vec(0.0f64..3.0, 8 * 6),
            theta in 0.0f64..0.99,
            courant in 0.05f64..1.0,
            muscl in any::<bool>(),
            rk2 in any::<bool>(),
        ) {
            let (g, faces) = setup(8, 6);
            let opts = TransportOptions {
                reconstruction: if muscl { Reconstruction::Muscl } else { Reconstruction::Upwind },
                stages: if rk2 { TimeStages::SspRk2 } else { TimeStages::ForwardEuler },
            };
            let dt = courant * transport_dt_limit(&g, &opts);
            let bc = BoundaryCondition::reflection(theta).unwrap();
            let (out, inc) = transport_step(&vals, &bc, dt, &g, &faces, &opts).unwrap();
            prop_assert!(out.iter().all(|&x| x >= 0.0));
            let (i, o) = inc.totals(&g, FluxWeight::Mass);
            let m0 = mass(&vals, &g);
            prop_assert!((mass(&out, &g) - m0 - i + o).abs() <= 1e-13 * m0.max(1e-300));
        }

        #[test]
        fn upwind_entropy_balance(
            vals in proptest::collection::vec(0.01f64..3.0, 8 * 6),
            courant in 0.05f64..1.0,
            rk2 in any::<bool>(),
        ) {
            let (g, faces) = setup(8, 6);
            let opts = TransportOptions {
                reconstruction: Reconstruction::Upwind,
                stages: if rk2 { TimeStages::SspRk2 } else { TimeStages::ForwardEuler },
            };
            let dt = courant * transport_dt_limit(&g, &opts);
            let col: Vec<f64> = (0..6).map(|k| 0.5 + k as f64 * 0.1).collect();
            let bc = BoundaryCondition::uniform_inflow(&g, &faces, &col).unwrap();
            let (out, inc) = transport_step(&vals, &bc, dt, &g, &faces, &opts).unwrap();
            let h = |f: &[f64]| f.iter().map(|&x| FluxWeight::Entropy.apply(x, 0.0)).sum::<f64>() * g.cell_volume();
            let (i, o) = inc.totals(&g, FluxWeight::Entropy);
            prop_assert!(h(&out) + o <= h(&vals) + i + 1e-13);
        }
    }
}
