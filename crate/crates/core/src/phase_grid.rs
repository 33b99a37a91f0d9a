//! Cell-centered tensor grids on `Ω × [-Vmax, Vmax]^d`.
//!
//! Phase-space fields are stored as flat `Vec<f64>` in row-major order with
//! the spatial index outermost: `index = ix * nv_total + iv`. Each spatial
//! cell therefore owns one contiguous velocity column, which is what the
//! collision step and the moment computation iterate over.
//!
//! Velocity centers are computed as `(k + 1/2 - n/2) Δv`, so the center of
//! cell `n - 1 - k` is bitwise the negation of the center of cell `k`. The
//! specular reflection on an axis-aligned face is then an exact index map.

use serde::{Deserialize, Serialize};

use crate::error::{KfpError, Result};

pub const MIN_CELLS: usize = 2;

/// User-facing grid description. Every per-axis vector has length `dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub dim: usize,
    pub x_lower: Vec<f64>,
    pub x_upper: Vec<f64>,
    pub nx: Vec<usize>,
    pub v_max: Vec<f64>,
    pub nv: Vec<usize>,
}

impl GridSpec {
    pub fn uniform_1d(x_lower: f64, x_upper: f64, nx: usize, v_max: f64, nv: usize) -> Self {
        Self {
            dim: 1,
            x_lower: vec![x_lower],
            x_upper: vec![x_upper],
            nx: vec![nx],
            v_max: vec![v_max],
            nv: vec![nv],
        }
    }

    pub fn square_2d(x_lower: f64, x_upper: f64, nx: usize, v_max: f64, nv: usize) -> Self {
        Self {
            dim: 2,
            x_lower: vec![x_lower; 2],
            x_upper: vec![x_upper; 2],
            nx: vec![nx; 2],
            v_max: vec![v_max; 2],
            nv: vec![nv; 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub lower: f64,
    pub upper: f64,
    pub cells: usize,
    pub width: f64,
    pub centers: Vec<f64>,
}

impl Axis {
    fn spatial(lower: f64, upper: f64, cells: usize) -> Self {
        let width = (upper - lower) / cells as f64;
        let centers = (0..cells)
            .map(|i| lower + (i as f64 + 0.5) * width)
            .collect();
        Self {
            lower,
            upper,
            cells,
            width,
            centers,
        }
    }

    fn velocity(v_max: f64, cells: usize) -> Self {
        let width = 2.0 * v_max / cells as f64;
        let half = cells as f64 / 2.0;
        let centers = (0..cells)
            .map(|k| (k as f64 + 0.5 - half) * width)
            .collect();
        Self {
            lower: -v_max,
            upper: v_max,
            cells,
            width,
            centers,
        }
    }

    /// Coordinate of the face between cell `k - 1` and cell `k` (`k = 0..=cells`).
    pub fn face(&self, k: usize) -> f64 {
        if self.lower == -self.upper {
            (k as f64 - self.cells as f64 / 2.0) * self.width
        } else {
            self.lower + k as f64 * self.width
        }
    }

    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Immutable phase-space grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseGrid {
    pub spec: GridSpec,
    pub dim: usize,
    pub x: Vec<Axis>,
    pub v: Vec<Axis>,
    pub nx_total: usize,
    pub nv_total: usize,
    /// Spatial cell volume `Π Δx_i`.
    pub dx_vol: f64,
    /// Velocity cell volume `Π Δv_i`.
    pub dv_vol: f64,
}

/// Build a grid from its specification, validating every invariant.
pub fn build_grid(spec: &GridSpec) -> Result<PhaseGrid> {
    let d = spec.dim;
    if d != 1 && d != 2 {
        return Err(KfpError::InvalidGrid(format!(
            "spatial dimension must be 1 or 2, got {d}"
        )));
    }
    for (name, len) in [
        ("x_lower", spec.x_lower.len()),
        ("x_upper", spec.x_upper.len()),
        ("nx", spec.nx.len()),
        ("v_max", spec.v_max.len()),
        ("nv", spec.nv.len()),
    ] {
        if len != d {
            return Err(KfpError::InvalidGrid(format!(
                "`{name}` has {len} entries but dim = {d}"
            )));
        }
    }
    let mut x = Vec::with_capacity(d);
    let mut v = Vec::with_capacity(d);
    for a in 0..d {
        let (lo, hi, n) = (spec.x_lower[a], spec.x_upper[a], spec.nx[a]);
        if n < MIN_CELLS || spec.nv[a] < MIN_CELLS {
            return Err(KfpError::InvalidGrid(format!(
                "cell count below minimum ({MIN_CELLS}) on axis {a}"
            )));
        }
        if !(lo.is_finite() && hi.is_finite()) || hi <= lo {
            return Err(KfpError::InvalidGrid(format!(
                "spatial extent [{lo}, {hi}] on axis {a} is empty or not finite"
            )));
        }
        let vmax = spec.v_max[a];
        if !vmax.is_finite() || vmax <= 0.0 {
            return Err(KfpError::InvalidGrid(format!(
                "velocity bound {vmax} on axis {a} must be positive and finite"
            )));
        }
        x.push(Axis::spatial(lo, hi, n));
        v.push(Axis::velocity(vmax, spec.nv[a]));
    }
    let nx_total = x.iter().map(|a| a.cells).product();
    let nv_total = v.iter().map(|a| a.cells).product();
    let dx_vol = x.iter().map(|a| a.width).product();
    let dv_vol = v.iter().map(|a| a.width).product();
    Ok(PhaseGrid {
        spec: spec.clone(),
        dim: d,
        x,
        v,
        nx_total,
        nv_total,
        dx_vol,
        dv_vol,
    })
}

impl PhaseGrid {
    pub fn len(&self) -> usize {
        self.nx_total * self.nv_total
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.dx_vol * self.dv_vol
    }

    /// `|Ω|`.
    pub fn domain_volume(&self) -> f64 {
        self.x.iter().map(Axis::length).product()
    }

    /// `|Ω| · Π (2 Vmax_i)`.
    pub fn phase_volume(&self) -> f64 {
        self.domain_volume() * self.v.iter().map(Axis::length).product::<f64>()
    }

    pub fn x_multi(&self, ix: usize) -> [usize; 2] {
        if self.dim == 1 {
            [ix, 0]
        } else {
            [ix / self.x[1].cells, ix % self.x[1].cells]
        }
    }

    pub fn x_flat(&self, m: [usize; 2]) -> usize {
        if self.dim == 1 {
            m[0]
        } else {
            m[0] * self.x[1].cells + m[1]
        }
    }

    pub fn v_multi(&self, iv: usize) -> [usize; 2] {
        if self.dim == 1 {
            [iv, 0]
        } else {
            [iv / self.v[1].cells, iv % self.v[1].cells]
        }
    }

    pub fn v_flat(&self, m: [usize; 2]) -> usize {
        if self.dim == 1 {
            m[0]
        } else {
            m[0] * self.v[1].cells + m[1]
        }
    }

    /// Stride of velocity axis `a` inside a velocity column.
    pub fn v_stride(&self, a: usize) -> usize {
        if self.dim == 2 && a == 0 {
            self.v[1].cells
        } else {
            1
        }
    }

    /// Stride of spatial axis `a` in units of spatial cells.
    pub fn x_stride(&self, a: usize) -> usize {
        if self.dim == 2 && a == 0 {
            self.x[1].cells
        } else {
            1
        }
    }

    pub fn x_center(&self, ix: usize) -> [f64; 2] {
        let m = self.x_multi(ix);
        let mut out = [0.0; 2];
        for a in 0..self.dim {
            out[a] = self.x[a].centers[m[a]];
        }
        out
    }

    pub fn v_center(&self, iv: usize) -> [f64; 2] {
        let m = self.v_multi(iv);
        let mut out = [0.0; 2];
        for a in 0..self.dim {
            out[a] = self.v[a].centers[m[a]];
        }
        out
    }

    pub fn v_norm_sq(&self, iv: usize) -> f64 {
        let v = self.v_center(iv);
        v[0] * v[0] + v[1] * v[1]
    }

    /// Velocity index of `L_x v` for a face whose normal is `±e_axis`.
    pub fn mirror_velocity(&self, iv: usize, axis: usize) -> usize {
        let mut m = self.v_multi(iv);
        m[axis] = self.v[axis].cells - 1 - m[axis];
        self.v_flat(m)
    }

    /// Row-major velocity column of spatial cell `ix`.
    pub fn column<'a>(&self, f: &'a [f64], ix: usize) -> &'a [f64] {
        &f[ix * self.nv_total..(ix + 1) * self.nv_total]
    }

    pub fn check_shape(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.len() {
            return Err(KfpError::ShapeMismatch {
                expected: self.len(),
                actual: f.len(),
            });
        }
        Ok(())
    }
}

/// Midpoint-rule integral `Σ f · weight(x, v) · ΔxΔv` over the phase grid.
///
/// Columns are summed left to right and the column totals are then added in
/// spatial order, so the result does not depend on how callers parallelize.
pub fn integrate_phase<W>(f: &[f64], grid: &PhaseGrid, weight: W) -> Result<f64>
where
    W: Fn([f64; 2], [f64; 2]) -> f64,
{
    grid.check_shape(f)?;
    let vel: Vec<[f64; 2]> = (0..grid.nv_total).map(|iv| grid.v_center(iv)).collect();
    let mut total = 0.0;
    for ix in 0..grid.nx_total {
        let x = grid.x_center(ix);
        let col = grid.column(f, ix);
        let mut s = 0.0;
        for (fv, v) in col.iter().zip(&vel) {
            s += fv * weight(x, *v);
        }
        total += s;
    }
    Ok(total * grid.cell_volume())
}

/// Velocity-only weighted integral, the common case.
pub fn integrate_velocity_weight<W>(f: &[f64], grid: &PhaseGrid, weight: W) -> Result<f64>
where
    W: Fn([f64; 2]) -> f64,
{
    integrate_phase(f, grid, |_, v| weight(v))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlowClass {
    Incoming,
    Outgoing,
    Grazing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Lower,
    Upper,
}

/// One face of the spatial mesh lying on `∂Ω`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryFace {
    pub id: usize,
    pub axis: usize,
    pub side: Side,
    /// Flat index of the adjacent interior cell.
    pub cell: usize,
    pub x: [f64; 2],
    pub normal: [f64; 2],
    /// Face measure `dσ` (1 in one dimension).
    pub area: f64,
    /// True when the adjacent cell touches two boundary faces.
    pub corner: bool,
    pub classes: Vec<FlowClass>,
}

impl BoundaryFace {
    /// `n · v` at velocity cell `iv`.
    pub fn normal_velocity(&self, grid: &PhaseGrid, iv: usize) -> f64 {
        let v = grid.v_center(iv);
        self.normal[0] * v[0] + self.normal[1] * v[1]
    }

    pub fn count(&self, class: FlowClass) -> usize {
        self.classes.iter().filter(|&&c| c == class).count()
    }
}

/// Enumerate every boundary face, ordered by axis, then side, then cell.
pub fn classify_boundary(grid: &PhaseGrid) -> Vec<BoundaryFace> {
    let mut faces = Vec::new();
    let d = grid.dim;
    for axis in 0..d {
        let other = if d == 2 { Some(1 - axis) } else { None };
        for side in [Side::Lower, Side::Upper] {
            let (pos_idx, coord, sign) = match side {
                Side::Lower => (0, grid.x[axis].lower, -1.0),
                Side::Upper => (grid.x[axis].cells - 1, grid.x[axis].upper, 1.0),
            };
            let n_other = other.map_or(1, |o| grid.x[o].cells);
            for j in 0..n_other {
                let mut m = [0usize; 2];
                m[axis] = pos_idx;
                let mut x = [0.0; 2];
                x[axis] = coord;
                let mut area = 1.0;
                let mut corner = false;
                if let Some(o) = other {
                    m[o] = j;
                    x[o] = grid.x[o].centers[j];
                    area = grid.x[o].width;
                    corner = j == 0 || j == grid.x[o].cells - 1;
                }
                let mut normal = [0.0; 2];
                normal[axis] = sign;
                let classes = (0..grid.nv_total)
                    .map(|iv| {
                        let vn = sign * grid.v_center(iv)[axis];
                        if vn > 0.0 {
                            FlowClass::Outgoing
                        } else if vn < 0.0 {
                            FlowClass::Incoming
                        } else {
                            FlowClass::Grazing
                        }
                    })
                    .collect();
                faces.push(BoundaryFace {
                    id: faces.len(),
                    axis,
                    side,
                    cell: grid.x_flat(m),
                    x,
                    normal,
                    area,
                    corner,
                    classes,
                });
            }
        }
    }
    faces
}
