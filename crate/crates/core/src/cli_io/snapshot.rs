//! Binary snapshots of phase-space states and inflow tables.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "KFPS" | u32 version | u32 kind | u32 d
//! per spatial axis:  f64 lower | f64 upper | u64 nx
//! per velocity axis: f64 vmax  | u64 nv
//! u64 count | count × f64 payload (row-major)
//! ```
//!
//! Kind 0 is a phase-space state with `count = nx_total · nv_total`; kind 1
//! is an inflow table with `count = faces · nv_total`.

use std::fs;
use std::path::Path;

use crate::error::{KfpError, Result};
use crate::phase_grid::{build_grid, classify_boundary, GridSpec};

const MAGIC: &[u8; 4] = b"KFPS";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapshotKind {
    State = 0,
    BoundaryTable = 1,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub kind: SnapshotKind,
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

fn expected_count(kind: SnapshotKind, grid: &GridSpec) -> Result<usize> {
    let g = build_grid(grid)?;
    Ok(match kind {
        SnapshotKind::State => g.len(),
        SnapshotKind::BoundaryTable => classify_boundary(&g).len() * g.nv_total,
    })
}

pub fn encode_snapshot(snap: &Snapshot) -> Result<Vec<u8>> {
    let count = expected_count(snap.kind, &snap.grid)?;
    if snap.values.len() != count {
        return Err(KfpError::ShapeMismatch {
            expected: count,
            actual: snap.values.len(),
        });
    }
    let g = &snap.grid;
    let mut out = Vec::with_capacity(64 + 8 * count);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
    out.extend_from_slice(&(snap.kind as u32).to_le_bytes());
    out.extend_from_slice(&(g.dim as u32).to_le_bytes());
    for a in 0..g.dim {
        out.extend_from_slice(&g.x_lower[a].to_le_bytes());
        out.extend_from_slice(&g.x_upper[a].to_le_bytes());
        out.extend_from_slice(&(g.nx[a] as u64).to_le_bytes());
    }
    for a in 0..g.dim {
        out.extend_from_slice(&g.v_max[a].to_le_bytes());
        out.extend_from_slice(&(g.nv[a] as u64).to_le_bytes());
    }
    out.extend_from_slice(&(count as u64).to_le_bytes());
    for x in &snap.values {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| KfpError::Snapshot("truncated header".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_snapshot(bytes: &[u8]) -> Result<Snapshot> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(KfpError::Snapshot("bad magic".into()));
    }
    let version = r.u32()?;
    if version != SNAPSHOT_VERSION {
        return Err(KfpError::Snapshot(format!("unsupported version {version}")));
    }
    let kind = match r.u32()? {
        0 => SnapshotKind::State,
        1 => SnapshotKind::BoundaryTable,
        k => return Err(KfpError::Snapshot(format!("unknown kind {k}"))),
    };
    let dim = r.u32()? as usize;
    if dim != 1 && dim != 2 {
        return Err(KfpError::Snapshot(format!("unsupported dimension {dim}")));
    }
    let mut grid = GridSpec {
        dim,
        x_lower: vec![],
        x_upper: vec![],
        nx: vec![],
        v_max: vec![],
        nv: vec![],
    };
    for _ in 0..dim {
        grid.x_lower.push(r.f64()?);
        grid.x_upper.push(r.f64()?);
        grid.nx.push(r.u64()? as usize);
    }
    for _ in 0..dim {
        grid.v_max.push(r.f64()?);
        grid.nv.push(r.u64()? as usize);
    }
    let count = r.u64()? as usize;
    let expected = expected_count(kind, &grid).map_err(|e| KfpError::Snapshot(e.to_string()))?;
    let rest = bytes.len() - r.pos;
    if count != expected || rest != count.saturating_mul(8) {
        return Err(KfpError::Snapshot(format!(
            "payload size mismatch: header declares {count} values, grid needs {expected}, file holds {rest} bytes"
        )));
    }
    let values = bytes[r.pos..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(Snapshot { kind, grid, values })
}

pub fn write_snapshot(path: &Path, snap: &Snapshot) -> Result<()> {
    fs::write(path, encode_snapshot(snap)?)?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot> {
    decode_snapshot(&fs::read(path)?)
}

/// Read a snapshot and require it to match `kind` on `grid`.
pub fn read_snapshot_for(path: &Path, kind: SnapshotKind, grid: &GridSpec) -> Result<Vec<f64>> {
    let snap = read_snapshot(path)?;
    if snap.kind != kind {
        return Err(KfpError::Snapshot(format!(
            "expected a {kind:?} snapshot, found {:?}",
            snap.kind
        )));
    }
    if &snap.grid != grid {
        return Err(KfpError::Snapshot(format!(
            "dimension mismatch: snapshot grid {:?} differs from scenario grid {:?}",
            snap.grid, grid
        )));
    }
    Ok(snap.values)
}
