//! Coordinate linearization, stride-cell mapping and location tables.

use std::collections::HashMap;
use std::sync::atomic::{AtomicI32, Ordering};

use dashmap::mapref::entry::Entry;
use dashmap::DashMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{GridShape, IndexSet, VoxelCoord};

/// Marker for an empty dense-table slot.
pub const NO_ROW: i32 = -1;

/// Default upper bound on dense location-table entries (2^26).
pub const DEFAULT_DENSE_THRESHOLD: usize = 1 << 26;

/// Batch-local linear index `x + y·max_x + z·max_x·max_y`.
pub fn linearize(c: VoxelCoord, shape: &GridShape) -> Result<usize> {
    if !shape.contains_xyz(c.x, c.y, c.z) {
        return Err(Error::CoordOutOfBounds { coord: c });
    }
    Ok(linear_xyz(c.x, c.y, c.z, shape))
}

#[inline]
fn linear_xyz(x: i32, y: i32, z: i32, shape: &GridShape) -> usize {
    let mx = shape.max_x() as usize;
    let my = shape.max_y() as usize;
    x as usize + y as usize * mx + z as usize * mx * my
}

pub fn delinearize(index: usize, shape: &GridShape) -> Result<(i32, i32, i32)> {
    let volume = shape.volume();
    if index >= volume {
        return Err(Error::IndexOutOfBounds { index, volume });
    }
    let mx = shape.max_x() as usize;
    let plane = mx * shape.max_y() as usize;
    let z = index / plane;
    let rest = index - z * plane;
    let y = rest / mx;
    let x = rest % mx;
    Ok((x as i32, y as i32, z as i32))
}

/// Location-table key: `batch · volume + linearize(x, y, z)`.
///
/// Callers guarantee `c` is in bounds.
#[inline]
pub fn table_key(c: VoxelCoord, shape: &GridShape) -> usize {
    c.batch as usize * shape.volume() + linear_xyz(c.x, c.y, c.z, shape)
}

/// Inverse of [`table_key`].
pub fn key_coord(key: usize, shape: &GridShape) -> VoxelCoord {
    let volume = shape.volume();
    let (x, y, z) = delinearize(key % volume, shape).expect("key within grid");
    VoxelCoord::new((key / volume) as i32, x, y, z)
}

/// Uniform stride applied on all three axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StrideSpec(u32);

impl StrideSpec {
    pub fn new(s: u32) -> Result<Self> {
        if s == 0 {
            return Err(Error::ZeroStride);
        }
        Ok(Self(s))
    }

    pub fn get(self) -> u32 {
        self.0
    }

    /// `s³`, the number of kernel offsets in one stride cell.
    pub fn cell_volume(self) -> usize {
        (self.0 as usize).pow(3)
    }

    /// Coarse grid after striding: `ceil(extent / s)` per axis, same batches.
    pub fn coarse_shape(self, fine: &GridShape) -> GridShape {
        let s = self.0;
        GridShape::new(
            fine.max_x().div_ceil(s),
            fine.max_y().div_ceil(s),
            fine.max_z().div_ceil(s),
            fine.batches(),
        )
        .expect("coarse grid is never larger than the fine grid")
    }
}

/// Where a fine coordinate lands in the strided grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellMapping {
    pub start_cell: [i32; 3],
    pub offset: [i32; 3],
    pub out_coord: VoxelCoord,
    /// `offset_x·s² + offset_y·s + offset_z`.
    pub kernel_offset: usize,
}

impl CellMapping {
    /// True when the coordinate sits exactly on a cell corner.
    pub fn is_cell_start(&self) -> bool {
        self.offset == [0, 0, 0]
    }
}

/// Maps a non-negative coordinate onto its stride cell. The kernel offset is
/// taken with kernel size equal to the stride.
pub fn cell_map(c: VoxelCoord, stride: StrideSpec) -> CellMapping {
    let s = stride.get() as i32;
    let start = |v: i32| v.div_euclid(s) * s;
    let start_cell = [start(c.x), start(c.y), start(c.z)];
    let offset = [c.x - start_cell[0], c.y - start_cell[1], c.z - start_cell[2]];
    let out_coord = VoxelCoord::new(c.batch, start_cell[0] / s, start_cell[1] / s, start_cell[2] / s);
    let su = s as usize;
    let kernel_offset =
        offset[0] as usize * su * su + offset[1] as usize * su + offset[2] as usize;
    CellMapping {
        start_cell,
        offset,
        out_coord,
        kernel_offset,
    }
}

/// Requested storage for a location table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LctBackend {
    Dense,
    Hash,
    #[default]
    Auto,
}

impl std::str::FromStr for LctBackend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(Self::Dense),
            "hash" => Ok(Self::Hash),
            "auto" => Ok(Self::Auto),
            other => Err(Error::Parse(format!("unknown lct backend `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LctConfig {
    pub backend: LctBackend,
    pub dense_threshold: usize,
}

impl Default for LctConfig {
    fn default() -> Self {
        Self {
            backend: LctBackend::Auto,
            dense_threshold: DEFAULT_DENSE_THRESHOLD,
        }
    }
}

impl LctConfig {
    pub fn with_backend(backend: LctBackend) -> Self {
        Self {
            backend,
            ..Self::default()
        }
    }

    /// Resolves `Auto` against the table size of `shape`.
    pub fn resolve(&self, shape: &GridShape) -> LctBackend {
        match self.backend {
            LctBackend::Auto if shape.total_cells() <= self.dense_threshold => LctBackend::Dense,
            LctBackend::Auto => LctBackend::Hash,
            b => b,
        }
    }
}

/// Concurrent slot table shared by location-table construction and the
/// unique-output counter. Each slot starts at [`NO_ROW`] and can be claimed once.
pub(crate) enum SlotTable {
    Dense(Vec<AtomicI32>),
    Hash(DashMap<usize, i32>),
}

impl SlotTable {
    pub(crate) fn new(backend: LctBackend, shape: &GridShape, expected: usize) -> Self {
        match backend {
            LctBackend::Hash => SlotTable::Hash(DashMap::with_capacity(expected)),
            _ => SlotTable::Dense(
                (0..shape.total_cells())
                    .map(|_| AtomicI32::new(NO_ROW))
                    .collect(),
            ),
        }
    }

    /// Writes `value` into an unclaimed slot. On conflict returns the value
    /// already present and leaves the slot unchanged.
    pub(crate) fn claim(&self, key: usize, value: i32) -> std::result::Result<(), i32> {
        match self {
            SlotTable::Dense(slots) => slots[key]
                .compare_exchange(NO_ROW, value, Ordering::AcqRel, Ordering::Acquire)
                .map(|_| ()),
            SlotTable::Hash(map) => match map.entry(key) {
                Entry::Occupied(e) => Err(*e.get()),
                Entry::Vacant(e) => {
                    e.insert(value);
                    Ok(())
                }
            },
        }
    }

    pub(crate) fn freeze(self, shape: GridShape) -> LocationTable {
        let storage = match self {
            SlotTable::Dense(slots) => {
                Storage::Dense(slots.into_iter().map(AtomicI32::into_inner).collect())
            }
            SlotTable::Hash(map) => Storage::Hash(map.into_iter().collect()),
        };
        LocationTable { shape, storage }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Storage {
    Dense(Vec<i32>),
    Hash(HashMap<usize, i32>),
}

/// Maps (batch, voxel coordinate) to the tensor row holding that site.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationTable {
    shape: GridShape,
    storage: Storage,
}

impl LocationTable {
    /// Builds the table in parallel over rows. Rows of an [`IndexSet`] are
    /// unique, so each slot is written at most once.
    pub fn build(sites: &IndexSet, config: &LctConfig) -> Result<Self> {
        let shape = sites.shape();
        let backend = config.resolve(&shape);
        let table = SlotTable::new(backend, &shape, sites.len());
        (0..sites.len()).into_par_iter().try_for_each(|row| {
            let key = table_key(sites.coord(row), &shape);
            table
                .claim(key, row as i32)
                .map_err(|prev| Error::DuplicateCoordinate {
                    row_a: (prev as usize).min(row),
                    row_b: (prev as usize).max(row),
                })
        })?;
        Ok(table.freeze(shape))
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn backend(&self) -> LctBackend {
        match self.storage {
            Storage::Dense(_) => LctBackend::Dense,
            Storage::Hash(_) => LctBackend::Hash,
        }
    }

    /// Row stored at `c`, or `None` when the site is inactive.
    pub fn lookup(&self, c: VoxelCoord) -> Result<Option<usize>> {
        if !self.shape.contains(c) {
            return Err(Error::CoordOutOfBounds { coord: c });
        }
        Ok(self.lookup_key(table_key(c, &self.shape)))
    }

    #[inline]
    pub fn lookup_key(&self, key: usize) -> Option<usize> {
        let v = match &self.storage {
            Storage::Dense(t) => t[key],
            Storage::Hash(m) => m.get(&key).copied().unwrap_or(NO_ROW),
        };
        (v != NO_ROW).then_some(v as usize)
    }

    /// Number of occupied slots.
    pub fn occupied(&self) -> usize {
        match &self.storage {
            Storage::Dense(t) => t.iter().filter(|&&v| v != NO_ROW).count(),
            Storage::Hash(m) => m.len(),
        }
    }

    /// Raw dense slots, `None` for the hash backend.
    pub fn dense_slots(&self) -> Option<&[i32]> {
        match &self.storage {
            Storage::Dense(t) => Some(t),
            Storage::Hash(_) => None,
        }
    }
}
