//! Rule (offset) table generation for submanifold, downsampling and inverse
//! convolution.
//!
//! An [`OffsetTable`] stores, for every output site, one input row per kernel
//! offset, or [`NO_ROW`] when that neighbor is inactive. Downsampling first
//! claims coarse cells through a shared status table and an atomic counter,
//! then canonicalizes the claimed cells so output rows do not depend on
//! scheduling.

use std::sync::atomic::{AtomicI32, AtomicUsize, Ordering};

use rayon::prelude::*;

use crate::coord::{
    cell_map, key_coord, table_key, LctConfig, LocationTable, SlotTable, StrideSpec, NO_ROW,
};
use crate::error::{Error, Result};
use crate::tensor::{GridShape, IndexSet, VoxelCoord, VoxelIndices};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OffsetTable {
    rows: usize,
    kernel_volume: usize,
    entries: Vec<i32>,
}

impl OffsetTable {
    pub fn from_entries(rows: usize, kernel_volume: usize, entries: Vec<i32>) -> Result<Self> {
        if kernel_volume == 0 {
            return Err(Error::ZeroKernel);
        }
        if entries.len() != rows * kernel_volume {
            return Err(Error::LengthMismatch {
                what: "offset table entries",
                expected: rows * kernel_volume,
                found: entries.len(),
            });
        }
        Ok(Self {
            rows,
            kernel_volume,
            entries,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel_volume
    }

    pub fn entries(&self) -> &[i32] {
        &self.entries
    }

    #[inline]
    pub fn row(&self, m: usize) -> &[i32] {
        &self.entries[m * self.kernel_volume..(m + 1) * self.kernel_volume]
    }

    /// Input row at `(m, koff)`, `None` for an inactive neighbor.
    pub fn get(&self, m: usize, koff: usize) -> Option<usize> {
        let v = self.row(m)[koff];
        (v != NO_ROW).then_some(v as usize)
    }

    /// Count of non-sentinel entries.
    pub fn active_entries(&self) -> usize {
        self.entries.iter().filter(|&&v| v != NO_ROW).count()
    }
}

fn check_kernel(k: usize) -> Result<usize> {
    if k == 0 {
        return Err(Error::ZeroKernel);
    }
    if k.is_multiple_of(2) {
        return Err(Error::EvenKernel(k));
    }
    Ok(k * k * k)
}

/// Neighborhood table for submanifold convolution with an odd `k`.
///
/// Output sites equal input sites. Entry `(m, dx·k² + dy·k + dz)` holds the row
/// at `p_m + (dx − r, dy − r, dz − r)`, `r = (k − 1) / 2`, within the same
/// batch; neighbors outside the grid count as inactive.
pub fn build_subm_oft(sites: &IndexSet, lct: &LocationTable, k: usize) -> Result<OffsetTable> {
    let kernel_volume = check_kernel(k)?;
    let shape = sites.shape();
    if lct.shape() != shape {
        return Err(Error::ShapeMismatch(format!(
            "location table covers {}, tensor is {}",
            lct.shape(),
            shape
        )));
    }
    let n = sites.len();
    let r = ((k - 1) / 2) as i32;
    let ki = k as i32;
    let mut entries = vec![NO_ROW; n * kernel_volume];
    entries
        .par_chunks_mut(kernel_volume)
        .enumerate()
        .for_each(|(m, out)| {
            let p = sites.coord(m);
            let mut koff = 0;
            for dx in 0..ki {
                for dy in 0..ki {
                    for dz in 0..ki {
                        let q = VoxelCoord::new(p.batch, p.x + dx - r, p.y + dy - r, p.z + dz - r);
                        if shape.contains_xyz(q.x, q.y, q.z) {
                            if let Some(row) = lct.lookup_key(table_key(q, &shape)) {
                                out[koff] = row as i32;
                            }
                        }
                        koff += 1;
                    }
                }
            }
        });
    Ok(OffsetTable {
        rows: n,
        kernel_volume,
        entries,
    })
}

/// Result of the unique-output counter: the number of distinct coarse cells
/// and a status table marking them.
#[derive(Debug, Clone)]
pub struct UniqueCounterState {
    count: usize,
    status: LocationTable,
}

impl UniqueCounterState {
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn coarse_shape(&self) -> GridShape {
        self.status.shape()
    }

    pub fn is_occupied(&self, coarse: VoxelCoord) -> Result<bool> {
        Ok(self.status.lookup(coarse)?.is_some())
    }

    /// Row of the input that won the claim on `coarse`. Which input wins
    /// depends on scheduling.
    pub fn claimant(&self, coarse: VoxelCoord) -> Result<Option<usize>> {
        self.status.lookup(coarse)
    }
}

/// Per-input-row link to a cell on the other side of a strided convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CellPair {
    pub out_row: u32,
    pub kernel_offset: u32,
}

struct ClaimStage {
    state: UniqueCounterState,
    /// (coarse key, kernel offset) per input row.
    cells: Vec<(usize, u32)>,
    /// Claimed coarse keys in arrival order.
    winners: Vec<usize>,
}

fn claim_cells(sites: &IndexSet, stride: StrideSpec, config: &LctConfig) -> ClaimStage {
    let coarse = stride.coarse_shape(&sites.shape());
    let n = sites.len();
    let status = SlotTable::new(config.resolve(&coarse), &coarse, n);
    let counter = AtomicUsize::new(0);
    let winners: Vec<AtomicUsize> = (0..n).map(|_| AtomicUsize::new(usize::MAX)).collect();

    let cells: Vec<(usize, u32)> = (0..n)
        .into_par_iter()
        .map(|row| {
            let m = cell_map(sites.coord(row), stride);
            let key = table_key(m.out_coord, &coarse);
            if status.claim(key, row as i32).is_ok() {
                let ticket = counter.fetch_add(1, Ordering::AcqRel);
                winners[ticket].store(key, Ordering::Release);
            }
            (key, m.kernel_offset as u32)
        })
        .collect();

    let count = counter.into_inner();
    let winners = winners
        .into_iter()
        .take(count)
        .map(AtomicUsize::into_inner)
        .collect();
    ClaimStage {
        state: UniqueCounterState {
            count,
            status: status.freeze(coarse),
        },
        cells,
        winners,
    }
}

/// Counts distinct `(batch, ⌊x/s⌋, ⌊y/s⌋, ⌊z/s⌋)` cells. The result does not
/// depend on execution order.
pub fn count_unique_outputs(
    sites: &IndexSet,
    stride: StrideSpec,
    config: &LctConfig,
) -> UniqueCounterState {
    claim_cells(sites, stride, config).state
}

/// Fine-to-coarse link produced by downsampling rule generation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DownsampleMap {
    stride: StrideSpec,
    pairs: Vec<CellPair>,
    out_sites: IndexSet,
}

impl DownsampleMap {
    pub fn stride(&self) -> StrideSpec {
        self.stride
    }

    /// One `(out_row, kernel_offset)` pair per input row.
    pub fn pairs(&self) -> &[CellPair] {
        &self.pairs
    }

    pub fn out_count(&self) -> usize {
        self.out_sites.len()
    }

    /// Coarse sites in canonical order.
    pub fn out_sites(&self) -> &IndexSet {
        &self.out_sites
    }
}

/// Two-stage downsampling rules with kernel size equal to the stride.
///
/// Stage one claims coarse cells and records each input's cell and kernel
/// offset. The claimed cells are then sorted ascending by (batch, linearized
/// coordinate) and numbered, and stage two scatters every input row into its
/// `(out_row, kernel_offset)` slot of an `s³`-wide offset table.
pub fn build_downsample_oft(
    sites: &IndexSet,
    stride: StrideSpec,
    config: &LctConfig,
) -> Result<(DownsampleMap, OffsetTable)> {
    let ClaimStage {
        cells, mut winners, ..
    } = claim_cells(sites, stride, config);
    let coarse = stride.coarse_shape(&sites.shape());

    winners.par_sort_unstable();
    let out_sites = IndexSet::new_unchecked(
        coarse,
        VoxelIndices::from_coords(winners.iter().map(|&k| key_coord(k, &coarse))),
    );
    let out_lct = LocationTable::build(&out_sites, config)?;

    let pairs: Vec<CellPair> = cells
        .par_iter()
        .map(|&(key, kernel_offset)| CellPair {
            out_row: out_lct.lookup_key(key).expect("every claimed cell is numbered") as u32,
            kernel_offset,
        })
        .collect();

    let kernel_volume = stride.cell_volume();
    let slots: Vec<AtomicI32> = (0..winners.len() * kernel_volume)
        .map(|_| AtomicI32::new(NO_ROW))
        .collect();
    pairs.par_iter().enumerate().try_for_each(|(row, p)| {
        let slot = p.out_row as usize * kernel_volume + p.kernel_offset as usize;
        slots[slot]
            .compare_exchange(NO_ROW, row as i32, Ordering::AcqRel, Ordering::Acquire)
            .map(|_| ())
            .map_err(|prev| Error::DuplicateCoordinate {
                row_a: (prev as usize).min(row),
                row_b: (prev as usize).max(row),
            })
    })?;
    let oft = OffsetTable {
        rows: winners.len(),
        kernel_volume,
        entries: slots.into_iter().map(AtomicI32::into_inner).collect(),
    };
    Ok((
        DownsampleMap {
            stride,
            pairs,
            out_sites,
        },
        oft,
    ))
}

/// Coarse-to-fine link used by inverse convolution: every fine row has exactly
/// one parent coarse row and a kernel offset inside that parent's cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InverseMap {
    stride: StrideSpec,
    coarse_len: usize,
    pairs: Vec<CellPair>,
}

impl InverseMap {
    pub fn stride(&self) -> StrideSpec {
        self.stride
    }

    pub fn coarse_len(&self) -> usize {
        self.coarse_len
    }

    /// One `(coarse_row, kernel_offset)` pair per fine row.
    pub fn pairs(&self) -> &[CellPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Locates every fine site's parent among the coarse sites through a location
/// table built over the coarse set.
///
/// The coarse grid must be the strided grid of the fine one. A fine site whose
/// cell is missing from `coarse` yields [`Error::MissingParent`].
pub fn build_inverse_map(
    fine: &IndexSet,
    coarse: &IndexSet,
    stride: StrideSpec,
    config: &LctConfig,
) -> Result<InverseMap> {
    let expected = stride.coarse_shape(&fine.shape());
    if coarse.shape() != expected {
        return Err(Error::ShapeMismatch(format!(
            "coarse grid {} does not match stride-{} grid {}",
            coarse.shape(),
            stride.get(),
            expected
        )));
    }
    let lct = LocationTable::build(coarse, config)?;
    let found: Vec<Option<CellPair>> = (0..fine.len())
        .into_par_iter()
        .map(|row| {
            let m = cell_map(fine.coord(row), stride);
            lct.lookup_key(table_key(m.out_coord, &expected))
                .map(|parent| CellPair {
                    out_row: parent as u32,
                    kernel_offset: m.kernel_offset as u32,
                })
        })
        .collect();
    let pairs = found
        .into_iter()
        .enumerate()
        .map(|(row, p)| p.ok_or(Error::MissingParent { row }))
        .collect::<Result<Vec<_>>>()?;
    Ok(InverseMap {
        stride,
        coarse_len: coarse.len(),
        pairs,
    })
}
