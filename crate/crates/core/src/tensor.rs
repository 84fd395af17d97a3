//! Sparse tensor data model.
//!
//! Active sites are stored as structure-of-arrays: one contiguous `i32` array
//! per coordinate component (`batch`, `x`, `y`, `z`), so consecutive workers
//! read consecutive memory. Features are a row-major `n × channels` matrix,
//! one row per site.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::Serialize;

use crate::coord;
use crate::error::{Error, Result};

/// Extents of the voxel grid, per axis, plus the number of batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridShape {
    max_x: u32,
    max_y: u32,
    max_z: u32,
    batches: u32,
}

impl GridShape {
    pub fn new(max_x: u32, max_y: u32, max_z: u32, batches: u32) -> Result<Self> {
        if max_x == 0 || max_y == 0 || max_z == 0 || batches == 0 {
            return Err(Error::InvalidShape(format!(
                "all extents must be >= 1, got {max_x}x{max_y}x{max_z} with {batches} batches"
            )));
        }
        let limit = i32::MAX as u32;
        if max_x > limit || max_y > limit || max_z > limit || batches > limit {
            return Err(Error::InvalidShape("extent exceeds the i32 coordinate range".into()));
        }
        let total = (max_x as usize)
            .checked_mul(max_y as usize)
            .and_then(|v| v.checked_mul(max_z as usize))
            .and_then(|v| v.checked_mul(batches as usize));
        if total.is_none() {
            return Err(Error::InvalidShape("cell count overflows the index range".into()));
        }
        Ok(Self {
            max_x,
            max_y,
            max_z,
            batches,
        })
    }

    pub fn max_x(&self) -> u32 {
        self.max_x
    }

    pub fn max_y(&self) -> u32 {
        self.max_y
    }

    pub fn max_z(&self) -> u32 {
        self.max_z
    }

    pub fn batches(&self) -> u32 {
        self.batches
    }

    /// Cells in one batch.
    pub fn volume(&self) -> usize {
        self.max_x as usize * self.max_y as usize * self.max_z as usize
    }

    /// Cells across all batches.
    pub fn total_cells(&self) -> usize {
        self.volume() * self.batches as usize
    }

    /// Spatial bounds only; the batch id is not checked.
    pub fn contains_xyz(&self, x: i32, y: i32, z: i32) -> bool {
        x >= 0
            && y >= 0
            && z >= 0
            && (x as u32) < self.max_x
            && (y as u32) < self.max_y
            && (z as u32) < self.max_z
    }

    pub fn contains(&self, c: VoxelCoord) -> bool {
        c.batch >= 0 && (c.batch as u32) < self.batches && self.contains_xyz(c.x, c.y, c.z)
    }
}

impl fmt::Display for GridShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}x{}x{} ({} batch{})",
            self.max_x,
            self.max_y,
            self.max_z,
            self.batches,
            if self.batches == 1 { "" } else { "es" }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct VoxelCoord {
    pub batch: i32,
    pub x: i32,
    pub y: i32,
    pub z: i32,
}

impl VoxelCoord {
    pub const fn new(batch: i32, x: i32, y: i32, z: i32) -> Self {
        Self { batch, x, y, z }
    }
}

impl fmt::Display for VoxelCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, ({}, {}, {}))", self.batch, self.x, self.y, self.z)
    }
}

/// Raw, unvalidated structure-of-arrays coordinate storage.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VoxelIndices {
    pub batch: Vec<i32>,
    pub x: Vec<i32>,
    pub y: Vec<i32>,
    pub z: Vec<i32>,
}

impl VoxelIndices {
    pub fn with_capacity(n: usize) -> Self {
        Self {
            batch: Vec::with_capacity(n),
            x: Vec::with_capacity(n),
            y: Vec::with_capacity(n),
            z: Vec::with_capacity(n),
        }
    }

    pub fn from_coords<I: IntoIterator<Item = VoxelCoord>>(coords: I) -> Self {
        let mut out = Self::default();
        for c in coords {
            out.push(c);
        }
        out
    }

    pub fn push(&mut self, c: VoxelCoord) {
        self.batch.push(c.batch);
        self.x.push(c.x);
        self.y.push(c.y);
        self.z.push(c.z);
    }

    /// Row count, or `None` when the four arrays disagree in length.
    pub fn consistent_len(&self) -> Option<usize> {
        let n = self.batch.len();
        (self.x.len() == n && self.y.len() == n && self.z.len() == n).then_some(n)
    }

    pub fn len(&self) -> usize {
        self.batch.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batch.is_empty()
    }

    #[inline]
    pub fn coord(&self, row: usize) -> VoxelCoord {
        VoxelCoord::new(self.batch[row], self.x[row], self.y[row], self.z[row])
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = VoxelCoord> + '_ {
        (0..self.len()).map(move |r| self.coord(r))
    }

    fn permuted(&self, order: &[usize]) -> Self {
        Self {
            batch: order.iter().map(|&r| self.batch[r]).collect(),
            x: order.iter().map(|&r| self.x[r]).collect(),
            y: order.iter().map(|&r| self.y[r]).collect(),
            z: order.iter().map(|&r| self.z[r]).collect(),
        }
    }
}

/// One invariant violation found by [`validate_parts`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Finding {
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    OutOfBounds {
        row: usize,
    },
    DuplicateCoordinate {
        row_a: usize,
        row_b: usize,
    },
}

impl Finding {
    fn into_error(self) -> Error {
        match self {
            Finding::LengthMismatch {
                what,
                expected,
                found,
            } => Error::LengthMismatch {
                what,
                expected,
                found,
            },
            Finding::OutOfBounds { row } => Error::OutOfBounds { row },
            Finding::DuplicateCoordinate { row_a, row_b } => {
                Error::DuplicateCoordinate { row_a, row_b }
            }
        }
    }
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::LengthMismatch {
                what,
                expected,
                found,
            } => write!(f, "{what}: expected length {expected}, found {found}"),
            Finding::OutOfBounds { row } => write!(f, "row {row} out of bounds"),
            Finding::DuplicateCoordinate { row_a, row_b } => {
                write!(f, "rows {row_a} and {row_b} share a coordinate")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.findings.is_empty()
    }
}

/// Checks raw tensor parts against every invariant and lists all violations.
///
/// `features_len` of `None` skips the feature-length check (index sets have
/// no features).
pub fn validate_parts(
    shape: &GridShape,
    indices: &VoxelIndices,
    features_len: Option<usize>,
    channels: usize,
) -> ValidationReport {
    let mut findings = Vec::new();
    let n = indices.batch.len();
    for (what, len) in [
        ("x indices", indices.x.len()),
        ("y indices", indices.y.len()),
        ("z indices", indices.z.len()),
    ] {
        if len != n {
            findings.push(Finding::LengthMismatch {
                what,
                expected: n,
                found: len,
            });
        }
    }
    if !findings.is_empty() {
        return ValidationReport { findings };
    }
    if let Some(found) = features_len {
        let expected = n * channels;
        if found != expected {
            findings.push(Finding::LengthMismatch {
                what: "features",
                expected,
                found,
            });
        }
    }

    let mut keyed = Vec::with_capacity(n);
    for row in 0..n {
        let c = indices.coord(row);
        if shape.contains(c) {
            keyed.push((coord::table_key(c, shape), row));
        } else {
            findings.push(Finding::OutOfBounds { row });
        }
    }
    keyed.sort_unstable();
    for group in keyed.chunk_by(|a, b| a.0 == b.0) {
        for &(_, row_b) in &group[1..] {
            findings.push(Finding::DuplicateCoordinate {
                row_a: group[0].1,
                row_b,
            });
        }
    }
    ValidationReport { findings }
}

/// A validated set of unique, in-bounds active sites.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexSet {
    shape: GridShape,
    indices: VoxelIndices,
}

impl IndexSet {
    pub fn new(shape: GridShape, indices: VoxelIndices) -> Result<Self> {
        if let Some(f) = validate_parts(&shape, &indices, None, 0).findings.into_iter().next() {
            return Err(f.into_error());
        }
        Ok(Self { shape, indices })
    }

    pub fn empty(shape: GridShape) -> Self {
        Self {
            shape,
            indices: VoxelIndices::default(),
        }
    }

    pub(crate) fn new_unchecked(shape: GridShape, indices: VoxelIndices) -> Self {
        debug_assert!(validate_parts(&shape, &indices, None, 0).is_valid());
        Self { shape, indices }
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn indices(&self) -> &VoxelIndices {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    #[inline]
    pub fn coord(&self, row: usize) -> VoxelCoord {
        self.indices.coord(row)
    }

    /// Batch-extended linear key of every row.
    pub fn keys(&self) -> Vec<usize> {
        (0..self.len())
            .into_par_iter()
            .map(|r| coord::table_key(self.coord(r), &self.shape))
            .collect()
    }

    /// Row permutation that sorts sites ascending by (batch, linearized coordinate).
    pub fn canonical_order(&self) -> Vec<usize> {
        let keys = self.keys();
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_unstable_by_key(|&r| keys[r]);
        order
    }

    pub fn is_canonical(&self) -> bool {
        self.keys().windows(2).all(|w| w[0] < w[1])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseTensor {
    sites: IndexSet,
    channels: usize,
    features: Vec<f32>,
}

impl SparseTensor {
    /// Validates and assembles a tensor; never admits an invalid state.
    pub fn new(
        shape: GridShape,
        indices: VoxelIndices,
        features: Vec<f32>,
        channels: usize,
    ) -> Result<Self> {
        let report = validate_parts(&shape, &indices, Some(features.len()), channels);
        if let Some(f) = report.findings.into_iter().next() {
            return Err(f.into_error());
        }
        Ok(Self {
            sites: IndexSet { shape, indices },
            channels,
            features,
        })
    }

    pub fn from_sites(sites: IndexSet, features: Vec<f32>, channels: usize) -> Result<Self> {
        let expected = sites.len() * channels;
        if features.len() != expected {
            return Err(Error::LengthMismatch {
                what: "features",
                expected,
                found: features.len(),
            });
        }
        Ok(Self {
            sites,
            channels,
            features,
        })
    }

    pub fn empty(shape: GridShape, channels: usize) -> Self {
        Self {
            sites: IndexSet::empty(shape),
            channels,
            features: Vec::new(),
        }
    }

    pub fn shape(&self) -> GridShape {
        self.sites.shape
    }

    pub fn sites(&self) -> &IndexSet {
        &self.sites
    }

    pub fn indices(&self) -> &VoxelIndices {
        &self.sites.indices
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn row_features(&self, row: usize) -> &[f32] {
        &self.features[row * self.channels..(row + 1) * self.channels]
    }

    #[inline]
    pub fn coord(&self, row: usize) -> VoxelCoord {
        self.sites.coord(row)
    }

    pub fn into_parts(self) -> (IndexSet, Vec<f32>, usize) {
        (self.sites, self.features, self.channels)
    }

    pub fn validate(&self) -> ValidationReport {
        validate_parts(
            &self.sites.shape,
            &self.sites.indices,
            Some(self.features.len()),
            self.channels,
        )
    }

    /// Copy with rows sorted ascending by (batch, linearized coordinate).
    pub fn canonicalized(&self) -> Self {
        let order = self.sites.canonical_order();
        let c = self.channels;
        let mut features = Vec::with_capacity(self.features.len());
        for &r in &order {
            features.extend_from_slice(&self.features[r * c..(r + 1) * c]);
        }
        Self {
            sites: IndexSet {
                shape: self.sites.shape,
                indices: self.sites.indices.permuted(&order),
            },
            channels: c,
            features,
        }
    }

    /// Scatters features into a zero-filled dense grid.
    pub fn to_dense(&self) -> DenseGrid {
        let shape = self.shape();
        let c = self.channels;
        let mut values = vec![0.0f32; shape.total_cells() * c];
        for row in 0..self.len() {
            let key = coord::table_key(self.coord(row), &shape);
            values[key * c..(key + 1) * c].copy_from_slice(self.row_features(row));
        }
        DenseGrid {
            shape,
            channels: c,
            values,
        }
    }
}

/// Dense `batches × z × y × x × channels` grid; cell order follows the
/// location-table key so `values[key * C + c]` addresses one feature.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrid {
    shape: GridShape,
    channels: usize,
    values: Vec<f32>,
}

impl DenseGrid {
    pub fn zeros(shape: GridShape, channels: usize) -> Self {
        Self {
            shape,
            channels,
            values: vec![0.0; shape.total_cells() * channels],
        }
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn cell(&self, c: VoxelCoord) -> Option<&[f32]> {
        if !self.shape.contains(c) {
            return None;
        }
        let key = coord::table_key(c, &self.shape);
        Some(&self.values[key * self.channels..(key + 1) * self.channels])
    }

    /// Drops all-zero cells; output is in canonical order.
    pub fn to_sparse(&self) -> SparseTensor {
        let c = self.channels;
        let mut indices = VoxelIndices::default();
        let mut features = Vec::new();
        let volume = self.shape.volume();
        for key in 0..self.shape.total_cells() {
            let cell = &self.values[key * c..(key + 1) * c];
            if cell.iter().all(|&v| v == 0.0) {
                continue;
            }
            let (x, y, z) = coord::delinearize(key % volume, &self.shape)
                .expect("key derived from the grid volume");
            indices.push(VoxelCoord::new((key / volume) as i32, x, y, z));
            features.extend_from_slice(cell);
        }
        SparseTensor {
            sites: IndexSet::new_unchecked(self.shape, indices),
            channels: c,
            features,
        }
    }
}

/// How features of points sharing a voxel are merged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reducer {
    #[default]
    Mean,
    Sum,
    /// Keep the earliest point in input order.
    First,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub batch: i32,
    pub position: [f64; 3],
    pub features: Vec<f32>,
}

#[derive(Debug, Clone, Copy)]
pub struct Voxelizer {
    pub voxel_size: f64,
    pub origin: [f64; 3],
    pub shape: GridShape,
    pub reducer: Reducer,
}

impl Voxelizer {
    pub fn quantize(&self, p: &Point) -> Option<VoxelCoord> {
        let mut q = [0i32; 3];
        for ((q, pos), origin) in q.iter_mut().zip(p.position).zip(self.origin) {
            let v = ((pos - origin) / self.voxel_size).floor();
            if !v.is_finite() || v < 0.0 || v > i32::MAX as f64 {
                return None;
            }
            *q = v as i32;
        }
        let c = VoxelCoord::new(p.batch, q[0], q[1], q[2]);
        self.shape.contains(c).then_some(c)
    }

    /// Quantizes points onto the grid, merging collisions with the reducer.
    /// Output rows are in canonical order.
    pub fn voxelize(&self, points: &[Point], channels: usize) -> Result<SparseTensor> {
        if !(self.voxel_size.is_finite() && self.voxel_size > 0.0) {
            return Err(Error::InvalidVoxelSize(self.voxel_size));
        }
        let quantized: Vec<Option<VoxelCoord>> =
            points.par_iter().map(|p| self.quantize(p)).collect();

        // key -> (accumulator, count)
        let mut cells: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
        for (i, (p, q)) in points.iter().zip(&quantized).enumerate() {
            let c = q.ok_or(Error::OutOfBounds { row: i })?;
            if p.features.len() != channels {
                return Err(Error::LengthMismatch {
                    what: "point features",
                    expected: channels,
                    found: p.features.len(),
                });
            }
            let key = coord::table_key(c, &self.shape);
            let entry = cells
                .entry(key)
                .or_insert_with(|| (vec![0.0; channels], 0));
            match self.reducer {
                Reducer::First if entry.1 > 0 => {}
                _ => {
                    for (acc, &f) in entry.0.iter_mut().zip(&p.features) {
                        *acc += f as f64;
                    }
                }
            }
            entry.1 += 1;
        }

        let volume = self.shape.volume();
        let mut indices = VoxelIndices::with_capacity(cells.len());
        let mut features = Vec::with_capacity(cells.len() * channels);
        for (key, (acc, count)) in cells {
            let (x, y, z) = coord::delinearize(key % volume, &self.shape)?;
            indices.push(VoxelCoord::new((key / volume) as i32, x, y, z));
            let scale = match self.reducer {
                Reducer::Mean => 1.0 / count as f64,
                Reducer::Sum | Reducer::First => 1.0,
            };
            features.extend(acc.iter().map(|&v| (v * scale) as f32));
        }
        SparseTensor::new(self.shape, indices, features, channels)
    }
}
