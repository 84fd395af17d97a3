//! Dense brute-force references and a seeded equivalence harness.
//!
//! Nothing here reuses the rule-generation or compute code it checks: index
//! arithmetic, neighbor search and accumulation are all done independently,
//! in `f64`, over dense grids or plain hash maps.

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::coord::StrideSpec;
use crate::engine::{self, ExecOptions, WeightTensor};
use crate::error::{Error, Result};
use crate::tensor::{DenseGrid, GridShape, IndexSet, SparseTensor, VoxelCoord, VoxelIndices};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub seed: u64,
    pub site: Option<VoxelCoord>,
    pub channel: Option<usize>,
    pub expected: f64,
    pub actual: f64,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub cases_run: usize,
    pub cases_passed: usize,
    pub max_abs_err: f64,
    pub first_failure: Option<Failure>,
}

impl EquivalenceReport {
    pub fn all_passed(&self) -> bool {
        self.cases_passed == self.cases_run
    }

    pub fn merge(&mut self, other: EquivalenceReport) {
        self.cases_run += other.cases_run;
        self.cases_passed += other.cases_passed;
        self.max_abs_err = self.max_abs_err.max(other.max_abs_err);
        if self.first_failure.is_none() {
            self.first_failure = other.first_failure;
        }
    }

    fn single(failure: Option<Failure>, max_abs_err: f64) -> Self {
        Self {
            cases_run: 1,
            cases_passed: failure.is_none() as usize,
            max_abs_err,
            first_failure: failure,
        }
    }
}

#[inline]
fn cell_index(shape: &GridShape, b: usize, x: usize, y: usize, z: usize) -> usize {
    let (mx, my, mz) = (
        shape.max_x() as usize,
        shape.max_y() as usize,
        shape.max_z() as usize,
    );
    ((b * mz + z) * my + y) * mx + x
}

fn cube_root(v: usize) -> Option<usize> {
    (1..=v).take_while(|k| k * k * k <= v).find(|k| k * k * k == v)
}

/// Textbook strided 3D cross-correlation over a dense grid with symmetric
/// zero padding. Output extent per axis is `⌊(e + 2·pad − k) / s⌋ + 1`.
pub fn dense_conv(
    g: &DenseGrid,
    w: &WeightTensor,
    stride: usize,
    padding: [usize; 3],
) -> Result<DenseGrid> {
    let k = cube_root(w.kernel_volume()).ok_or_else(|| {
        Error::ShapeMismatch(format!("kernel volume {} is not a cube", w.kernel_volume()))
    })?;
    if stride == 0 {
        return Err(Error::ZeroStride);
    }
    if g.channels() != w.in_channels() {
        return Err(Error::ShapeMismatch(format!(
            "grid has {} channels, weights expect {}",
            g.channels(),
            w.in_channels()
        )));
    }
    let in_shape = g.shape();
    let extents = [in_shape.max_x(), in_shape.max_y(), in_shape.max_z()];
    let mut out_ext = [0u32; 3];
    for axis in 0..3 {
        let padded = extents[axis] as usize + 2 * padding[axis];
        if padded < k {
            return Err(Error::ShapeMismatch(format!(
                "axis {axis}: padded extent {padded} smaller than kernel {k}"
            )));
        }
        out_ext[axis] = ((padded - k) / stride + 1) as u32;
    }
    let out_shape = GridShape::new(out_ext[0], out_ext[1], out_ext[2], in_shape.batches())?;
    let in_c = w.in_channels();
    let out_c = w.out_channels();
    let weights = w.values();
    let input = g.values();
    let mut out = DenseGrid::zeros(out_shape, out_c);
    let mut acc = vec![0.0f64; out_c];

    for b in 0..in_shape.batches() as usize {
        for oz in 0..out_ext[2] as usize {
            for oy in 0..out_ext[1] as usize {
                for ox in 0..out_ext[0] as usize {
                    acc.iter_mut().for_each(|a| *a = 0.0);
                    for dx in 0..k {
                        for dy in 0..k {
                            for dz in 0..k {
                                let ix = (ox * stride + dx) as isize - padding[0] as isize;
                                let iy = (oy * stride + dy) as isize - padding[1] as isize;
                                let iz = (oz * stride + dz) as isize - padding[2] as isize;
                                if ix < 0
                                    || iy < 0
                                    || iz < 0
                                    || ix >= extents[0] as isize
                                    || iy >= extents[1] as isize
                                    || iz >= extents[2] as isize
                                {
                                    continue;
                                }
                                let base = cell_index(
                                    &in_shape,
                                    b,
                                    ix as usize,
                                    iy as usize,
                                    iz as usize,
                                ) * in_c;
                                let cell = &input[base..base + in_c];
                                if cell.iter().all(|&v| v == 0.0) {
                                    continue;
                                }
                                let koff = (dx * k + dy) * k + dz;
                                for (oc, a) in acc.iter_mut().enumerate() {
                                    let wrow = &weights[(oc * k * k * k + koff) * in_c..][..in_c];
                                    for (f, wv) in cell.iter().zip(wrow) {
                                        *a += *f as f64 * *wv as f64;
                                    }
                                }
                            }
                        }
                    }
                    let base = cell_index(&out_shape, b, ox, oy, oz) * out_c;
                    for (dst, a) in out.values_mut()[base..base + out_c].iter_mut().zip(&acc) {
                        *dst = *a as f32;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Bernoulli occupancy with probability `density` per cell, features uniform
/// in `[-1, 1]`. Deterministic in `seed`; rows come out in canonical order.
pub fn random_sparse_tensor(
    seed: u64,
    shape: GridShape,
    density: f64,
    channels: usize,
) -> Result<SparseTensor> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::Parse(format!("density must be in (0, 1], got {density}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mx, my, mz) = (
        shape.max_x() as usize,
        shape.max_y() as usize,
        shape.max_z() as usize,
    );
    let mut indices = VoxelIndices::default();
    for b in 0..shape.batches() as usize {
        for z in 0..mz {
            for y in 0..my {
                for x in 0..mx {
                    if rng.gen::<f64>() < density {
                        indices.push(VoxelCoord::new(b as i32, x as i32, y as i32, z as i32));
                    }
                }
            }
        }
    }
    let features = (0..indices.len() * channels)
        .map(|_| rng.gen_range(-1.0f32..=1.0))
        .collect();
    SparseTensor::new(shape, indices, features, channels)
}

/// Weights uniform in `[-1, 1]`, deterministic in `seed`.
pub fn random_weights(
    seed: u64,
    out_channels: usize,
    in_channels: usize,
    kernel_volume: usize,
) -> Result<WeightTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_3e16_7a11_0000);
    WeightTensor::from_fn(out_channels, in_channels, kernel_volume, |_, _, _| {
        rng.gen_range(-1.0f32..=1.0)
    })
}

/// Attaches features uniform in `[-1, 1]` to an existing site set.
pub fn random_features(seed: u64, sites: IndexSet, channels: usize) -> Result<SparseTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0a2_5e00_0000_0000);
    let features = (0..sites.len() * channels)
        .map(|_| rng.gen_range(-1.0f32..=1.0))
        .collect();
    SparseTensor::from_sites(sites, features, channels)
}

/// Distinct stride-`s` cells touched by `sites`, ordered by batch, then z,
/// then y, then x.
pub fn unique_cells(sites: &IndexSet, s: u32) -> Vec<VoxelCoord> {
    let s = s as i32;
    let set: BTreeSet<(i32, i32, i32, i32)> = sites
        .indices()
        .iter()
        .map(|c| (c.batch, c.z / s, c.y / s, c.x / s))
        .collect();
    set.into_iter()
        .map(|(b, z, y, x)| VoxelCoord::new(b, x, y, z))
        .collect()
}

/// Shared settings for one oracle comparison.
#[derive(Debug, Clone, Copy)]
pub struct OracleCheck {
    pub tol: f64,
    pub opts: ExecOptions,
    /// Recorded in failures so a case can be replayed.
    pub seed: u64,
}

impl OracleCheck {
    fn fail(&self, site: Option<VoxelCoord>, message: impl Into<String>) -> EquivalenceReport {
        EquivalenceReport::single(
            Some(Failure {
                seed: self.seed,
                site,
                channel: None,
                expected: f64::NAN,
                actual: f64::NAN,
                message: message.into(),
            }),
            0.0,
        )
    }

    /// Compares `actual` row by row against `expected(row)`.
    fn compare(
        &self,
        actual: &SparseTensor,
        mut expected: impl FnMut(usize) -> Vec<f64>,
    ) -> EquivalenceReport {
        let mut max_err = 0.0f64;
        let mut failure = None;
        for row in 0..actual.len() {
            let want = expected(row);
            for (ch, (&got, &exp)) in actual.row_features(row).iter().zip(&want).enumerate() {
                let err = (got as f64 - exp).abs();
                if (err.is_nan() || err > self.tol) && failure.is_none() {
                    failure = Some(Failure {
                        seed: self.seed,
                        site: Some(actual.coord(row)),
                        channel: Some(ch),
                        expected: exp,
                        actual: got as f64,
                        message: format!("error {err:e} exceeds tolerance {:e}", self.tol),
                    });
                }
                if err.is_nan() {
                    max_err = f64::INFINITY;
                } else {
                    max_err = max_err.max(err);
                }
            }
        }
        EquivalenceReport::single(failure, max_err)
    }

    /// Submanifold engine output vs. zero-padded stride-1 dense convolution
    /// sampled at the active sites.
    pub fn subm(&self, t: &SparseTensor, w: &WeightTensor, k: usize) -> EquivalenceReport {
        let actual = match engine::submanifold(t, k, w, &self.opts) {
            Ok(out) => out,
            Err(e) => return self.fail(None, format!("engine error: {e}")),
        };
        if actual.sites() != t.sites() {
            return self.fail(None, "output sites differ from input sites");
        }
        let r = (k.saturating_sub(1)) / 2;
        let dense = match dense_conv(&t.to_dense(), w, 1, [r; 3]) {
            Ok(d) => d,
            Err(e) => return self.fail(None, format!("oracle error: {e}")),
        };
        self.compare(&actual, |row| {
            dense_at(&dense, actual.coord(row))
        })
    }

    /// Downsampling engine output vs. stride-`s` dense convolution without
    /// padding, sampled at the occupied coarse cells.
    pub fn downsample(&self, t: &SparseTensor, w: &WeightTensor, s: u32) -> EquivalenceReport {
        let stride = match StrideSpec::new(s) {
            Ok(v) => v,
            Err(e) => return self.fail(None, e.to_string()),
        };
        let actual = match engine::downsample(t, stride, w, &self.opts) {
            Ok(out) => out,
            Err(e) => return self.fail(None, format!("engine error: {e}")),
        };
        let cells = unique_cells(t.sites(), s);
        let got: Vec<VoxelCoord> = actual.indices().iter().collect();
        if got != cells {
            return self.fail(
                None,
                format!(
                    "engine produced {} coarse sites, oracle expects {}",
                    got.len(),
                    cells.len()
                ),
            );
        }
        // Zero-extend the grid to a multiple of s so the unpadded dense
        // convolution covers every partial boundary cell.
        let sh = t.shape();
        let ext = |e: u32| e.div_ceil(s) * s;
        let padded = GridShape::new(ext(sh.max_x()), ext(sh.max_y()), ext(sh.max_z()), sh.batches())
            .and_then(|shape| {
                SparseTensor::new(shape, t.indices().clone(), t.features().to_vec(), t.channels())
            });
        let dense = match padded.and_then(|p| dense_conv(&p.to_dense(), w, s as usize, [0; 3])) {
            Ok(d) => d,
            Err(e) => return self.fail(None, format!("oracle error: {e}")),
        };
        self.compare(&actual, |row| dense_at(&dense, actual.coord(row)))
    }

    /// Inverse engine output vs. the per-site product formula
    /// `out[p, oc] = Σ_ic coarse[parent(p), ic] · w[oc, koff(p), ic]`.
    pub fn inverse(
        &self,
        fine: &IndexSet,
        coarse: &SparseTensor,
        w: &WeightTensor,
        s: u32,
    ) -> EquivalenceReport {
        let stride = match StrideSpec::new(s) {
            Ok(v) => v,
            Err(e) => return self.fail(None, e.to_string()),
        };
        let parents: HashMap<VoxelCoord, usize> = coarse
            .indices()
            .iter()
            .enumerate()
            .map(|(row, c)| (c, row))
            .collect();
        let si = s as i32;
        let lookup = |c: VoxelCoord| {
            let parent = VoxelCoord::new(c.batch, c.x / si, c.y / si, c.z / si);
            let koff = (((c.x % si) * si + c.y % si) * si + c.z % si) as usize;
            parents.get(&parent).map(|&row| (row, koff))
        };
        let missing = (0..fine.len()).find(|&r| lookup(fine.coord(r)).is_none());

        let actual = match (engine::upsample(coarse, fine, stride, w, &self.opts), missing) {
            (Err(Error::MissingParent { row }), Some(m)) if row == m => {
                return EquivalenceReport::single(None, 0.0);
            }
            (Err(e), _) => return self.fail(None, format!("engine error: {e}")),
            (Ok(_), Some(m)) => {
                return self.fail(Some(fine.coord(m)), "engine accepted a site with no parent")
            }
            (Ok(out), None) => out,
        };
        if actual.sites() != fine {
            return self.fail(None, "output sites differ from the fine index set");
        }
        let in_c = w.in_channels();
        let values = w.values();
        let kv = w.kernel_volume();
        self.compare(&actual, |row| {
            let (parent, koff) = lookup(fine.coord(row)).expect("checked above");
            let feats = coarse.row_features(parent);
            (0..w.out_channels())
                .map(|oc| {
                    (0..in_c)
                        .map(|ic| feats[ic] as f64 * values[(oc * kv + koff) * in_c + ic] as f64)
                        .sum()
                })
                .collect()
        })
    }
}

fn dense_at(g: &DenseGrid, c: VoxelCoord) -> Vec<f64> {
    match g.cell(c) {
        Some(cell) => cell.iter().map(|&v| v as f64).collect(),
        None => vec![f64::NAN; g.channels()],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SuiteMode {
    Subm,
    Down,
    Inv,
}

impl std::str::FromStr for SuiteMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "subm" => Ok(Self::Subm),
            "down" => Ok(Self::Down),
            "inv" => Ok(Self::Inv),
            other => Err(Error::Parse(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SuiteConfig {
    pub seed: u64,
    pub shape: GridShape,
    pub density: f64,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: u32,
    pub modes: Vec<SuiteMode>,
    pub cases: usize,
    pub tol: f64,
    pub opts: ExecOptions,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub modes: Vec<(SuiteMode, EquivalenceReport)>,
}

impl SuiteReport {
    pub fn all_passed(&self) -> bool {
        self.modes.iter().all(|(_, r)| r.all_passed())
    }
}

/// Runs `cases` seeded cases per mode; case `i` uses seed `seed + i`.
pub fn run_suite(cfg: &SuiteConfig) -> Result<SuiteReport> {
    let mut modes = Vec::new();
    for &mode in &cfg.modes {
        let mut report = EquivalenceReport::default();
        for i in 0..cfg.cases {
            let seed = cfg.seed.wrapping_add(i as u64);
            let check = OracleCheck {
                tol: cfg.tol,
                opts: cfg.opts,
                seed,
            };
            let t = random_sparse_tensor(seed, cfg.shape, cfg.density, cfg.in_channels)?;
            let case = match mode {
                SuiteMode::Subm => {
                    let w = random_weights(seed, cfg.out_channels, cfg.in_channels, cfg.kernel.pow(3))?;
                    check.subm(&t, &w, cfg.kernel)
                }
                SuiteMode::Down => {
                    let kv = (cfg.stride as usize).pow(3);
                    let w = random_weights(seed, cfg.out_channels, cfg.in_channels, kv)?;
                    check.downsample(&t, &w, cfg.stride)
                }
                SuiteMode::Inv => {
                    let stride = StrideSpec::new(cfg.stride)?;
                    let coarse = IndexSet::new(
                        stride.coarse_shape(&cfg.shape),
                        VoxelIndices::from_coords(unique_cells(t.sites(), cfg.stride)),
                    )?;
                    let coarse_t = random_features(seed, coarse, cfg.in_channels)?;
                    let kv = stride.cell_volume();
                    let w = random_weights(seed, cfg.out_channels, cfg.in_channels, kv)?;
                    check.inverse(t.sites(), &coarse_t, &w, cfg.stride)
                }
            };
            report.merge(case);
        }
        modes.push((mode, report));
    }
    Ok(SuiteReport { modes })
}
