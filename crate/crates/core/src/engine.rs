//! Gather-compute-scatter convolution over offset tables.
//!
//! Every operator has two compute paths:
//!
//! * [`ComputePath::Reference`] is the plain nested loop: for each output row,
//!   for each output channel, walk all kernel offsets and input channels,
//!   reading weights straight from the weight tensor.
//! * [`ComputePath::Optimized`] partitions work into blocks of output rows.
//!   Each block compacts its active rules once, then for every output channel
//!   stages that channel's weight slice into a block-local tile and reuses it
//!   for every row in the block.
//!
//! Both paths accumulate each output element in the same order (kernel offset
//! major, input channel minor), so their results are bitwise identical.

use std::str::FromStr;

use rayon::prelude::*;

use crate::coord::{LctConfig, LocationTable, StrideSpec, NO_ROW};
use crate::error::{Error, Result};
use crate::rules::{
    build_downsample_oft, build_inverse_map, build_subm_oft, DownsampleMap, InverseMap,
    OffsetTable,
};
use crate::tensor::{IndexSet, SparseTensor};

/// Output rows handled by one worker group on the optimized path.
const ROW_BLOCK: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ComputePath {
    Reference,
    #[default]
    Optimized,
}

impl FromStr for ComputePath {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reference" => Ok(Self::Reference),
            "optimized" => Ok(Self::Optimized),
            other => Err(Error::Parse(format!("unknown compute path `{other}`"))),
        }
    }
}

impl std::fmt::Display for ComputePath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ComputePath::Reference => "reference",
            ComputePath::Optimized => "optimized",
        })
    }
}

/// Convolution weights laid out `[out_channel][kernel_offset][in_channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTensor {
    out_channels: usize,
    in_channels: usize,
    kernel_volume: usize,
    values: Vec<f32>,
}

impl WeightTensor {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        kernel_volume: usize,
        values: Vec<f32>,
    ) -> Result<Self> {
        if out_channels == 0 || in_channels == 0 || kernel_volume == 0 {
            return Err(Error::ShapeMismatch(
                "weight dimensions must all be positive".into(),
            ));
        }
        let expected = out_channels * kernel_volume * in_channels;
        if values.len() != expected {
            return Err(Error::LengthMismatch {
                what: "weights",
                expected,
                found: values.len(),
            });
        }
        Ok(Self {
            out_channels,
            in_channels,
            kernel_volume,
            values,
        })
    }

    pub fn from_fn(
        out_channels: usize,
        in_channels: usize,
        kernel_volume: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(out_channels * kernel_volume * in_channels);
        for oc in 0..out_channels {
            for koff in 0..kernel_volume {
                for ic in 0..in_channels {
                    values.push(f(oc, koff, ic));
                }
            }
        }
        Self::new(out_channels, in_channels, kernel_volume, values)
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel_volume
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn index(&self, oc: usize, koff: usize, ic: usize) -> usize {
        oc * self.kernel_volume * self.in_channels + koff * self.in_channels + ic
    }

    #[inline]
    pub fn get(&self, oc: usize, koff: usize, ic: usize) -> f32 {
        self.values[self.index(oc, koff, ic)]
    }

    /// All `kernel_volume · in_channels` weights of one output channel.
    pub fn out_channel_slice(&self, oc: usize) -> &[f32] {
        let len = self.kernel_volume * self.in_channels;
        &self.values[oc * len..(oc + 1) * len]
    }

    /// Elementwise sum; shapes must agree.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if (self.out_channels, self.in_channels, self.kernel_volume)
            != (other.out_channels, other.in_channels, other.kernel_volume)
        {
            return Err(Error::ShapeMismatch("weight shapes differ".into()));
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        Self::new(self.out_channels, self.in_channels, self.kernel_volume, values)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerMode {
    Submanifold { kernel: usize },
    Downsample { stride: StrideSpec },
    Inverse { stride: StrideSpec },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayerSpec {
    mode: LayerMode,
    weights: WeightTensor,
}

impl ConvLayerSpec {
    pub fn new(mode: LayerMode, weights: WeightTensor) -> Result<Self> {
        let kernel_volume = match mode {
            LayerMode::Submanifold { kernel } => {
                if kernel == 0 {
                    return Err(Error::ZeroKernel);
                }
                if kernel % 2 == 0 {
                    return Err(Error::EvenKernel(kernel));
                }
                kernel.pow(3)
            }
            LayerMode::Downsample { stride } | LayerMode::Inverse { stride } => {
                stride.cell_volume()
            }
        };
        if weights.kernel_volume() != kernel_volume {
            return Err(Error::ShapeMismatch(format!(
                "layer needs kernel volume {kernel_volume}, weights have {}",
                weights.kernel_volume()
            )));
        }
        Ok(Self { mode, weights })
    }

    pub fn mode(&self) -> LayerMode {
        self.mode
    }

    pub fn weights(&self) -> &WeightTensor {
        &self.weights
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ExecOptions {
    pub path: ComputePath,
    pub lct: LctConfig,
}

fn check_rules(oft: &OffsetTable, inputs: usize, w: &WeightTensor) -> Result<()> {
    if oft.kernel_volume() != w.kernel_volume() {
        return Err(Error::ShapeMismatch(format!(
            "offset table kernel volume {} vs weight kernel volume {}",
            oft.kernel_volume(),
            w.kernel_volume()
        )));
    }
    let limit = inputs as i32;
    if !oft.entries().par_iter().all(|&e| e == NO_ROW || (0..limit).contains(&e)) {
        return Err(Error::ShapeMismatch(format!(
            "offset table references rows beyond the {inputs} input sites"
        )));
    }
    Ok(())
}

fn check_in_channels(t: &SparseTensor, w: &WeightTensor) -> Result<()> {
    if t.channels() != w.in_channels() {
        return Err(Error::ShapeMismatch(format!(
            "tensor has {} channels, weights expect {}",
            t.channels(),
            w.in_channels()
        )));
    }
    Ok(())
}

/// Plain nested loop over rows, kernel offsets and channels.
fn compute_rules_reference(
    input: &[f32],
    oft: &OffsetTable,
    w: &WeightTensor,
) -> Vec<f32> {
    let n = oft.rows();
    let kv = oft.kernel_volume();
    let in_c = w.in_channels();
    let out_c = w.out_channels();
    let rules = oft.entries();
    let weights = w.values();
    let mut output = vec![0.0f32; n * out_c];
    for i in 0..n {
        for o in 0..out_c {
            let mut s = 0.0f32;
            for k in 0..kv {
                let n_idx = rules[i * kv + k];
                if n_idx != NO_ROW {
                    let n_idx = n_idx as usize;
                    for c in 0..in_c {
                        let w_idx = o * kv * in_c + k * in_c + c;
                        s += input[n_idx * in_c + c] * weights[w_idx];
                    }
                }
            }
            output[i * out_c + o] = s;
        }
    }
    output
}

/// Blocked path with per-block rule compaction and a cached weight tile per
/// output channel.
fn compute_rules_optimized(
    input: &[f32],
    oft: &OffsetTable,
    w: &WeightTensor,
) -> Vec<f32> {
    let n = oft.rows();
    let in_c = w.in_channels();
    let out_c = w.out_channels();
    let tile_len = w.kernel_volume() * in_c;
    let mut output = vec![0.0f32; n * out_c];

    output
        .par_chunks_mut(ROW_BLOCK * out_c)
        .enumerate()
        .for_each(|(block, out)| {
            let first = block * ROW_BLOCK;
            let rows = out.len() / out_c;

            // (weight offset in tile, feature offset in input), koff ascending
            let mut active: Vec<(usize, usize)> = Vec::new();
            let mut starts = Vec::with_capacity(rows + 1);
            for r in 0..rows {
                starts.push(active.len());
                for (koff, &e) in oft.row(first + r).iter().enumerate() {
                    if e != NO_ROW {
                        active.push((koff * in_c, e as usize * in_c));
                    }
                }
            }
            starts.push(active.len());

            let mut tile = vec![0.0f32; tile_len];
            for oc in 0..out_c {
                tile.copy_from_slice(w.out_channel_slice(oc));
                for r in 0..rows {
                    let mut sum = 0.0f32;
                    for &(w_off, f_off) in &active[starts[r]..starts[r + 1]] {
                        let feats = &input[f_off..f_off + in_c];
                        let wts = &tile[w_off..w_off + in_c];
                        for (f, wv) in feats.iter().zip(wts) {
                            sum += f * wv;
                        }
                    }
                    out[r * out_c + oc] = sum;
                }
            }
        });
    output
}

fn compute_rules(input: &[f32], oft: &OffsetTable, w: &WeightTensor, path: ComputePath) -> Vec<f32> {
    match path {
        ComputePath::Reference => compute_rules_reference(input, oft, w),
        ComputePath::Optimized => compute_rules_optimized(input, oft, w),
    }
}

/// Submanifold convolution; output sites equal input sites.
pub fn subm_conv(
    t: &SparseTensor,
    oft: &OffsetTable,
    w: &WeightTensor,
    path: ComputePath,
) -> Result<SparseTensor> {
    check_in_channels(t, w)?;
    if oft.rows() != t.len() {
        return Err(Error::ShapeMismatch(format!(
            "offset table has {} rows for {} sites",
            oft.rows(),
            t.len()
        )));
    }
    check_rules(oft, t.len(), w)?;
    let out = compute_rules(t.features(), oft, w, path);
    SparseTensor::from_sites(t.sites().clone(), out, w.out_channels())
}

/// Strided convolution with kernel size equal to the stride; output sites are
/// the canonical coarse cells of `dmap`.
pub fn sparse_conv(
    t: &SparseTensor,
    dmap: &DownsampleMap,
    oft: &OffsetTable,
    w: &WeightTensor,
    path: ComputePath,
) -> Result<SparseTensor> {
    check_in_channels(t, w)?;
    if dmap.pairs().len() != t.len() {
        return Err(Error::ShapeMismatch(format!(
            "downsample map covers {} rows, tensor has {}",
            dmap.pairs().len(),
            t.len()
        )));
    }
    if oft.rows() != dmap.out_count() || oft.kernel_volume() != dmap.stride().cell_volume() {
        return Err(Error::ShapeMismatch(
            "offset table does not match the downsample map".into(),
        ));
    }
    check_rules(oft, t.len(), w)?;
    let out = compute_rules(t.features(), oft, w, path);
    SparseTensor::from_sites(dmap.out_sites().clone(), out, w.out_channels())
}

fn inverse_reference(coarse: &SparseTensor, imap: &InverseMap, w: &WeightTensor) -> Vec<f32> {
    let in_c = w.in_channels();
    let out_c = w.out_channels();
    let kv = w.kernel_volume();
    let feats = coarse.features();
    let weights = w.values();
    let mut output = vec![0.0f32; imap.len() * out_c];
    for (p, pair) in imap.pairs().iter().enumerate() {
        let row = pair.out_row as usize;
        let k = pair.kernel_offset as usize;
        for o in 0..out_c {
            let mut s = 0.0f32;
            for c in 0..in_c {
                s += feats[row * in_c + c] * weights[o * kv * in_c + k * in_c + c];
            }
            output[p * out_c + o] = s;
        }
    }
    output
}

fn inverse_optimized(coarse: &SparseTensor, imap: &InverseMap, w: &WeightTensor) -> Vec<f32> {
    let in_c = w.in_channels();
    let out_c = w.out_channels();
    let pairs = imap.pairs();

    // Stage the parent features of every fine site into a temporary array.
    let mut staged = vec![0.0f32; pairs.len() * in_c];
    staged
        .par_chunks_mut(in_c)
        .zip(pairs.par_iter())
        .for_each(|(dst, pair)| dst.copy_from_slice(coarse.row_features(pair.out_row as usize)));

    let mut output = vec![0.0f32; pairs.len() * out_c];
    output
        .par_chunks_mut(ROW_BLOCK * out_c)
        .enumerate()
        .for_each(|(block, out)| {
            let first = block * ROW_BLOCK;
            let rows = out.len() / out_c;
            let mut tile = vec![0.0f32; w.kernel_volume() * in_c];
            for oc in 0..out_c {
                tile.copy_from_slice(w.out_channel_slice(oc));
                for r in 0..rows {
                    let p = first + r;
                    let k = pairs[p].kernel_offset as usize;
                    let feats = &staged[p * in_c..(p + 1) * in_c];
                    let wts = &tile[k * in_c..(k + 1) * in_c];
                    let mut sum = 0.0f32;
                    for (f, wv) in feats.iter().zip(wts) {
                        sum += f * wv;
                    }
                    out[r * out_c + oc] = sum;
                }
            }
        });
    output
}

/// Inverse (upsampling) convolution: each fine site takes its parent's
/// features times the weights at its kernel offset.
pub fn inverse_conv(
    coarse: &SparseTensor,
    imap: &InverseMap,
    fine: &IndexSet,
    w: &WeightTensor,
    path: ComputePath,
) -> Result<SparseTensor> {
    check_in_channels(coarse, w)?;
    if w.kernel_volume() != imap.stride().cell_volume() {
        return Err(Error::ShapeMismatch(format!(
            "stride {} needs kernel volume {}, weights have {}",
            imap.stride().get(),
            imap.stride().cell_volume(),
            w.kernel_volume()
        )));
    }
    if imap.len() != fine.len() {
        return Err(Error::ShapeMismatch(format!(
            "inverse map covers {} fine rows, index set has {}",
            imap.len(),
            fine.len()
        )));
    }
    if let Some(row) = imap
        .pairs()
        .iter()
        .position(|p| p.out_row as usize >= coarse.len())
    {
        return Err(Error::MissingParent { row });
    }
    let out = match path {
        ComputePath::Reference => inverse_reference(coarse, imap, w),
        ComputePath::Optimized => inverse_optimized(coarse, imap, w),
    };
    SparseTensor::from_sites(fine.clone(), out, w.out_channels())
}

/// Builds the location and offset tables, then runs [`subm_conv`].
pub fn submanifold(
    t: &SparseTensor,
    kernel: usize,
    w: &WeightTensor,
    opts: &ExecOptions,
) -> Result<SparseTensor> {
    let lct = LocationTable::build(t.sites(), &opts.lct)?;
    let oft = build_subm_oft(t.sites(), &lct, kernel)?;
    subm_conv(t, &oft, w, opts.path)
}

/// Builds downsampling rules, then runs [`sparse_conv`].
pub fn downsample(
    t: &SparseTensor,
    stride: StrideSpec,
    w: &WeightTensor,
    opts: &ExecOptions,
) -> Result<SparseTensor> {
    let (dmap, oft) = build_downsample_oft(t.sites(), stride, &opts.lct)?;
    sparse_conv(t, &dmap, &oft, w, opts.path)
}

/// Builds the inverse map onto `fine`, then runs [`inverse_conv`].
pub fn upsample(
    coarse: &SparseTensor,
    fine: &IndexSet,
    stride: StrideSpec,
    w: &WeightTensor,
    opts: &ExecOptions,
) -> Result<SparseTensor> {
    let imap = build_inverse_map(fine, coarse.sites(), stride, &opts.lct)?;
    inverse_conv(coarse, &imap, fine, w, opts.path)
}

/// Applies layers in order. Downsample layers push their input sites on a
/// stack; inverse layers pop them as the fine target.
pub fn run_pipeline(
    layers: &[ConvLayerSpec],
    t: &SparseTensor,
    opts: &ExecOptions,
) -> Result<SparseTensor> {
    let mut current = t.clone();
    let mut fine_stack: Vec<IndexSet> = Vec::new();
    for (layer, spec) in layers.iter().enumerate() {
        let w = spec.weights();
        if current.channels() != w.in_channels() {
            return Err(Error::ChannelMismatch {
                layer,
                expected: w.in_channels(),
                found: current.channels(),
            });
        }
        current = match spec.mode() {
            LayerMode::Submanifold { kernel } => submanifold(&current, kernel, w, opts)?,
            LayerMode::Downsample { stride } => {
                let out = downsample(&current, stride, w, opts)?;
                fine_stack.push(current.sites().clone());
                out
            }
            LayerMode::Inverse { stride } => {
                let fine = fine_stack
                    .pop()
                    .ok_or(Error::UnmatchedInverse { layer })?;
                upsample(&current, &fine, stride, w, opts)?
            }
        };
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{GridShape, VoxelCoord, VoxelIndices};

    fn tensor(shape: GridShape, pts: &[(i32, i32, i32)], feats: Vec<f32>, c: usize) -> SparseTensor {
        SparseTensor::new(
            shape,
            VoxelIndices::from_coords(pts.iter().map(|&(x, y, z)| VoxelCoord::new(0, x, y, z))),
            feats,
            c,
        )
        .unwrap()
    }

    fn g4() -> GridShape {
        GridShape::new(4, 4, 4, 1).unwrap()
    }

    fn ones(oc: usize, ic: usize, kv: usize) -> WeightTensor {
        WeightTensor::new(oc, ic, kv, vec![1.0; oc * ic * kv]).unwrap()
    }

    const PATHS: [ComputePath; 2] = [ComputePath::Reference, ComputePath::Optimized];

    #[test]
    fn weight_layout_index() {
        let w = WeightTensor::from_fn(2, 3, 8, |oc, k, ic| (oc * 100 + k * 10 + ic) as f32).unwrap();
        assert_eq!(w.index(1, 7, 2), 8 * 3 + 7 * 3 + 2);
        assert_eq!(w.get(1, 7, 2), 172.0);
        assert_eq!(w.out_channel_slice(1)[0], 100.0);
        assert!(WeightTensor::new(1, 1, 27, vec![0.0; 26]).is_err());
    }

    #[test]
    fn identity_kernel_copies_features() {
        let t = tensor(g4(), &[(0, 0, 0), (1, 2, 3), (3, 3, 3)], (0..6).map(|v| v as f32 - 2.5).collect(), 2);
        let w = WeightTensor::from_fn(2, 2, 1, |oc, _, ic| (oc == ic) as u8 as f32).unwrap();
        for path in PATHS {
            let out = submanifold(&t, 1, &w, &ExecOptions { path, ..Default::default() }).unwrap();
            assert_eq!(out, t);
        }
    }

    #[test]
    fn two_point_submanifold_sums() {
        let t = tensor(g4(), &[(1, 1, 1), (2, 1, 1)], vec![1.0, 1.0], 1);
        for path in PATHS {
            let out = submanifold(&t, 3, &ones(1, 1, 27), &ExecOptions { path, ..Default::default() }).unwrap();
            assert_eq!(out.features(), &[2.0, 2.0]);
        }
    }

    #[test]
    fn empty_inputs() {
        let t = SparseTensor::empty(g4(), 1);
        let out = submanifold(&t, 3, &ones(2, 1, 27), &ExecOptions::default()).unwrap();
        assert!(out.is_empty());
        assert_eq!(out.channels(), 2);
        let s = StrideSpec::new(2).unwrap();
        let out = downsample(&t, s, &ones(2, 1, 8), &ExecOptions::default()).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn downsample_three_point_sums() {
        let t = tensor(g4(), &[(0, 0, 0), (1, 1, 1), (2, 0, 0)], vec![1.0; 3], 1);
        let s = StrideSpec::new(2).unwrap();
        for path in PATHS {
            let out = downsample(&t, s, &ones(1, 1, 8), &ExecOptions { path, ..Default::default() }).unwrap();
            assert_eq!(out.features(), &[2.0, 1.0]);
            assert_eq!(out.shape(), GridShape::new(2, 2, 2, 1).unwrap());
        }
        let zero = WeightTensor::new(1, 1, 8, vec![0.0; 8]).unwrap();
        let out = downsample(&t, s, &zero, &ExecOptions::default()).unwrap();
        assert!(out.features().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn downsample_single_point_picks_its_offset() {
        let t = tensor(g4(), &[(1, 0, 1)], vec![2.0, -1.0], 2);
        let s = StrideSpec::new(2).unwrap();
        let w = WeightTensor::from_fn(1, 2, 8, |_, k, ic| (k * 2 + ic) as f32).unwrap();
        let out = downsample(&t, s, &w, &ExecOptions::default()).unwrap();
        // koff = 1*4 + 0*2 + 1 = 5
        assert_eq!(out.features(), &[2.0 * 10.0 - 11.0]);
    }

    #[test]
    fn inverse_broadcasts_parent_features() {
        let fine = tensor(g4(), &[(0, 0, 0), (1, 1, 1), (2, 0, 0)], vec![0.0; 3], 1);
        let coarse = tensor(
            GridShape::new(2, 2, 2, 1).unwrap(),
            &[(0, 0, 0), (1, 0, 0)],
            vec![5.0, 7.0],
            1,
        );
        let s = StrideSpec::new(2).unwrap();
        for path in PATHS {
            let out = upsample(&coarse, fine.sites(), s, &ones(1, 1, 8), &ExecOptions { path, ..Default::default() }).unwrap();
            assert_eq!(out.features(), &[5.0, 5.0, 7.0]);
            assert_eq!(out.sites(), fine.sites());
        }
    }

    #[test]
    fn inverse_identity_stride_one() {
        let t = tensor(g4(), &[(0, 1, 0), (3, 2, 1)], vec![1.5, -2.0], 1);
        let s = StrideSpec::new(1).unwrap();
        let out = upsample(&t, t.sites(), s, &ones(1, 1, 1), &ExecOptions::default()).unwrap();
        assert_eq!(out, t);
    }

    #[test]
    fn shape_checks() {
        let t = tensor(g4(), &[(0, 0, 0)], vec![1.0], 1);
        let lct = LocationTable::build(t.sites(), &LctConfig::default()).unwrap();
        let oft = build_subm_oft(t.sites(), &lct, 3).unwrap();
        assert!(matches!(
            subm_conv(&t, &oft, &ones(1, 2, 27), ComputePath::Reference),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(matches!(
            subm_conv(&t, &oft, &ones(1, 1, 1), ComputePath::Reference),
            Err(Error::ShapeMismatch(_))
        ));
        let bogus = OffsetTable::from_entries(1, 1, vec![5]).unwrap();
        assert!(subm_conv(&t, &bogus, &ones(1, 1, 1), ComputePath::Optimized).is_err());
    }

    #[test]
    fn pipeline_behaviour() {
        let t = tensor(g4(), &[(0, 0, 0), (1, 1, 1), (2, 0, 0), (3, 3, 2)], vec![1.0, 2.0, 3.0, 4.0], 1);
        let s = StrideSpec::new(2).unwrap();
        let opts = ExecOptions::default();

        assert_eq!(run_pipeline(&[], &t, &opts).unwrap(), t);

        let layers = [
            ConvLayerSpec::new(LayerMode::Downsample { stride: s }, ones(3, 1, 8)).unwrap(),
            ConvLayerSpec::new(LayerMode::Inverse { stride: s }, ones(1, 3, 8)).unwrap(),
        ];
        let out = run_pipeline(&layers, &t, &opts).unwrap();
        assert_eq!(out.sites(), t.sites());

        let subm = ConvLayerSpec::new(LayerMode::Submanifold { kernel: 3 }, ones(2, 1, 27)).unwrap();
        assert_eq!(
            run_pipeline(std::slice::from_ref(&subm), &t, &opts).unwrap(),
            submanifold(&t, 3, subm.weights(), &opts).unwrap()
        );

        let bad = [subm.clone(), subm];
        assert!(matches!(
            run_pipeline(&bad, &t, &opts),
            Err(Error::ChannelMismatch { layer: 1, expected: 1, found: 2 })
        ));

        let unmatched = [ConvLayerSpec::new(LayerMode::Inverse { stride: s }, ones(1, 1, 8)).unwrap()];
        assert!(matches!(
            run_pipeline(&unmatched, &t, &opts),
            Err(Error::UnmatchedInverse { layer: 0 })
        ));

        assert!(ConvLayerSpec::new(LayerMode::Submanifold { kernel: 2 }, ones(1, 1, 8)).is_err());
        assert!(ConvLayerSpec::new(LayerMode::Downsample { stride: s }, ones(1, 1, 27)).is_err());
    }
}
