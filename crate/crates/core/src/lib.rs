//! Sparse 3D convolution for voxelized point clouds.
//!
//! The pipeline for every operator is the same three steps:
//!
//! 1. build a [`LocationTable`] mapping voxel coordinates to tensor rows,
//! 2. derive a rule table ([`OffsetTable`], [`DownsampleMap`] or [`InverseMap`]),
//! 3. gather inputs through the rules, multiply by weights and scatter into
//!    the output rows.
//!
//! Submanifold convolution keeps the input sites, strided convolution
//! (kernel = stride) maps onto the coarse grid, and inverse convolution maps
//! coarse features back onto a previously seen fine site set. [`oracle`]
//! checks all three against dense brute-force references.

pub mod bench;
pub mod coord;
pub mod engine;
pub mod error;
pub mod format;
pub mod oracle;
pub mod rules;
pub mod tensor;

pub use coord::{
    cell_map, delinearize, linearize, CellMapping, LctBackend, LctConfig, LocationTable,
    StrideSpec,
};
pub use engine::{
    inverse_conv, run_pipeline, sparse_conv, subm_conv, ComputePath, ConvLayerSpec, ExecOptions,
    LayerMode, WeightTensor,
};
pub use error::{Error, Result};
pub use rules::{
    build_downsample_oft, build_inverse_map, build_subm_oft, count_unique_outputs, CellPair,
    DownsampleMap, InverseMap, OffsetTable, UniqueCounterState,
};
pub use tensor::{
    DenseGrid, GridShape, IndexSet, Point, Reducer, SparseTensor, VoxelCoord, VoxelIndices,
    Voxelizer,
};

/// Runs `f` on a dedicated pool of `workers` threads; `0` uses the default
/// (one per core).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::ThreadPool(e.to_string()))?;
    Ok(pool.install(f))
}
