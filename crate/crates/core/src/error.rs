use thiserror::Error;

use crate::tensor::VoxelCoord;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid shape: {0}")]
    InvalidShape(String),

    #[error("rows {row_a} and {row_b} share the same voxel coordinate")]
    DuplicateCoordinate { row_a: usize, row_b: usize },

    /// A tensor row (or input point, for voxelization) lies outside the grid.
    #[error("row {row} lies outside the grid")]
    OutOfBounds { row: usize },

    #[error("coordinate {coord} lies outside the grid")]
    CoordOutOfBounds { coord: VoxelCoord },

    #[error("linear index {index} outside [0, {volume})")]
    IndexOutOfBounds { index: usize, volume: usize },

    #[error("{what}: expected length {expected}, found {found}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("submanifold kernel size must be odd, got {0}")]
    EvenKernel(usize),

    #[error("kernel size must be at least 1")]
    ZeroKernel,

    #[error("stride must be at least 1")]
    ZeroStride,

    #[error("voxel size must be a positive finite number, got {0}")]
    InvalidVoxelSize(f64),

    #[error("fine row {row} has no parent cell in the coarse index set")]
    MissingParent { row: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("channel mismatch at layer {layer}: weights expect {expected} input channels, tensor has {found}")]
    ChannelMismatch {
        layer: usize,
        expected: usize,
        found: usize,
    },

    #[error("layer {layer}: inverse layer has no preceding downsample to pair with")]
    UnmatchedInverse { layer: usize },

    #[error("bad magic bytes, not a sparse tensor file")]
    BadMagic,

    #[error("unsupported file version {0}")]
    VersionUnsupported(u32),

    #[error("file truncated: need {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("thread pool: {0}")]
    ThreadPool(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
