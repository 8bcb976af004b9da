use std::path::PathBuf;

use crate::tensor::Shape;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {dim} is {actual}, expected {expected}")]
    DimMismatch {
        op: &'static str,
        dim: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("shape mismatch in {op}: {lhs} vs {rhs}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Shape,
        rhs: Shape,
    },

    #[error("data length {len} does not match shape {shape} ({expected} elements)")]
    DataLength {
        shape: Shape,
        len: usize,
        expected: usize,
    },

    #[error("{op} requires even height and width, got {shape}")]
    OddSpatial { op: &'static str, shape: Shape },

    #[error("image of {height}x{width} must have height and width divisible by 16; pad it first with `pad_image`")]
    NotPadded { height: usize, width: usize },

    #[error("backward requires a scalar loss, got shape {0}")]
    NonScalarLoss(Shape),

    #[error("binary target expected, found value {0}")]
    NonBinaryTarget(f64),

    #[error("dropout rate must lie in [0, 1), got {0}")]
    DropoutRate(f64),

    #[error("filter count {filters} is not divisible by 4")]
    FilterCount { filters: usize },

    #[error("width divisor {divisor} leaves filter count {base}/{divisor} not divisible by 4")]
    WidthDivisor { divisor: usize, base: usize },

    #[error("pad record {record_height}x{record_width} exceeds map {height}x{width}")]
    CropTooLarge {
        record_height: usize,
        record_width: usize,
        height: usize,
        width: usize,
    },

    #[error("point ({x}, {y}) lies outside the {width}x{height} image")]
    PointOutOfBounds {
        x: i32,
        y: i32,
        width: usize,
        height: usize,
    },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("dataset sample {index}: {reason}")]
    BadSample { index: usize, reason: String },

    #[error("no per-image results to aggregate")]
    NoResults,

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
