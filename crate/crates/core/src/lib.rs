//! Core algorithms for fingerprint singular-point detection.
//!
//! The detection pipeline has two stages:
//!
//! 1. **Segmentation** – [`model::SinNet`], a shared inception encoder feeding two
//!    symmetric decoders, predicts one probability map for core regions and one
//!    for delta regions.
//! 2. **Localization** – [`blob::detect_points`] thresholds each map, labels
//!    connected components, keeps blobs inside the area window and reports
//!    their centroids.
//!
//! Supporting modules provide the tensor engine with reverse-mode gradients
//! ([`tensor`], [`ops`], [`autograd`], [`optim`]), ground-truth rasterization
//! ([`label`]), detection scoring ([`score`]) and a synthetic ridge-pattern
//! generator ([`synth`]).
//!
//! Coordinates follow image indexing everywhere: `x` is the column, `y` is the
//! row, and the origin is the top-left pixel.

pub mod autograd;
pub mod blob;
pub mod error;
pub mod fsutil;
pub mod image;
pub mod label;
pub mod model;
pub mod ops;
pub mod optim;
pub mod score;
pub mod synth;
pub mod tensor;

pub use blob::{Blob, BlobParams, Connectivity};
pub use error::{Error, Result};
pub use image::{GrayImage, Mask};
pub use label::{LabelMaskPair, PointType, SingularPoint};
pub use model::{PadRecord, SinNet, TrainConfig, TrainLog};
pub use optim::Sgd;
pub use score::{MatchResult, ScoreReport};
pub use tensor::{Scalar, Shape, Tensor};
