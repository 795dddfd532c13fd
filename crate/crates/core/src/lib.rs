//! Tile-based surface defect detection.
//!
//! The pipeline turns a small set of annotated grayscale images into a large,
//! balanced set of labelled tiles, trains a binary tile classifier on it, and
//! runs that classifier over a grid on new images to flag defective regions.
//!
//! Stages, in order:
//!
//! 1. [`synth`] renders deterministic stand-in datasets with exact defect boxes.
//! 2. [`preprocess`] crops the background with Canny edges, remaps annotations
//!    and cuts each image into an `m x n` grid of labelled tiles.
//! 3. [`enhance`] rebalances the classes by even-odd resampling with dihedral
//!    augmentation, then splits train/validation/test.
//! 4. [`model`] builds and trains the classifier (backbone, global average
//!    pooling, dropout, sigmoid unit) with binary cross-entropy.
//! 5. [`metrics`] scores tile predictions; [`detect`] runs the sliding window
//!    over whole images and draws pseudo bounding boxes.
//!
//! [`pipeline`] wires the stages together behind the `tiledefect` binary.

pub mod data;
pub mod detect;
pub mod enhance;
pub mod error;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod preprocess;
pub mod synth;

pub use data::{AnnotatedImage, DatasetManifest, DefectBox, GridSpec, Rect, TileEntry, TileRecord};
pub use error::{Error, Result};
