//! Pure algorithms behind the POBF data engine.
//!
//! Everything here is `no_std` with `alloc`: box geometry and raster masks,
//! the three teacher scores with their normalization and weighted
//! combination, per-sample candidate selection and the baseline filters,
//! the caption-replacement stream used when mixing datasets, and the
//! top-1 grounding metric. File formats, image codecs and backend
//! transport live in the `pobf` crate.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod baseline;
pub mod geometry;
pub mod image;
pub mod metric;
pub mod mix;
pub mod score;
pub mod seed;
pub mod stats;

pub use geometry::{iou, outside_mask, BBox, BoxError, Corners, ImageSize, NormBox, RasterMask};
pub use image::RgbImage;
pub use score::{combine, normalize_scores, select_best, FilterWeights, ScoreRecord, Selection};
