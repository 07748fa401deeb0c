//! Annotation engine for posed multi-view scenes backed by density fields.

// validation uses `!(x > 0.0)` so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod field;
pub mod export;
pub mod geometry;
pub mod labeling;
pub mod mesh;
pub mod metrics;
pub mod raster;
pub mod scene;
