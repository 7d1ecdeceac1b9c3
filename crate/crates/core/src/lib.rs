//! Tooling for whole-body human pose data: 133-keypoint annotations covering
//! body, feet, face and hands, together with the non-learned machinery around
//! a two-stage ("zoom in") estimation pipeline.
//!
//! The crate is organized by concern:
//!
//! - [`anno`] — annotation model and the COCO-style JSON interchange format;
//! - [`geom`] — heatmap codec, corner-point box codec, RoIAlign and the crop
//!   transforms used by the pipeline;
//! - [`pipeline`] — stage orchestration around a pluggable predictor;
//! - [`eval`] — OKS/mAP evaluation, NME/EPE, box-detection metrics and sigma
//!   derivation from multi-annotator data;
//! - [`diagnose`] — keypoint-level error taxonomy and correction analysis;
//! - [`stats`] — dataset statistics (counts, scale histograms, blurriness,
//!   gesture clustering);
//! - [`synth`] — deterministic synthetic datasets for self-tests and demos.
//!
//! All coordinates are continuous (sub-pixel) in pixel units, x to the right
//! and y downwards, with the origin at the top-left corner of the image.

pub mod anno;
pub mod diagnose;
pub mod eval;
pub mod geom;
pub mod pipeline;
pub mod stats;
pub mod synth;

pub use anno::{BBox, Dataset, Keypoint, KeypointSet, Part, PersonInstance, Visibility};
