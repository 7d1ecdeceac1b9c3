//! Annotation model for whole-body pose data.
//!
//! An instance carries 133 keypoints in a fixed layout (see [`Part`]) plus
//! four boxes: the person box and the face / left-hand / right-hand boxes.
//! Part boxes are defined as the minimal bounding rectangle of that part's
//! keypoints and carry a validity flag; keypoints of an invalid part are
//! masked (`v = 0`). Feet have no box of their own and are gated by a plain
//! `foot_valid` flag.
//!
//! [`io::parse_dataset`] and [`io::write_dataset`] implement the JSON
//! interchange format (COCO-style with extension keys); see the `io` module
//! docs for the exact key set and the normalization applied on load.

mod io;
mod layout;
mod types;

pub use io::{parse_dataset, write_dataset, write_dataset_as, FootForm};
pub use layout::{Part, BODY_KEYPOINT_NAMES, NUM_KEYPOINTS};
pub use types::{
    minimal_rect, BBox, BoxKind, Dataset, ImageInfo, Keypoint, KeypointSet, PersonInstance,
    Visibility,
};

use thiserror::Error;

/// Errors produced while parsing, validating or writing annotation data.
#[derive(Debug, Error)]
pub enum AnnoError {
    /// The input was not syntactically valid JSON.
    #[error("JSON parse error at byte {offset} (line {line}, column {column}): {msg}")]
    Parse {
        offset: usize,
        line: usize,
        column: usize,
        msg: String,
    },

    /// The JSON was well-formed but an annotation violated the schema
    /// (wrong array length, out-of-range visibility flag, ...).
    #[error("annotation {id}: {msg}")]
    Schema { id: u64, msg: String },

    /// An annotation references an image id with no `images` entry.
    #[error("annotation {annotation_id}: image_id {image_id} has no images entry")]
    UnknownImage { annotation_id: u64, image_id: u64 },

    /// A structural invariant failed while writing (negative box extent,
    /// non-positive ground-truth area, validity inconsistency, ...).
    #[error("annotation {id}: invalid instance: {msg}")]
    Invalid { id: u64, msg: String },
}
