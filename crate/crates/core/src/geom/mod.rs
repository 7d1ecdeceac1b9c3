//! Geometry kernels: Gaussian heatmap codec, corner-point box codec,
//! RoIAlign and the person-crop transform.
//!
//! Conventions used throughout:
//!
//! - Grids are `(height, width)` ordered and channel-major in memory.
//! - A heatmap cell `(row, col)` represents the input-crop point
//!   `(col · stride, row · stride)`: integer grid coordinates, scaled.
//! - RoIAlign treats a pixel as a unit square whose sample sits at its
//!   center, `(col + 0.5, row + 0.5)` in continuous coordinates; samples
//!   beyond the border clamp to the border pixel.

mod affine;
mod boxes;
mod codec;
mod heatmap;
mod roi;

pub use affine::{crop_and_resize_person, CropTransform};
pub use boxes::{box_corner_points, decode_boxes, BoxChannelMap, CornerChannels, DecodedBox};
pub use codec::{decode_heatmap, encode_heatmap, DecodedKeypoint, EncodedHeatmap, DEFAULT_SIGMA};
pub use heatmap::Heatmap;
pub use roi::{bilinear_sample, roi_align};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeomError {
    #[error("invalid box: {0}")]
    BadBox(String),

    #[error("invalid shape: {0}")]
    BadShape(String),

    #[error("heatmap blob: {0}")]
    Blob(String),
}

/// The fixed stage geometry of the two-stage pipeline.
///
/// All entries are `(height, width)`. The input crop is downsampled twice
/// (F1 at 1/2, F2 at 1/4); the body head emits at F2 resolution with a fixed
/// stride of 4; the face/hand heads consume RoI-aligned patches of both
/// feature maps and emit at 64×64 over their box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageShapes {
    pub input: (usize, usize),
    pub f1: (usize, usize),
    pub f2: (usize, usize),
    pub head_input_f1: (usize, usize),
    pub head_input_f2: (usize, usize),
    pub head_output: (usize, usize),
    pub body_output: (usize, usize),
}

impl StageShapes {
    pub const fn standard() -> StageShapes {
        StageShapes {
            input: (384, 288),
            f1: (192, 144),
            f2: (96, 72),
            head_input_f1: (64, 64),
            head_input_f2: (32, 32),
            head_output: (64, 64),
            body_output: (96, 72),
        }
    }

    /// Stride of F1 relative to the input crop.
    pub fn f1_stride(&self) -> f64 {
        self.input.0 as f64 / self.f1.0 as f64
    }

    /// Stride of F2 relative to the input crop.
    pub fn f2_stride(&self) -> f64 {
        self.input.0 as f64 / self.f2.0 as f64
    }

    /// Stride of the body output relative to the input crop.
    pub fn body_stride(&self) -> f64 {
        self.input.0 as f64 / self.body_output.0 as f64
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        let ok = self.f1.0 * 2 == self.input.0
            && self.f1.1 * 2 == self.input.1
            && self.f2.0 * 4 == self.input.0
            && self.f2.1 * 4 == self.input.1;
        if !ok {
            return Err(GeomError::BadShape(format!(
                "feature maps must be the input at 1/2 and 1/4: input {:?}, f1 {:?}, f2 {:?}",
                self.input, self.f1, self.f2
            )));
        }
        if self.body_output.0 * self.input.1 != self.body_output.1 * self.input.0 {
            return Err(GeomError::BadShape(format!(
                "body output {:?} must preserve the input aspect ratio {:?}",
                self.body_output, self.input
            )));
        }
        Ok(())
    }
}

impl Default for StageShapes {
    fn default() -> StageShapes {
        StageShapes::standard()
    }
}
