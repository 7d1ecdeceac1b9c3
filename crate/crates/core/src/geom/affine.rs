//! Image-to-crop coordinate transforms.
//!
//! A crop is described by a similarity transform (translation plus one
//! uniform scale, no rotation): enough to cut an axis-aligned window out of
//! an image and resize it, while staying exactly invertible for mapping
//! predictions back.

use crate::anno::BBox;

use super::GeomError;

/// Maps image coordinates into a `out_w` x `out_h` crop and back.
///
/// `to_crop` computes `(p - origin) * scale`; `to_image` inverts it. Both
/// directions are plain arithmetic, so round trips are exact up to floating
/// point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropTransform {
    /// Image-frame position of the crop's top-left corner.
    pub origin: (f64, f64),
    /// Crop pixels per image pixel, identical along both axes.
    pub scale: f64,
    pub out_w: usize,
    pub out_h: usize,
}

impl CropTransform {
    pub fn to_crop(&self, x: f64, y: f64) -> (f64, f64) {
        ((x - self.origin.0) * self.scale, (y - self.origin.1) * self.scale)
    }

    pub fn to_image(&self, x: f64, y: f64) -> (f64, f64) {
        (x / self.scale + self.origin.0, y / self.scale + self.origin.1)
    }

    pub fn to_crop_box(&self, b: &BBox) -> BBox {
        let (x, y) = self.to_crop(b.x, b.y);
        BBox { x, y, w: b.w * self.scale, h: b.h * self.scale, valid: b.valid }
    }

    pub fn to_image_box(&self, b: &BBox) -> BBox {
        let (x, y) = self.to_image(b.x, b.y);
        BBox { x, y, w: b.w / self.scale, h: b.h / self.scale, valid: b.valid }
    }
}

/// Build the transform that frames `person_box` in an `out_w` x `out_h` crop.
///
/// The box is first expanded symmetrically along one axis to match the output
/// aspect ratio (its center stays put), then scaled uniformly so the expanded
/// box covers the crop edge to edge. Callers wanting margin around the person
/// should pad the box before calling this.
pub fn crop_and_resize_person(
    person_box: &BBox,
    out_h: usize,
    out_w: usize,
) -> Result<CropTransform, GeomError> {
    if out_h == 0 || out_w == 0 {
        return Err(GeomError::BadShape(format!("crop size {out_w}x{out_h}")));
    }
    if !(person_box.w > 0.0) || !(person_box.h > 0.0) {
        return Err(GeomError::BadBox(format!(
            "cannot crop a box of size {}x{}",
            person_box.w, person_box.h
        )));
    }
    let aspect = out_w as f64 / out_h as f64;
    let (mut w, mut h) = (person_box.w, person_box.h);
    if w / h > aspect {
        h = w / aspect;
    } else {
        w = h * aspect;
    }
    let cx = person_box.x + person_box.w / 2.0;
    let cy = person_box.y + person_box.h / 2.0;
    Ok(CropTransform {
        origin: (cx - w / 2.0, cy - h / 2.0),
        scale: out_w as f64 / w,
        out_w,
        out_h,
    })
}
