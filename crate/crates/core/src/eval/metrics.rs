use super::EvalError;
use crate::anno::{BBox, Keypoint};

/// Normalized mean error: mean over labeled ground-truth keypoints of the
/// Euclidean error divided by `norm`.
///
/// Face benchmarks normalize by the inter-ocular distance
/// ([`inter_ocular`]); hand benchmarks by the square root of the hand-box
/// area ([`hand_norm`]). Returns `Ok(None)` when no keypoint is labeled.
pub fn nme(gt: &[Keypoint], dt: &[Keypoint], norm: f64) -> Result<Option<f64>, EvalError> {
    if gt.len() != dt.len() {
        return Err(EvalError::BadConfig(format!(
            "nme: slice lengths differ ({} vs {})",
            gt.len(),
            dt.len()
        )));
    }
    if !(norm > 0.0) {
        return Err(EvalError::BadConfig(format!("nme: norm must be positive, got {norm}")));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (g, d) in gt.iter().zip(dt) {
        if g.is_labeled() {
            sum += g.dist(d) / norm;
            n += 1;
        }
    }
    Ok(if n == 0 { None } else { Some(sum / n as f64) })
}

/// End-point error: plain mean Euclidean distance over labeled ground-truth
/// keypoints, in pixels. `None` when nothing is labeled.
pub fn epe(gt: &[Keypoint], dt: &[Keypoint]) -> Result<Option<f64>, EvalError> {
    if gt.len() != dt.len() {
        return Err(EvalError::BadConfig(format!(
            "epe: slice lengths differ ({} vs {})",
            gt.len(),
            dt.len()
        )));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (g, d) in gt.iter().zip(dt) {
        if g.is_labeled() {
            sum += g.dist(d);
            n += 1;
        }
    }
    Ok(if n == 0 { None } else { Some(sum / n as f64) })
}

/// Outer eye-corner indices within the 68-landmark face slice.
const RIGHT_EYE_OUTER: usize = 36;
const LEFT_EYE_OUTER: usize = 45;

/// Inter-ocular distance of a 68-landmark face slice: the distance between
/// the two outer eye corners. `None` unless both corners are labeled.
pub fn inter_ocular(face: &[Keypoint]) -> Option<f64> {
    if face.len() != 68 {
        return None;
    }
    let a = face[RIGHT_EYE_OUTER];
    let b = face[LEFT_EYE_OUTER];
    if a.is_labeled() && b.is_labeled() {
        Some(a.dist(&b))
    } else {
        None
    }
}

/// Hand NME normalization: √(w·h) of the hand box. `None` for invalid or
/// degenerate boxes.
pub fn hand_norm(hand_box: &BBox) -> Option<f64> {
    if hand_box.valid && hand_box.area() > 0.0 {
        Some(hand_box.area().sqrt())
    } else {
        None
    }
}
