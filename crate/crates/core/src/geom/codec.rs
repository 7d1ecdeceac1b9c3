//! Gaussian keypoint heatmap encoding and sub-pixel decoding.

use crate::anno::Keypoint;

use super::heatmap::Heatmap;
use super::GeomError;

/// Standard deviation, in grid cells, of the rendered Gaussian peaks.
pub const DEFAULT_SIGMA: f64 = 3.0;

/// Rendered target heatmaps plus a per-channel flag saying whether a peak was
/// actually drawn (false for unlabeled keypoints and keypoints outside the
/// grid). Channels without a peak are all zero.
#[derive(Debug, Clone)]
pub struct EncodedHeatmap {
    pub heatmap: Heatmap,
    pub rendered: Vec<bool>,
}

/// A decoded peak in the frame the heatmap covers (grid coordinates scaled by
/// the heatmap's stride).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodedKeypoint {
    pub x: f64,
    pub y: f64,
    pub confidence: f32,
}

/// Render one Gaussian channel per keypoint onto a `height` x `width` grid.
///
/// Keypoint coordinates are divided by `stride` to land on the grid, where
/// channel `i` gets `exp(-((x - kx)^2 + (y - ky)^2) / (2 sigma^2))` evaluated
/// at every cell — amplitude exactly 1 at the (generally sub-pixel) true
/// location. A keypoint whose grid position falls outside `[0, width) x
/// [0, height)`, or whose visibility is 0, leaves its channel zero.
pub fn encode_heatmap(
    keypoints: &[Keypoint],
    height: usize,
    width: usize,
    stride: f64,
    sigma: f64,
) -> Result<EncodedHeatmap, GeomError> {
    if height == 0 || width == 0 {
        return Err(GeomError::BadShape(format!("empty grid {height}x{width}")));
    }
    if !(stride > 0.0) || !(sigma > 0.0) {
        return Err(GeomError::BadShape(format!("stride {stride} and sigma {sigma} must be positive")));
    }
    let mut heatmap = Heatmap::zeros(keypoints.len(), height, width, stride);
    let mut rendered = vec![false; keypoints.len()];
    let inv = 1.0 / (2.0 * sigma * sigma);
    for (c, kp) in keypoints.iter().enumerate() {
        if !kp.is_labeled() {
            continue;
        }
        let gx = kp.x / stride;
        let gy = kp.y / stride;
        if gx < 0.0 || gy < 0.0 || gx >= width as f64 || gy >= height as f64 {
            continue;
        }
        rendered[c] = true;
        let plane = heatmap.channel_mut(c);
        for row in 0..height {
            let dy = row as f64 - gy;
            for col in 0..width {
                let dx = col as f64 - gx;
                plane[row * width + col] = (-(dx * dx + dy * dy) * inv).exp() as f32;
            }
        }
    }
    Ok(EncodedHeatmap { heatmap, rendered })
}

/// Recover one location per channel: argmax plus a quarter-cell shift toward
/// the larger of the two neighbors along each axis, scaled back by stride.
///
/// Ties at the maximum resolve to the lowest row, then the lowest column
/// (strictly-greater scan in row-major order). The shift is skipped along an
/// axis when the argmax sits on that border. Confidence is the peak value.
pub fn decode_heatmap(heatmap: &Heatmap) -> Vec<DecodedKeypoint> {
    let (height, width) = heatmap.shape();
    let stride = heatmap.stride();
    (0..heatmap.channels())
        .map(|c| {
            let (gx, gy, confidence) = decode_channel(heatmap.channel(c), height, width);
            DecodedKeypoint { x: gx * stride, y: gy * stride, confidence }
        })
        .collect()
}

/// Argmax plus quarter-shift on a single plane, in grid coordinates.
pub(super) fn decode_channel(plane: &[f32], height: usize, width: usize) -> (f64, f64, f32) {
    let mut best = 0usize;
    for (i, &v) in plane.iter().enumerate() {
        if v > plane[best] {
            best = i;
        }
    }
    let row = best / width;
    let col = best % width;
    let mut x = col as f64;
    let mut y = row as f64;
    if col > 0 && col + 1 < width {
        let left = plane[row * width + col - 1];
        let right = plane[row * width + col + 1];
        if right > left {
            x += 0.25;
        } else if left > right {
            x -= 0.25;
        }
    }
    if row > 0 && row + 1 < height {
        let up = plane[(row - 1) * width + col];
        let down = plane[(row + 1) * width + col];
        if down > up {
            y += 0.25;
        } else if up > down {
            y -= 0.25;
        }
    }
    (x, y, plane[best])
}
