//! Region-of-interest pooling over feature grids.
//!
//! Continuous coordinates put the center of pixel `(row, col)` at
//! `(col + 0.5, row + 0.5)`; everything here follows that convention, which
//! is what makes the identity case exact (see the tests).

use crate::anno::BBox;

use super::heatmap::Heatmap;
use super::GeomError;

/// Bilinear lookup on one plane at a continuous point.
///
/// Samples outside the grid replicate the border: the lookup position is
/// clamped to the square spanned by the outermost pixel centers before
/// interpolating. `plane` must hold `height * width` row-major values.
pub fn bilinear_sample(plane: &[f32], height: usize, width: usize, x: f64, y: f64) -> f32 {
    debug_assert_eq!(plane.len(), height * width);
    let u = (x - 0.5).clamp(0.0, (width - 1) as f64);
    let v = (y - 0.5).clamp(0.0, (height - 1) as f64);
    let c0 = u.floor() as usize;
    let r0 = v.floor() as usize;
    let c1 = (c0 + 1).min(width - 1);
    let r1 = (r0 + 1).min(height - 1);
    let fu = u - c0 as f64;
    let fv = v - r0 as f64;
    let at = |r: usize, c: usize| f64::from(plane[r * width + c]);
    let top = at(r0, c0) * (1.0 - fu) + at(r0, c1) * fu;
    let bottom = at(r1, c0) * (1.0 - fu) + at(r1, c1) * fu;
    (top * (1.0 - fv) + bottom * fv) as f32
}

/// Pool `bbox` from `feat` into an `out_h` x `out_w` patch.
///
/// The box is given in the frame the feature map covers and is divided by the
/// map's stride first. Each output bin takes the mean of
/// `samples_per_bin` x `samples_per_bin` bilinear lookups placed on a regular
/// lattice inside the bin (sample `s` of `n` sits at fraction `(s + 0.5) / n`
/// across the bin). The result keeps the channel count and carries stride 1,
/// since its cells no longer map uniformly onto the input frame.
pub fn roi_align(
    feat: &Heatmap,
    bbox: &BBox,
    out_h: usize,
    out_w: usize,
    samples_per_bin: usize,
) -> Result<Heatmap, GeomError> {
    if out_h == 0 || out_w == 0 || samples_per_bin == 0 {
        return Err(GeomError::BadShape(format!(
            "output {out_h}x{out_w} with {samples_per_bin} samples per bin"
        )));
    }
    if !(bbox.w > 0.0) || !(bbox.h > 0.0) {
        return Err(GeomError::BadBox(format!("cannot pool a box of size {}x{}", bbox.w, bbox.h)));
    }
    let s = feat.stride();
    let (x0, y0, bw, bh) = (bbox.x / s, bbox.y / s, bbox.w / s, bbox.h / s);
    let (height, width) = feat.shape();
    let bin_w = bw / out_w as f64;
    let bin_h = bh / out_h as f64;
    let n = samples_per_bin;
    let norm = 1.0 / (n * n) as f64;
    let mut out = Heatmap::zeros(feat.channels(), out_h, out_w, 1.0);
    for c in 0..feat.channels() {
        let plane = feat.channel(c);
        let dst = out.channel_mut(c);
        for i in 0..out_h {
            for j in 0..out_w {
                let mut acc = 0.0f64;
                for si in 0..n {
                    let y = y0 + (i as f64 + (si as f64 + 0.5) / n as f64) * bin_h;
                    for sj in 0..n {
                        let x = x0 + (j as f64 + (sj as f64 + 0.5) / n as f64) * bin_w;
                        acc += f64::from(bilinear_sample(plane, height, width, x, y));
                    }
                }
                dst[i * out_w + j] = (acc * norm) as f32;
            }
        }
    }
    Ok(out)
}
