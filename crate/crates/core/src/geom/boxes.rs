//! Corner-point box codec.
//!
//! Part boxes ride along with keypoints in the body-stage output: each box
//! contributes five extra channels carrying Gaussian peaks at its four
//! corners and its center. Encoding is therefore just [`box_corner_points`]
//! feeding the ordinary keypoint encoder; [`decode_boxes`] reverses it by
//! peak-finding each channel and averaging the corner coordinates.

use crate::anno::{BBox, BoxKind, Keypoint, Visibility};

use super::codec::decode_channel;
use super::heatmap::Heatmap;
use super::GeomError;

/// Channel indices for one box: four corners plus the center.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CornerChannels {
    pub top_left: usize,
    pub top_right: usize,
    pub bottom_left: usize,
    pub bottom_right: usize,
    pub center: usize,
}

impl CornerChannels {
    /// Five consecutive channels beginning at `base`.
    pub fn starting_at(base: usize) -> CornerChannels {
        CornerChannels {
            top_left: base,
            top_right: base + 1,
            bottom_left: base + 2,
            bottom_right: base + 3,
            center: base + 4,
        }
    }

    fn max_index(&self) -> usize {
        self.top_left
            .max(self.top_right)
            .max(self.bottom_left)
            .max(self.bottom_right)
            .max(self.center)
    }
}

/// Where each part box lives inside a multi-channel map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoxChannelMap {
    pub face: CornerChannels,
    pub left_hand: CornerChannels,
    pub right_hand: CornerChannels,
}

impl BoxChannelMap {
    /// The standard body-stage layout: channels 0-16 carry body keypoints,
    /// 17-22 foot keypoints, then face 23-27, left hand 28-32 and right hand
    /// 33-37 — 38 channels in all.
    pub fn standard() -> BoxChannelMap {
        BoxChannelMap {
            face: CornerChannels::starting_at(23),
            left_hand: CornerChannels::starting_at(28),
            right_hand: CornerChannels::starting_at(33),
        }
    }

    pub fn channels(&self, kind: BoxKind) -> CornerChannels {
        match kind {
            BoxKind::Face => self.face,
            BoxKind::LeftHand => self.left_hand,
            BoxKind::RightHand => self.right_hand,
        }
    }

    /// Smallest channel count a heatmap must have to hold every box.
    pub fn required_channels(&self) -> usize {
        1 + self
            .face
            .max_index()
            .max(self.left_hand.max_index())
            .max(self.right_hand.max_index())
    }
}

/// A box recovered from corner channels, with the center-peak confidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodedBox {
    pub bbox: BBox,
    pub confidence: f32,
}

/// The five encoding targets for a box, in [`CornerChannels`] field order:
/// top-left, top-right, bottom-left, bottom-right, center. All are marked
/// visible so they can be handed straight to the keypoint encoder.
pub fn box_corner_points(b: &BBox) -> [Keypoint; 5] {
    let pt = |x: f64, y: f64| Keypoint { x, y, v: Visibility::Visible };
    [
        pt(b.x, b.y),
        pt(b.x + b.w, b.y),
        pt(b.x, b.y + b.h),
        pt(b.x + b.w, b.y + b.h),
        pt(b.x + b.w / 2.0, b.y + b.h / 2.0),
    ]
}

/// Decode every box in `map` from `heatmap`.
///
/// Corner coordinates are averaged pairwise: the left edge from the two left
/// corners, the top edge from the two top corners, and so on. A box is
/// reported only when all four corner channels contain an actual peak
/// (maximum > 0), the center confidence reaches `center_threshold`, and the
/// reconstructed width and height are positive; otherwise its slot is `None`.
/// Results are in `BoxKind::ALL` order.
pub fn decode_boxes(
    heatmap: &Heatmap,
    map: &BoxChannelMap,
    center_threshold: f32,
) -> Result<Vec<(BoxKind, Option<DecodedBox>)>, GeomError> {
    if heatmap.channels() < map.required_channels() {
        return Err(GeomError::BadShape(format!(
            "heatmap has {} channels, box layout needs {}",
            heatmap.channels(),
            map.required_channels()
        )));
    }
    let (height, width) = heatmap.shape();
    let stride = heatmap.stride();
    let peak = |c: usize| {
        let (gx, gy, conf) = decode_channel(heatmap.channel(c), height, width);
        (gx * stride, gy * stride, conf)
    };
    Ok(BoxKind::ALL
        .iter()
        .map(|&kind| {
            let ch = map.channels(kind);
            let tl = peak(ch.top_left);
            let tr = peak(ch.top_right);
            let bl = peak(ch.bottom_left);
            let br = peak(ch.bottom_right);
            let (_, _, confidence) = peak(ch.center);
            let corners_present = [tl, tr, bl, br].iter().all(|&(_, _, c)| c > 0.0);
            let x_min = (tl.0 + bl.0) / 2.0;
            let x_max = (tr.0 + br.0) / 2.0;
            let y_min = (tl.1 + tr.1) / 2.0;
            let y_max = (bl.1 + br.1) / 2.0;
            let bbox = BBox::from_corners(x_min, y_min, x_max, y_max);
            let ok =
                corners_present && confidence >= center_threshold && bbox.w > 0.0 && bbox.h > 0.0;
            (kind, ok.then_some(DecodedBox { bbox, confidence }))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::codec::encode_heatmap;

    /// Render the three boxes into a standard 38-channel map by building the
    /// full keypoint list the encoder expects (non-box channels unlabeled).
    fn render(boxes: &[(BoxKind, BBox)], h: usize, w: usize, stride: f64) -> Heatmap {
        let map = BoxChannelMap::standard();
        let mut pts =
            vec![Keypoint { x: 0.0, y: 0.0, v: Visibility::Unlabeled }; map.required_channels()];
        for (kind, b) in boxes {
            let ch = map.channels(*kind);
            let corners = box_corner_points(b);
            for (slot, kp) in
                [ch.top_left, ch.top_right, ch.bottom_left, ch.bottom_right, ch.center]
                    .into_iter()
                    .zip(corners)
            {
                pts[slot] = kp;
            }
        }
        encode_heatmap(&pts, h, w, stride, 2.0).unwrap().heatmap
    }

    #[test]
    fn standard_layout_spans_38_channels() {
        let map = BoxChannelMap::standard();
        assert_eq!(map.required_channels(), 38);
        assert_eq!(map.channels(BoxKind::Face).top_left, 23);
        assert_eq!(map.channels(BoxKind::RightHand).center, 37);
    }

    #[test]
    fn corner_points_land_on_box_geometry() {
        let b = BBox::new(3.0, 4.0, 10.0, 6.0);
        let pts = box_corner_points(&b);
        let xy: Vec<(f64, f64)> = pts.iter().map(|p| (p.x, p.y)).collect();
        assert_eq!(xy, vec![(3.0, 4.0), (13.0, 4.0), (3.0, 10.0), (13.0, 10.0), (8.0, 7.0)]);
    }

    #[test]
    fn grid_aligned_box_decodes_exactly() {
        let b = BBox::new(8.0, 8.0, 16.0, 12.0);
        let hm = render(&[(BoxKind::Face, b)], 24, 24, 2.0);
        let out = decode_boxes(&hm, &BoxChannelMap::standard(), 0.3).unwrap();
        assert_eq!(out.len(), 3);
        let (kind, face) = &out[0];
        assert_eq!(*kind, BoxKind::Face);
        let face = face.expect("face box should decode");
        assert_eq!(
            (face.bbox.x, face.bbox.y, face.bbox.w, face.bbox.h),
            (8.0, 8.0, 16.0, 12.0)
        );
        assert_eq!(face.confidence, 1.0);
        assert!(out[1].1.is_none());
        assert!(out[2].1.is_none());
    }

    #[test]
    fn edge_averaging_splits_disagreeing_corners() {
        // Put the peaks down by hand so the left corners disagree: top-left
        // at x = 7, bottom-left at x = 9. The decoded left edge is their
        // mean, 8.
        let map = BoxChannelMap::standard();
        let ch = map.channels(BoxKind::LeftHand);
        let mut hm = Heatmap::zeros(38, 20, 20, 1.0);
        hm.set(ch.top_left, 2, 7, 1.0);
        hm.set(ch.bottom_left, 10, 9, 1.0);
        hm.set(ch.top_right, 2, 15, 1.0);
        hm.set(ch.bottom_right, 10, 15, 1.0);
        hm.set(ch.center, 6, 12, 0.8);
        let out = decode_boxes(&hm, &map, 0.3).unwrap();
        let hand = out[1].1.expect("left hand should decode");
        assert_eq!(out[1].0, BoxKind::LeftHand);
        assert_eq!(hand.bbox.x, 8.0);
        assert_eq!(hand.bbox.w, 7.0);
        assert_eq!((hand.bbox.y, hand.bbox.h), (2.0, 8.0));
        assert_eq!(hand.confidence, 0.8);
    }

    #[test]
    fn low_center_confidence_or_missing_corner_rejects() {
        let b = BBox::new(8.0, 8.0, 16.0, 12.0);
        let mut hm = render(&[(BoxKind::RightHand, b)], 24, 24, 2.0);
        let map = BoxChannelMap::standard();
        let out = decode_boxes(&hm, &map, 0.3).unwrap();
        assert!(out[2].1.is_some());

        // Same map but asking for more center confidence than is there.
        let out = decode_boxes(&hm, &map, 1.1).unwrap();
        assert!(out[2].1.is_none());

        // Blank out one corner channel entirely: no peak, no box.
        hm.channel_mut(map.channels(BoxKind::RightHand).bottom_right).fill(0.0);
        let out = decode_boxes(&hm, &map, 0.3).unwrap();
        assert!(out[2].1.is_none());
    }

    #[test]
    fn degenerate_geometry_rejects() {
        // Corners present but right edge left of the left edge.
        let map = BoxChannelMap::standard();
        let ch = map.channels(BoxKind::Face);
        let mut hm = Heatmap::zeros(38, 16, 16, 1.0);
        hm.set(ch.top_left, 2, 12, 1.0);
        hm.set(ch.bottom_left, 10, 12, 1.0);
        hm.set(ch.top_right, 2, 4, 1.0);
        hm.set(ch.bottom_right, 10, 4, 1.0);
        hm.set(ch.center, 6, 8, 1.0);
        let out = decode_boxes(&hm, &map, 0.3).unwrap();
        assert!(out[0].1.is_none());
    }

    #[test]
    fn too_few_channels_is_an_error() {
        let hm = Heatmap::zeros(23, 8, 8, 1.0);
        assert!(decode_boxes(&hm, &BoxChannelMap::standard(), 0.3).is_err());
    }
}
