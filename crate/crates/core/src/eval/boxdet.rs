//! Face / hand box detection quality, judged like an object detector: greedy
//! IoU matching per image with the same AP/AR accumulation as the keypoint
//! metrics.

use super::evaluate::{accumulate, AreaRange, DtUnit, GtUnit, ImageUnits};
use super::EvalError;
use crate::anno::{BBox, BoxKind, Dataset};

/// One predicted part box.
#[derive(Debug, Clone, Copy)]
pub struct BoxDetection {
    pub image_id: u64,
    pub kind: BoxKind,
    pub bbox: BBox,
    pub score: f64,
}

/// AP/AR of one box kind.
#[derive(Debug, Clone, Copy)]
pub struct BoxDetEval {
    pub kind: BoxKind,
    pub ap: Option<f64>,
    pub ar: Option<f64>,
    pub num_gt: usize,
}

/// Evaluate part-box detections against the valid ground-truth part boxes.
///
/// `thresholds` are IoU thresholds (the usual choice is the same
/// 0.50:0.05:0.95 ladder as OKS); detections are capped at 20 per image and
/// kind, matching the keypoint protocol.
pub fn box_detection_eval(
    gt: &Dataset,
    dts: &[BoxDetection],
    thresholds: &[f64],
) -> Result<Vec<BoxDetEval>, EvalError> {
    if thresholds.is_empty() {
        return Err(EvalError::BadConfig("no IoU thresholds".into()));
    }
    for d in dts {
        if gt.image(d.image_id).is_none() {
            return Err(EvalError::UnknownImage { dt_id: 0, image_id: d.image_id });
        }
    }
    const MAX_DETECTIONS: usize = 20;

    let mut out = Vec::new();
    for kind in BoxKind::ALL {
        let units: Vec<ImageUnits> = gt
            .images
            .iter()
            .map(|im| {
                let gt_boxes: Vec<&BBox> = gt
                    .instances_for_image(im.id)
                    .map(|inst| kind.gt_box(inst))
                    .filter(|b| b.valid)
                    .collect();
                let mut dt_boxes: Vec<&BoxDetection> = dts
                    .iter()
                    .filter(|d| d.image_id == im.id && d.kind == kind)
                    .collect();
                dt_boxes.sort_by(|a, b| {
                    b.score.partial_cmp(&a.score).unwrap_or(std::cmp::Ordering::Equal)
                });
                dt_boxes.truncate(MAX_DETECTIONS);

                let mut sim = Vec::with_capacity(dt_boxes.len() * gt_boxes.len());
                for d in &dt_boxes {
                    for g in &gt_boxes {
                        sim.push(d.bbox.iou(g));
                    }
                }
                ImageUnits {
                    image_id: im.id,
                    gts: gt_boxes
                        .iter()
                        .enumerate()
                        .map(|(i, b)| GtUnit { id: i as u64, area: b.area(), ignore: false })
                        .collect(),
                    dts: dt_boxes
                        .iter()
                        .enumerate()
                        .map(|(i, d)| DtUnit { id: i as u64, area: d.bbox.area(), score: d.score })
                        .collect(),
                    sim,
                }
            })
            .collect();

        let m = accumulate(&units, thresholds, AreaRange::All);
        out.push(BoxDetEval { kind, ap: m.ap, ar: m.ar, num_gt: m.num_gt });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anno::{ImageInfo, Keypoint, PersonInstance};
    use crate::eval::SigmaTable;

    fn gt_with_face_boxes(boxes: &[BBox]) -> Dataset {
        let mut instances = Vec::new();
        for (i, b) in boxes.iter().enumerate() {
            let mut inst = PersonInstance::new(i as u64 + 1, 1, b.padded(3.0));
            inst.area = inst.person_box.area();
            inst.face_box = *b;
            // Keep validity consistent: one labeled face point.
            inst.keypoints.part_mut(crate::anno::Part::Face)[0] = Keypoint::visible(b.x, b.y);
            instances.push(inst);
        }
        Dataset {
            images: vec![ImageInfo::new(1, 1000, 1000, "")],
            instances,
            sigma_table: Some(SigmaTable::uniform(0.05)),
            extra: Default::default(),
        }
    }

    #[test]
    fn exact_boxes_give_ap_one() {
        let boxes = [BBox::new(10.0, 10.0, 40.0, 30.0), BBox::new(200.0, 50.0, 60.0, 60.0)];
        let gt = gt_with_face_boxes(&boxes);
        let dts: Vec<BoxDetection> = boxes
            .iter()
            .map(|b| BoxDetection { image_id: 1, kind: BoxKind::Face, bbox: *b, score: 0.9 })
            .collect();
        let evals = box_detection_eval(&gt, &dts, &crate::eval::evaluate::default_thresholds()).unwrap();
        let face = evals.iter().find(|e| e.kind == BoxKind::Face).unwrap();
        assert_eq!(face.ap, Some(1.0));
        assert_eq!(face.ar, Some(1.0));
        assert_eq!(face.num_gt, 2);
        // No hand ground truth at all → undefined, not zero.
        let lh = evals.iter().find(|e| e.kind == BoxKind::LeftHand).unwrap();
        assert_eq!(lh.ap, None);
    }

    #[test]
    fn half_overlap_fails_high_thresholds() {
        // IoU of a unit square shifted by half its width is 1/3: it matches
        // no threshold in the 0.5:0.95 ladder.
        let b = BBox::new(10.0, 10.0, 20.0, 20.0);
        let gt = gt_with_face_boxes(&[b]);
        let shifted = BBox::new(20.0, 10.0, 20.0, 20.0);
        let dts = [BoxDetection { image_id: 1, kind: BoxKind::Face, bbox: shifted, score: 0.9 }];
        let evals = box_detection_eval(&gt, &dts, &crate::eval::evaluate::default_thresholds()).unwrap();
        let face = evals.iter().find(|e| e.kind == BoxKind::Face).unwrap();
        assert_eq!(face.ap, Some(0.0));

        // At a 0.3 threshold the same detection is a hit.
        let evals = box_detection_eval(&gt, &dts, &[0.3]).unwrap();
        let face = evals.iter().find(|e| e.kind == BoxKind::Face).unwrap();
        assert_eq!(face.ap, Some(1.0));
    }
}
