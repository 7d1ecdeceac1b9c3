use super::{AreaSource, EvalPart, SigmaTable};
use crate::anno::{Part, PersonInstance};

/// OKS of `dt` against `gt` over one report part, with an explicit scale.
///
/// `area` plays the role of `s²`; only labeled ground-truth keypoints enter
/// the sum. Returns `None` when the part has no labeled ground truth — the
/// value is undefined there and such instances are skipped by [`super::evaluate`].
///
/// The prediction's own visibility flags are ignored, as in the COCO
/// protocol: a detector is judged on coordinates for every labeled ground
/// truth, so an unpredicted keypoint simply scores its (large) distance.
pub fn oks(
    gt: &PersonInstance,
    dt: &PersonInstance,
    part: EvalPart,
    sigmas: &SigmaTable,
    area: f64,
) -> Option<f64> {
    let slices: Vec<(Part, f64)> = part.slices().iter().map(|&p| (p, area)).collect();
    oks_with_areas(gt, dt, &slices, sigmas)
}

/// OKS over explicit `(slice, area)` pairs, used when slices carry different
/// scales (both hands judged against their own boxes). The per-keypoint
/// terms are pooled into a single labeled-count-weighted mean.
pub fn oks_with_areas(
    gt: &PersonInstance,
    dt: &PersonInstance,
    slices: &[(Part, f64)],
    sigmas: &SigmaTable,
) -> Option<f64> {
    let mut sum = 0.0;
    let mut labeled = 0usize;
    for &(part, area) in slices {
        // A degenerate scale cannot support a meaningful similarity; treat
        // the slice as unlabeled rather than divide by zero.
        if !(area > 0.0) {
            continue;
        }
        for i in part.range() {
            let g = gt.keypoints[i];
            if !g.is_labeled() {
                continue;
            }
            labeled += 1;
            let d = dt.keypoints[i];
            let d2 = (d.x - g.x).powi(2) + (d.y - g.y).powi(2);
            let k = sigmas.k(i);
            sum += (-d2 / (2.0 * area * k * k)).exp();
        }
    }
    if labeled == 0 {
        None
    } else {
        Some(sum / labeled as f64)
    }
}

/// The `(slice, area)` pairs used to judge `gt` for `part` under `source`.
pub(crate) fn eval_slices(
    gt: &PersonInstance,
    part: EvalPart,
    source: AreaSource,
) -> Vec<(Part, f64)> {
    let person = gt.area;
    match (part, source) {
        (EvalPart::Face, AreaSource::PartBox) => vec![(Part::Face, gt.face_box.area())],
        (EvalPart::Hand, AreaSource::PartBox) => vec![
            (Part::LeftHand, gt.lefthand_box.area()),
            (Part::RightHand, gt.righthand_box.area()),
        ],
        _ => part.slices().iter().map(|&p| (p, person)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anno::{BBox, Keypoint};

    fn instance_with_body(points: &[(f64, f64)]) -> PersonInstance {
        let mut inst = PersonInstance::new(1, 1, BBox::new(0.0, 0.0, 100.0, 100.0));
        for (i, &(x, y)) in points.iter().enumerate() {
            inst.keypoints[i] = Keypoint::visible(x, y);
        }
        inst
    }

    #[test]
    fn identical_instances_score_one() {
        let gt = instance_with_body(&[(10.0, 10.0), (20.0, 30.0), (40.0, 50.0)]);
        let dt = gt.clone();
        let sigmas = SigmaTable::uniform(0.05);
        let v = oks(&gt, &dt, EvalPart::Body, &sigmas, gt.area).unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn single_keypoint_displaced_by_sk_sqrt2() {
        // d = s·k·√2 makes the exponent exactly −1.
        let area = 2500.0; // s = 50
        let k = 0.1;
        let d = 50.0 * k * std::f64::consts::SQRT_2;
        let gt = instance_with_body(&[(40.0, 40.0)]);
        let mut dt = gt.clone();
        dt.keypoints[0].x += d;
        let sigmas = SigmaTable::uniform(k);
        let v = oks(&gt, &dt, EvalPart::Body, &sigmas, area).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-12, "{v} vs {}", (-1.0f64).exp());
        assert!((v - 0.36787944117144233).abs() < 1e-12);
    }

    #[test]
    fn undefined_without_labeled_ground_truth() {
        let gt = PersonInstance::new(1, 1, BBox::new(0.0, 0.0, 10.0, 10.0));
        let dt = instance_with_body(&[(1.0, 1.0)]);
        let sigmas = SigmaTable::uniform(0.05);
        assert!(oks(&gt, &dt, EvalPart::Body, &sigmas, 100.0).is_none());
        assert!(oks(&gt, &dt, EvalPart::WholeBody, &sigmas, 100.0).is_none());
    }

    // Independent oracle: direct transliteration of the formula, one keypoint
    // at a time, no shared helpers.
    fn oks_oracle(
        g: &[Keypoint],
        d: &[Keypoint],
        idxs: std::ops::Range<usize>,
        ks: &[f64],
        area: f64,
    ) -> Option<f64> {
        let mut total = 0.0;
        let mut n = 0;
        for i in idxs {
            if g[i].v.is_labeled() {
                let dx = d[i].x - g[i].x;
                let dy = d[i].y - g[i].y;
                let e = (dx * dx + dy * dy) / (2.0 * area * ks[i] * ks[i]);
                total += f64::exp(-e);
                n += 1;
            }
        }
        if n == 0 {
            None
        } else {
            Some(total / n as f64)
        }
    }

    #[test]
    fn matches_oracle_on_random_pairs() {
        let mut state = 0x9E3779B97F4A7C15u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let sigmas = SigmaTable::with_part_constants(0.07, 0.02, 0.03);
        for _ in 0..500 {
            let mut gt = PersonInstance::new(1, 1, BBox::new(0.0, 0.0, 200.0, 300.0));
            let mut dt = gt.clone();
            for i in 0..crate::anno::NUM_KEYPOINTS {
                if next() < 0.7 {
                    gt.keypoints[i] = Keypoint::visible(next() * 200.0, next() * 300.0);
                }
                dt.keypoints[i] = Keypoint::visible(next() * 200.0, next() * 300.0);
            }
            let area = 1.0 + next() * 60000.0;
            for part in EvalPart::ALL {
                let ours = oks(&gt, &dt, part, &sigmas, area);
                // Oracle over the union of the part's ranges.
                let mut total = 0.0;
                let mut n = 0;
                for p in part.slices() {
                    if let Some(v) = oks_oracle(
                        gt.keypoints.as_slice(),
                        dt.keypoints.as_slice(),
                        p.range(),
                        sigmas.values(),
                        area,
                    ) {
                        let labeled = gt.keypoints.labeled_count(*p);
                        total += v * labeled as f64;
                        n += labeled;
                    }
                }
                let expect = if n == 0 { None } else { Some(total / n as f64) };
                match (ours, expect) {
                    (None, None) => {}
                    (Some(a), Some(b)) => assert!((a - b).abs() < 1e-9, "{part:?}: {a} vs {b}"),
                    other => panic!("{part:?}: {other:?}"),
                }
            }
        }
    }

    #[test]
    fn wholebody_equals_weighted_part_combination() {
        // With a single shared area, the whole-body OKS is the labeled-count
        // weighted mean of the per-part sums.
        let mut gt = PersonInstance::new(1, 1, BBox::new(0.0, 0.0, 100.0, 100.0));
        let mut dt = gt.clone();
        for i in 0..crate::anno::NUM_KEYPOINTS {
            gt.keypoints[i] = Keypoint::visible((i % 13) as f64 * 3.0, (i % 7) as f64 * 5.0);
            dt.keypoints[i] = Keypoint::visible((i % 13) as f64 * 3.0 + 1.5, (i % 7) as f64 * 5.0 - 0.5);
        }
        let sigmas = SigmaTable::uniform(0.04);
        let area = 10000.0;
        let whole = oks(&gt, &dt, EvalPart::WholeBody, &sigmas, area).unwrap();
        let mut total = 0.0;
        let mut n = 0usize;
        for part in [EvalPart::Body, EvalPart::Foot, EvalPart::Face, EvalPart::Hand] {
            let labeled: usize = part.slices().iter().map(|p| gt.keypoints.labeled_count(*p)).sum();
            total += oks(&gt, &dt, part, &sigmas, area).unwrap() * labeled as f64;
            n += labeled;
        }
        assert!((whole - total / n as f64).abs() < 1e-12);
    }
}
