//! Deterministic synthetic people for tests and demos.
//!
//! Real annotation files are large and unwieldy; most of what the rest of
//! the crate needs from data is structure, not realism. This module lays a
//! canonical standing figure into randomly placed person rectangles: a COCO
//! body, toes and heels below the ankles, an ellipse of face landmarks, and
//! two fans of hand joints hanging off the wrists. All randomness flows from
//! a single seeded stream, so equal configs generate byte-identical datasets.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::anno::{
    minimal_rect, BBox, Dataset, ImageInfo, Keypoint, KeypointSet, Part, PersonInstance,
    Visibility, NUM_KEYPOINTS,
};

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub seed: u64,
    pub images: usize,
    /// Each image gets between 1 and this many people.
    pub max_persons: usize,
    pub width: u32,
    pub height: u32,
    /// Probability that a droppable part (feet, face, either hand) is left
    /// unannotated on an instance.
    pub part_dropout: f64,
}

impl Default for SynthConfig {
    fn default() -> SynthConfig {
        SynthConfig {
            seed: 0,
            images: 8,
            max_persons: 3,
            width: 640,
            height: 480,
            part_dropout: 0.0,
        }
    }
}

/// COCO body joints of the canonical figure, in a unit square (x right,
/// y down, head at the top).
const BODY_POSE: [(f64, f64); 17] = [
    (0.50, 0.08), // nose
    (0.53, 0.06),
    (0.47, 0.06), // eyes
    (0.57, 0.08),
    (0.43, 0.08), // ears
    (0.64, 0.20),
    (0.36, 0.20), // shoulders
    (0.70, 0.35),
    (0.30, 0.35), // elbows
    (0.74, 0.49),
    (0.26, 0.49), // wrists
    (0.58, 0.52),
    (0.42, 0.52), // hips
    (0.57, 0.72),
    (0.43, 0.72), // knees
    (0.56, 0.92),
    (0.44, 0.92), // ankles
];

const FOOT_POSE: [(f64, f64); 6] = [
    (0.58, 0.975), // left big toe
    (0.61, 0.965), // left small toe
    (0.545, 0.935), // left heel
    (0.42, 0.975),
    (0.39, 0.965),
    (0.455, 0.935),
];

const FACE_CENTER: (f64, f64) = (0.50, 0.075);
const FACE_RADII: (f64, f64) = (0.055, 0.06);
const HAND_SCALE: f64 = 0.085;

pub fn generate(cfg: &SynthConfig) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ds = Dataset::default();
    let mut next_instance = 1u64;
    for img_idx in 0..cfg.images {
        let image_id = img_idx as u64 + 1;
        ds.images.push(ImageInfo::new(
            image_id,
            cfg.width,
            cfg.height,
            &format!("synth/{image_id:06}.jpg"),
        ));
        let persons = rng.gen_range(1..=cfg.max_persons.max(1));
        for _ in 0..persons {
            ds.instances.push(person(cfg, &mut rng, next_instance, image_id));
            next_instance += 1;
        }
    }
    ds.sort();
    ds
}

fn person(cfg: &SynthConfig, rng: &mut ChaCha8Rng, id: u64, image_id: u64) -> PersonInstance {
    let img_h = f64::from(cfg.height);
    let img_w = f64::from(cfg.width);
    // Frame the unit-square figure somewhere fully inside the image.
    let ph = img_h * rng.gen_range(0.35..0.8);
    let pw = ph * rng.gen_range(0.40..0.52);
    let px = rng.gen_range(0.0..(img_w - pw).max(1.0));
    let py = rng.gen_range(0.0..(img_h - ph).max(1.0));

    let mut unit: Vec<(f64, f64)> = Vec::with_capacity(NUM_KEYPOINTS);
    unit.extend(BODY_POSE);
    unit.extend(FOOT_POSE);
    for i in 0..Part::Face.len() {
        let theta = std::f64::consts::TAU * (i as f64 + 0.5) / Part::Face.len() as f64;
        unit.push((
            FACE_CENTER.0 + FACE_RADII.0 * theta.cos(),
            FACE_CENTER.1 + FACE_RADII.1 * theta.sin(),
        ));
    }
    unit.extend(hand_fan(BODY_POSE[9], 1.0));
    unit.extend(hand_fan(BODY_POSE[10], -1.0));
    debug_assert_eq!(unit.len(), NUM_KEYPOINTS);

    let points = unit
        .into_iter()
        .map(|(u, v)| {
            let jx = rng.gen_range(-0.008..0.008);
            let jy = rng.gen_range(-0.008..0.008);
            let vis = if rng.gen_bool(0.15) { Visibility::Occluded } else { Visibility::Visible };
            Keypoint::new(
                (px + (u + jx) * pw).clamp(0.0, img_w),
                (py + (v + jy) * ph).clamp(0.0, img_h),
                vis,
            )
        })
        .collect();

    let mut inst = PersonInstance::new(id, image_id, BBox::invalid());
    inst.keypoints = KeypointSet::from_vec(points);
    for part in [Part::Foot, Part::Face, Part::LeftHand, Part::RightHand] {
        if cfg.part_dropout > 0.0 && rng.gen_bool(cfg.part_dropout) {
            for k in inst.keypoints.part_mut(part) {
                *k = Keypoint::default();
            }
        }
    }
    inst.person_box = minimal_rect(inst.keypoints.as_slice()).expect("body is always labeled");
    inst.area = inst.person_box.area();
    inst.face_box = minimal_rect(inst.keypoints.part(Part::Face)).unwrap_or_else(BBox::invalid);
    inst.lefthand_box =
        minimal_rect(inst.keypoints.part(Part::LeftHand)).unwrap_or_else(BBox::invalid);
    inst.righthand_box =
        minimal_rect(inst.keypoints.part(Part::RightHand)).unwrap_or_else(BBox::invalid);
    inst.foot_valid = inst.keypoints.labeled_count(Part::Foot) > 0;
    inst.normalize_validity();
    debug_assert!(inst.check().is_ok(), "{:?}", inst.check());
    inst
}

/// 21 hand joints in the unit frame: the wrist, then five fingers of four
/// joints fanning away from the body (`side` is +1 for left, -1 for right).
fn hand_fan(wrist: (f64, f64), side: f64) -> Vec<(f64, f64)> {
    let mut pts = vec![wrist];
    for finger in 0..5 {
        let theta = (-30.0 + 17.5 * finger as f64).to_radians();
        let (dx, dy) = (side * theta.cos(), 0.35 + theta.sin());
        let norm = (dx * dx + dy * dy).sqrt();
        for joint in 1..=4 {
            let r = HAND_SCALE * 0.25 * joint as f64;
            pts.push((wrist.0 + dx / norm * r, wrist.1 + dy / norm * r));
        }
    }
    pts
}

/// Turn ground truth into plausible detections: per-axis Gaussian noise with
/// standard deviation `kp_frac * sqrt(area)` on every labeled keypoint, a
/// `drop_rate` chance of missing each person entirely, and a random score in
/// `[0.5, 1)`. Boxes are rebuilt from the noisy points.
pub fn jitter_instances(
    gt: &Dataset,
    seed: u64,
    kp_frac: f64,
    drop_rate: f64,
) -> Vec<PersonInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut next_id = 1u64;
    for inst in &gt.instances {
        if drop_rate > 0.0 && rng.gen_bool(drop_rate) {
            continue;
        }
        let sigma = kp_frac * inst.area.sqrt();
        let im = gt.image(inst.image_id);
        let (bw, bh) = im.map_or((f64::INFINITY, f64::INFINITY), |im| {
            (f64::from(im.width), f64::from(im.height))
        });
        let mut dt = inst.clone();
        dt.id = next_id;
        next_id += 1;
        dt.score = Some(0.5 + 0.5 * rng.gen::<f64>());
        for k in dt.keypoints.as_mut_slice() {
            if !k.is_labeled() {
                continue;
            }
            k.x = (k.x + sigma * gaussian(&mut rng)).clamp(0.0, bw);
            k.y = (k.y + sigma * gaussian(&mut rng)).clamp(0.0, bh);
        }
        dt.person_box = minimal_rect(dt.keypoints.as_slice()).unwrap_or(inst.person_box);
        dt.area = dt.person_box.area();
        for part in [Part::Face, Part::LeftHand, Part::RightHand] {
            let rebuilt = minimal_rect(dt.keypoints.part(part)).unwrap_or_else(BBox::invalid);
            match part {
                Part::Face => dt.face_box = rebuilt,
                Part::LeftHand => dt.lefthand_box = rebuilt,
                _ => dt.righthand_box = rebuilt,
            }
        }
        dt.normalize_validity();
        out.push(dt);
    }
    out
}

/// Randomly shift and rescale a box: the center moves by up to `frac` of the
/// box size per axis, and each extent is scaled by `1 ± frac`.
pub fn perturb_box(b: &BBox, frac: f64, rng: &mut impl Rng) -> BBox {
    if frac == 0.0 {
        return *b;
    }
    let (cx, cy) = b.center();
    let w = b.w * (1.0 + rng.gen_range(-frac..frac));
    let h = b.h * (1.0 + rng.gen_range(-frac..frac));
    let cx = cx + b.w * rng.gen_range(-frac..frac);
    let cy = cy + b.h * rng.gen_range(-frac..frac);
    BBox { x: cx - w / 2.0, y: cy - h / 2.0, w, h, valid: b.valid }
}

/// One standard normal draw (Box-Muller).
pub fn gaussian(rng: &mut impl Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
