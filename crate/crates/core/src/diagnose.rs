//! Per-keypoint error taxonomy and correction experiments.
//!
//! Average precision compresses every failure mode into one number. This
//! module pulls them apart again: each labeled ground-truth keypoint of each
//! matched (ground truth, detection) pair receives exactly one verdict —
//!
//! * **Good** — the prediction is within the strict similarity threshold,
//! * **Jitter** — loose but recognizably on target,
//! * **Inversion** — off target, but a strict hit on a *different* keypoint
//!   of the same person (the classic left/right flip),
//! * **Swap** — off target, but a strict hit on some keypoint of *another*
//!   person,
//! * **Miss** — none of the above, including keypoints the detector never
//!   produced.
//!
//! Because the verdicts partition the evaluated keypoints, "what would AP be
//! if this error class vanished" is well defined: substitute the ground
//! truth for exactly the keypoints in one class and re-evaluate. That is
//! [`correction_gain`]; substituting every class (`Good` included) must
//! restore a perfect 1.000 AP on one-detection-per-ground-truth fixtures,
//! which doubles as an end-to-end audit of the bookkeeping.
//!
//! Keypoint similarity here is the per-keypoint OKS term
//! `exp(-d² / (2 s² k²))` with the same part-appropriate area convention as
//! the evaluator (face and hand keypoints are judged against their part-box
//! scale, everything else against the person scale).

use std::collections::HashMap;

use thiserror::Error;

use crate::anno::{Dataset, Part, PersonInstance};
use crate::eval::{
    evaluate, match_instances, AreaRange, AreaSource, EvalConfig, EvalError, EvalPart,
};

#[derive(Debug, Error)]
pub enum DiagnoseError {
    #[error("invalid diagnosis config: {0}")]
    BadConfig(String),

    #[error("verdict references unknown {what} {id} on image {image_id}")]
    UnknownId { what: &'static str, id: u64, image_id: u64 },

    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// The five mutually exclusive keypoint verdicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Category {
    Good,
    Jitter,
    Inversion,
    Swap,
    Miss,
}

impl Category {
    pub const ALL: [Category; 5] =
        [Category::Good, Category::Jitter, Category::Inversion, Category::Swap, Category::Miss];

    pub fn name(self) -> &'static str {
        match self {
            Category::Good => "good",
            Category::Jitter => "jitter",
            Category::Inversion => "inversion",
            Category::Swap => "swap",
            Category::Miss => "miss",
        }
    }
}

/// Thresholds of the taxonomy.
#[derive(Debug, Clone, Copy)]
pub struct DiagnoseConfig {
    /// Similarity at or above which a keypoint is `Good` (also the bar an
    /// inversion/swap candidate must clear on the wrong target).
    pub t_good: f64,
    /// Similarity at or above which a non-good keypoint is `Jitter`.
    pub t_jitter: f64,
    /// Area convention for the per-keypoint similarity.
    pub area_source: AreaSource,
}

impl Default for DiagnoseConfig {
    fn default() -> DiagnoseConfig {
        DiagnoseConfig { t_good: 0.85, t_jitter: 0.5, area_source: AreaSource::default() }
    }
}

impl DiagnoseConfig {
    fn check(&self) -> Result<(), DiagnoseError> {
        if !(self.t_good > 0.0 && self.t_good <= 1.0) {
            return Err(DiagnoseError::BadConfig(format!(
                "t_good must lie in (0, 1], got {}",
                self.t_good
            )));
        }
        if !(self.t_jitter > 0.0 && self.t_jitter < self.t_good) {
            return Err(DiagnoseError::BadConfig(format!(
                "t_jitter must lie in (0, t_good), got {} with t_good {}",
                self.t_jitter, self.t_good
            )));
        }
        Ok(())
    }
}

/// One classified keypoint of one matched pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeypointVerdict {
    pub image_id: u64,
    pub gt_id: u64,
    pub dt_id: u64,
    /// Global keypoint index (0..133).
    pub keypoint: usize,
    /// Similarity against the keypoint's own ground truth (0 when the
    /// detector produced nothing).
    pub ks: f64,
    pub category: Category,
}

/// The OKS scale for keypoint `idx` of `inst`: part-box area for face and
/// hand keypoints under [`AreaSource::PartBox`], person area otherwise (and
/// as fallback when the part box is degenerate).
fn keypoint_area(inst: &PersonInstance, idx: usize, source: AreaSource) -> f64 {
    let area = match (Part::of_index(idx), source) {
        (Part::Face, AreaSource::PartBox) => inst.face_box.area(),
        (Part::LeftHand, AreaSource::PartBox) => inst.lefthand_box.area(),
        (Part::RightHand, AreaSource::PartBox) => inst.righthand_box.area(),
        _ => inst.area,
    };
    if area > 0.0 {
        area
    } else {
        inst.area
    }
}

fn similarity(dx: f64, dy: f64, area: f64, k: f64) -> f64 {
    if !(area > 0.0) {
        return 0.0;
    }
    (-(dx * dx + dy * dy) / (2.0 * area * k * k)).exp()
}

/// Classify every labeled ground-truth keypoint of every matched pair.
///
/// Matching is the score-greedy analysis matching of the evaluator with no
/// OKS floor, over the whole-body slice. Output order is the match order
/// (image by image) with ascending keypoint index within a pair, so runs are
/// reproducible byte for byte.
pub fn classify_keypoints(
    gt: &Dataset,
    dt: &[PersonInstance],
    cfg: &DiagnoseConfig,
) -> Result<Vec<KeypointVerdict>, DiagnoseError> {
    cfg.check()?;
    let sigmas =
        gt.sigma_table.as_ref().ok_or(DiagnoseError::Eval(EvalError::MissingSigmas))?.clone();
    let mut ecfg = EvalConfig::for_part(EvalPart::WholeBody);
    ecfg.area_source = cfg.area_source;
    let matches = match_instances(gt, dt, &ecfg)?;

    let gt_by: HashMap<(u64, u64), &PersonInstance> =
        gt.instances.iter().map(|i| ((i.image_id, i.id), i)).collect();
    let dt_by: HashMap<(u64, u64), &PersonInstance> =
        dt.iter().map(|i| ((i.image_id, i.id), i)).collect();

    let mut verdicts = Vec::new();
    for m in &matches {
        let g = gt_by[&(m.image_id, m.gt_id)];
        let d = dt_by[&(m.image_id, m.dt_id)];
        let neighbors: Vec<&PersonInstance> = gt
            .instances_for_image(m.image_id)
            .filter(|o| o.id != g.id)
            .collect();

        for i in 0..crate::anno::NUM_KEYPOINTS {
            let gk = g.keypoints[i];
            if !gk.is_labeled() {
                continue;
            }
            let dk = d.keypoints[i];
            let (ks, category) = if !dk.is_labeled() {
                (0.0, Category::Miss)
            } else {
                let ks = similarity(
                    dk.x - gk.x,
                    dk.y - gk.y,
                    keypoint_area(g, i, cfg.area_source),
                    sigmas.k(i),
                );
                let category = if ks >= cfg.t_good {
                    Category::Good
                } else if ks >= cfg.t_jitter {
                    Category::Jitter
                } else if hits_other_keypoint(&dk, g, Some(i), cfg, &sigmas) {
                    Category::Inversion
                } else if neighbors.iter().any(|o| hits_other_keypoint(&dk, o, None, cfg, &sigmas))
                {
                    Category::Swap
                } else {
                    Category::Miss
                };
                (ks, category)
            };
            verdicts.push(KeypointVerdict {
                image_id: m.image_id,
                gt_id: m.gt_id,
                dt_id: m.dt_id,
                keypoint: i,
                ks,
                category,
            });
        }
    }
    Ok(verdicts)
}

/// Whether the point `dk` is a strict (`t_good`) hit on any labeled keypoint
/// of `person`, judged with that keypoint's own sigma and that person's
/// area. `skip` excludes the keypoint's own index.
fn hits_other_keypoint(
    dk: &crate::anno::Keypoint,
    person: &PersonInstance,
    skip: Option<usize>,
    cfg: &DiagnoseConfig,
    sigmas: &crate::eval::SigmaTable,
) -> bool {
    (0..crate::anno::NUM_KEYPOINTS).any(|j| {
        if skip == Some(j) {
            return false;
        }
        let t = person.keypoints[j];
        t.is_labeled()
            && similarity(
                dk.x - t.x,
                dk.y - t.y,
                keypoint_area(person, j, cfg.area_source),
                sigmas.k(j),
            ) >= cfg.t_good
    })
}

// ---------------------------------------------------------------------------
// Instance-size buckets.
// ---------------------------------------------------------------------------

/// Ground-truth size buckets for error breakdowns, by person area. The
/// buckets are half-open `(lo, hi]` intervals over side lengths 32, 64, 96
/// and 128 pixels: together they partition every area above 32², and areas
/// at or below 32² are excluded (such instances are too small to diagnose).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SizeBucket {
    /// 32² < area ≤ 64²
    M,
    /// 64² < area ≤ 96²
    L,
    /// 96² < area ≤ 128²
    Xl,
    /// area > 128²
    Xx,
}

impl SizeBucket {
    pub const ALL: [SizeBucket; 4] =
        [SizeBucket::M, SizeBucket::L, SizeBucket::Xl, SizeBucket::Xx];

    pub fn name(self) -> &'static str {
        match self {
            SizeBucket::M => "M",
            SizeBucket::L => "L",
            SizeBucket::Xl => "XL",
            SizeBucket::Xx => "XX",
        }
    }

    /// The evaluator range filter selecting exactly this bucket.
    pub fn range(self) -> AreaRange {
        let sq = |s: f64| s * s;
        match self {
            SizeBucket::M => AreaRange::Above { lo: sq(32.0), hi: sq(64.0) },
            SizeBucket::L => AreaRange::Above { lo: sq(64.0), hi: sq(96.0) },
            SizeBucket::Xl => AreaRange::Above { lo: sq(96.0), hi: sq(128.0) },
            SizeBucket::Xx => AreaRange::Above { lo: sq(128.0), hi: f64::INFINITY },
        }
    }

    /// The bucket containing `area`, if any.
    pub fn for_area(area: f64) -> Option<SizeBucket> {
        SizeBucket::ALL.into_iter().find(|b| b.range().contains(area))
    }
}

// ---------------------------------------------------------------------------
// Correction experiments.
// ---------------------------------------------------------------------------

/// AP after substituting ground truth for one verdict category.
#[derive(Debug, Clone)]
pub struct CategoryGain {
    pub category: Category,
    pub ap_after: Option<f64>,
    /// Per size bucket, same substitution (`None` where the bucket holds no
    /// ground truth).
    pub per_bucket: Vec<(SizeBucket, Option<f64>)>,
}

#[derive(Debug, Clone)]
pub struct CorrectionReport {
    pub ap_before: Option<f64>,
    pub bucket_before: Vec<(SizeBucket, Option<f64>)>,
    pub gains: Vec<CategoryGain>,
    /// AP with *every* category substituted. On fixtures with exactly one
    /// detection per ground truth and none spurious, this must be a perfect
    /// 1.000: the verdicts cover all evaluated keypoints, so correcting them
    /// all reproduces the ground truth.
    pub full_correction_ap: Option<f64>,
}

/// Replace the keypoints named by `verdicts` with their ground truth (both
/// position and visibility) in a copy of `dt`.
fn apply_corrections(
    gt: &Dataset,
    dt: &[PersonInstance],
    verdicts: &[&KeypointVerdict],
) -> Result<Vec<PersonInstance>, DiagnoseError> {
    let gt_by: HashMap<(u64, u64), &PersonInstance> =
        gt.instances.iter().map(|i| ((i.image_id, i.id), i)).collect();
    let pos_by: HashMap<(u64, u64), usize> =
        dt.iter().enumerate().map(|(p, i)| ((i.image_id, i.id), p)).collect();

    let mut out = dt.to_vec();
    for v in verdicts {
        let g = gt_by.get(&(v.image_id, v.gt_id)).ok_or(DiagnoseError::UnknownId {
            what: "ground truth",
            id: v.gt_id,
            image_id: v.image_id,
        })?;
        let p = pos_by.get(&(v.image_id, v.dt_id)).ok_or(DiagnoseError::UnknownId {
            what: "detection",
            id: v.dt_id,
            image_id: v.image_id,
        })?;
        out[*p].keypoints[v.keypoint] = g.keypoints[v.keypoint];
    }
    Ok(out)
}

/// Evaluate what fixing each error category would buy.
///
/// `ecfg` controls the evaluation (part, thresholds, area convention); its
/// `range` is overridden per size bucket for the bucket columns.
pub fn correction_gain(
    gt: &Dataset,
    dt: &[PersonInstance],
    verdicts: &[KeypointVerdict],
    ecfg: &EvalConfig,
) -> Result<CorrectionReport, DiagnoseError> {
    let ap_of = |dt: &[PersonInstance], range: AreaRange| -> Result<Option<f64>, DiagnoseError> {
        let cfg = EvalConfig { range, ..ecfg.clone() };
        Ok(evaluate(gt, dt, &cfg)?.ap)
    };

    let ap_before = ap_of(dt, ecfg.range)?;
    let mut bucket_before = Vec::new();
    for b in SizeBucket::ALL {
        bucket_before.push((b, ap_of(dt, b.range())?));
    }

    let mut gains = Vec::new();
    for cat in Category::ALL {
        let subset: Vec<&KeypointVerdict> =
            verdicts.iter().filter(|v| v.category == cat).collect();
        let corrected = apply_corrections(gt, dt, &subset)?;
        let ap_after = ap_of(&corrected, ecfg.range)?;
        let mut per_bucket = Vec::new();
        for b in SizeBucket::ALL {
            per_bucket.push((b, ap_of(&corrected, b.range())?));
        }
        gains.push(CategoryGain { category: cat, ap_after, per_bucket });
    }

    let all: Vec<&KeypointVerdict> = verdicts.iter().collect();
    let fully = apply_corrections(gt, dt, &all)?;
    let full_correction_ap = ap_of(&fully, ecfg.range)?;

    Ok(CorrectionReport { ap_before, bucket_before, gains, full_correction_ap })
}

// ---------------------------------------------------------------------------
// Pie breakdown.
// ---------------------------------------------------------------------------

/// Share of each category among the verdicts of one report part.
#[derive(Debug, Clone)]
pub struct PieBreakdown {
    pub part: EvalPart,
    /// Verdicts counted for this part.
    pub total: usize,
    /// One entry per category, in [`Category::ALL`] order. Fractions sum to
    /// 1 whenever `total > 0`.
    pub fractions: Vec<(Category, f64)>,
}

/// Fraction of verdicts per category, for each requested report part.
pub fn pie_breakdown(verdicts: &[KeypointVerdict], parts: &[EvalPart]) -> Vec<PieBreakdown> {
    parts
        .iter()
        .map(|&part| {
            let in_part = |idx: usize| {
                part.slices().iter().any(|p| p.range().contains(&idx))
            };
            let mut counts = [0usize; 5];
            let mut total = 0usize;
            for v in verdicts.iter().filter(|v| in_part(v.keypoint)) {
                let slot = Category::ALL.iter().position(|&c| c == v.category).unwrap();
                counts[slot] += 1;
                total += 1;
            }
            let fractions = Category::ALL
                .into_iter()
                .zip(counts)
                .map(|(c, n)| (c, if total == 0 { 0.0 } else { n as f64 / total as f64 }))
                .collect();
            PieBreakdown { part, total, fractions }
        })
        .collect()
}
