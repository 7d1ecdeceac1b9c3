//! Greedy matching and AP/AR accumulation.
//!
//! The protocol mirrors the established keypoint-evaluation tooling:
//! detections are truncated to `max_detections` per image and matched in
//! descending score order; every ground truth is matched at most once per
//! threshold; ground truths without a labeled keypoint in the evaluated part
//! act as ignore regions (a detection matched to one is excluded from the
//! precision/recall pool instead of becoming a false positive). Precision is
//! interpolated at 101 recall points after taking the running maximum from
//! the right, and AP/AR average the per-threshold values.

use rayon::prelude::*;

use super::oks::{eval_slices, oks_with_areas};
use super::{AreaSource, EvalError, EvalPart, SigmaTable};
use crate::anno::{Dataset, PersonInstance};

/// Evaluation parameters. The defaults reproduce the standard protocol:
/// OKS thresholds 0.50:0.05:0.95, 20 detections per image, part-box areas.
#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub part: EvalPart,
    pub thresholds: Vec<f64>,
    pub max_detections: usize,
    pub area_source: AreaSource,
    /// Ground-truth person-area filter for the headline numbers. Medium and
    /// large splits are always reported alongside when this is `All`.
    pub range: AreaRange,
}

impl EvalConfig {
    pub fn for_part(part: EvalPart) -> EvalConfig {
        EvalConfig {
            part,
            thresholds: default_thresholds(),
            max_detections: 20,
            area_source: AreaSource::default(),
            range: AreaRange::All,
        }
    }

    fn check(&self) -> Result<(), EvalError> {
        if self.thresholds.is_empty() {
            return Err(EvalError::BadConfig("no OKS thresholds".into()));
        }
        if self.thresholds.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
            return Err(EvalError::BadConfig("OKS thresholds must lie in (0, 1]".into()));
        }
        if self.max_detections == 0 {
            return Err(EvalError::BadConfig("max_detections must be at least 1".into()));
        }
        Ok(())
    }
}

/// 0.50:0.05:0.95.
pub fn default_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

/// Instance-area filter applied to both ground truths and detections.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AreaRange {
    All,
    /// 32² ≤ area ≤ 96².
    Medium,
    /// area > 96².
    Large,
    /// lo < area ≤ hi.
    Above { lo: f64, hi: f64 },
}

impl AreaRange {
    pub fn contains(self, area: f64) -> bool {
        match self {
            AreaRange::All => true,
            AreaRange::Medium => (1024.0..=9216.0).contains(&area),
            AreaRange::Large => area > 9216.0,
            AreaRange::Above { lo, hi } => area > lo && area <= hi,
        }
    }
}

/// One matched (ground truth, detection) pair from the analysis matching.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchRecord {
    pub image_id: u64,
    pub gt_id: u64,
    pub dt_id: u64,
    pub oks: f64,
}

/// Result of evaluating one report part.
#[derive(Debug, Clone)]
pub struct PartEval {
    pub part: EvalPart,
    pub ap: Option<f64>,
    pub ar: Option<f64>,
    pub ap_medium: Option<f64>,
    pub ap_large: Option<f64>,
    pub ar_medium: Option<f64>,
    pub ar_large: Option<f64>,
    /// Ground truths with at least one labeled keypoint in the part.
    pub num_gt: usize,
    /// Score-greedy matching with no OKS floor, for downstream diagnosis.
    pub matches: Vec<MatchRecord>,
}

/// A full report: one row per requested part.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub parts: Vec<PartEval>,
}

impl EvalReport {
    pub fn part(&self, part: EvalPart) -> Option<&PartEval> {
        self.parts.iter().find(|p| p.part == part)
    }
}

// ---------------------------------------------------------------------------
// Generic per-image matching units, shared with box-detection evaluation.

pub(crate) struct GtUnit {
    pub id: u64,
    pub area: f64,
    /// Ignore regardless of area (no labeled keypoints in the part).
    pub ignore: bool,
}

pub(crate) struct DtUnit {
    pub id: u64,
    pub area: f64,
    pub score: f64,
}

pub(crate) struct ImageUnits {
    pub image_id: u64,
    pub gts: Vec<GtUnit>,
    /// Sorted by descending score (stable over id order), truncated to
    /// `max_detections`.
    pub dts: Vec<DtUnit>,
    /// Similarity of every (dt, gt) pair, dt-major.
    pub sim: Vec<f64>,
}

impl ImageUnits {
    fn sim(&self, d: usize, g: usize) -> f64 {
        self.sim[d * self.gts.len() + g]
    }
}

/// Greedy matching of one image at one threshold.
///
/// Returns, per detection: `Some(gt index)` or `None`, plus the dt-ignore
/// flags; and per gt whether it was matched. Ground truths are visited
/// non-ignored first; a detection prefers the highest similarity at or above
/// the threshold, and an exact tie goes to the later ground truth (the
/// running best is replaced on equality, as in the reference tooling).
fn match_image(units: &ImageUnits, threshold: f64, range: AreaRange) -> (Vec<Option<usize>>, Vec<bool>) {
    let ngt = units.gts.len();
    let gt_ig: Vec<bool> = units.gts.iter().map(|g| g.ignore || !range.contains(g.area)).collect();

    let mut order: Vec<usize> = (0..ngt).collect();
    order.sort_by_key(|&g| gt_ig[g]); // stable: non-ignored first, id order kept

    let mut gt_matched = vec![false; ngt];
    let mut dt_match: Vec<Option<usize>> = vec![None; units.dts.len()];
    let mut dt_ignore = vec![false; units.dts.len()];

    for d in 0..units.dts.len() {
        let mut best = threshold.min(1.0 - 1e-10);
        let mut chosen: Option<usize> = None;
        for &g in &order {
            if gt_matched[g] {
                continue;
            }
            // Once we hold a real match, do not trade it for an ignore
            // region (they sort last, so nothing better follows).
            if let Some(c) = chosen {
                if !gt_ig[c] && gt_ig[g] {
                    break;
                }
            }
            if units.sim(d, g) < best {
                continue;
            }
            best = units.sim(d, g);
            chosen = Some(g);
        }
        if let Some(g) = chosen {
            gt_matched[g] = true;
            dt_match[d] = Some(g);
            dt_ignore[d] = gt_ig[g];
        } else {
            dt_ignore[d] = !range.contains(units.dts[d].area);
        }
    }
    (dt_match, dt_ignore)
}

pub(crate) struct RangeMetrics {
    pub ap: Option<f64>,
    pub ar: Option<f64>,
    pub num_gt: usize,
}

/// Pool matches across images and accumulate AP/AR for one area range.
pub(crate) fn accumulate(units: &[ImageUnits], thresholds: &[f64], range: AreaRange) -> RangeMetrics {
    let num_gt: usize = units
        .iter()
        .flat_map(|u| &u.gts)
        .filter(|g| !g.ignore && range.contains(g.area))
        .count();
    if num_gt == 0 {
        return RangeMetrics { ap: None, ar: None, num_gt: 0 };
    }

    // Global pool entry: (score, tp per threshold, ignore per threshold),
    // built in (image, dt) order so the stable sort keeps determinism.
    struct Pooled {
        score: f64,
        tp: Vec<bool>,
        ig: Vec<bool>,
    }
    let mut pool: Vec<Pooled> = Vec::new();
    for u in units {
        let per_t: Vec<(Vec<Option<usize>>, Vec<bool>)> =
            thresholds.iter().map(|&t| match_image(u, t, range)).collect();
        for d in 0..u.dts.len() {
            let mut tp = Vec::with_capacity(thresholds.len());
            let mut ig = Vec::with_capacity(thresholds.len());
            for (dt_match, dt_ignore) in &per_t {
                ig.push(dt_ignore[d]);
                tp.push(dt_match[d].is_some() && !dt_ignore[d]);
            }
            pool.push(Pooled { score: u.dts[d].score, tp, ig });
        }
    }
    pool.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(std::cmp::Ordering::Equal));

    let rec_thrs: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
    let mut ap_sum = 0.0;
    let mut ar_sum = 0.0;
    for (ti, _) in thresholds.iter().enumerate() {
        let mut tp_cum = 0usize;
        let mut fp_cum = 0usize;
        let mut recall = Vec::with_capacity(pool.len());
        let mut precision = Vec::with_capacity(pool.len());
        for p in &pool {
            if p.ig[ti] {
                continue;
            }
            if p.tp[ti] {
                tp_cum += 1;
            } else {
                fp_cum += 1;
            }
            recall.push(tp_cum as f64 / num_gt as f64);
            precision.push(tp_cum as f64 / (tp_cum + fp_cum) as f64);
        }
        ar_sum += recall.last().copied().unwrap_or(0.0);

        // Monotone envelope from the right, then 101-point interpolation.
        for i in (1..precision.len()).rev() {
            if precision[i - 1] < precision[i] {
                precision[i - 1] = precision[i];
            }
        }
        let mut q_sum = 0.0;
        let mut idx = 0usize;
        for &r in &rec_thrs {
            while idx < recall.len() && recall[idx] < r {
                idx += 1;
            }
            if idx < precision.len() {
                q_sum += precision[idx];
            }
        }
        ap_sum += q_sum / rec_thrs.len() as f64;
    }

    let nt = thresholds.len() as f64;
    RangeMetrics { ap: Some(ap_sum / nt), ar: Some(ar_sum / nt), num_gt }
}

// ---------------------------------------------------------------------------
// Keypoint-specific assembly.

/// OKS of a detection against an unlabeled ("ignore") ground truth: measured
/// against the person box expanded by its own extent on every side, so
/// detections inside the region can be absorbed by it.
fn ignore_region_sim(
    gt: &PersonInstance,
    dt: &PersonInstance,
    part: EvalPart,
    sigmas: &SigmaTable,
) -> f64 {
    let b = gt.person_box;
    let (x0, x1) = (b.x - b.w, b.x + 2.0 * b.w);
    let (y0, y1) = (b.y - b.h, b.y + 2.0 * b.h);
    let area = gt.area.max(f64::MIN_POSITIVE);
    let mut sum = 0.0;
    let mut n = 0usize;
    for p in part.slices() {
        for i in p.range() {
            let d = dt.keypoints[i];
            let dx = (x0 - d.x).max(0.0) + (d.x - x1).max(0.0);
            let dy = (y0 - d.y).max(0.0) + (d.y - y1).max(0.0);
            let k = sigmas.k(i);
            sum += (-(dx * dx + dy * dy) / (2.0 * area * k * k)).exp();
            n += 1;
        }
    }
    sum / n as f64
}

fn build_units(
    gt: &Dataset,
    dt: &[PersonInstance],
    cfg: &EvalConfig,
    sigmas: &SigmaTable,
) -> Result<Vec<ImageUnits>, EvalError> {
    let mut seen = std::collections::HashSet::new();
    for d in dt {
        if gt.image(d.image_id).is_none() {
            return Err(EvalError::UnknownImage { dt_id: d.id, image_id: d.image_id });
        }
        if !seen.insert(d.id) {
            return Err(EvalError::DuplicateDetection { id: d.id, image_id: d.image_id });
        }
    }

    let units: Vec<ImageUnits> = gt
        .images
        .par_iter()
        .map(|im| {
            let gts: Vec<&PersonInstance> = gt.instances_for_image(im.id).collect();
            let mut dts: Vec<&PersonInstance> = dt.iter().filter(|d| d.image_id == im.id).collect();
            // Canonical order: by id, then stable by descending score, so the
            // outcome does not depend on input order.
            dts.sort_by_key(|d| d.id);
            dts.sort_by(|a, b| {
                b.score
                    .unwrap_or(0.0)
                    .partial_cmp(&a.score.unwrap_or(0.0))
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
            dts.truncate(cfg.max_detections);

            let labeled =
                |g: &PersonInstance| cfg.part.slices().iter().any(|p| g.keypoints.labeled_count(*p) > 0);

            let mut sim = Vec::with_capacity(dts.len() * gts.len());
            for d in &dts {
                for g in &gts {
                    let v = if labeled(g) {
                        oks_with_areas(g, d, &eval_slices(g, cfg.part, cfg.area_source), sigmas)
                            .unwrap_or(0.0)
                    } else {
                        ignore_region_sim(g, d, cfg.part, sigmas)
                    };
                    sim.push(v);
                }
            }

            ImageUnits {
                image_id: im.id,
                gts: gts
                    .iter()
                    .map(|g| GtUnit { id: g.id, area: g.area, ignore: !labeled(g) })
                    .collect(),
                dts: dts
                    .iter()
                    .map(|d| DtUnit { id: d.id, area: d.area, score: d.score.unwrap_or(0.0) })
                    .collect(),
                sim,
            }
        })
        .collect();
    Ok(units)
}

fn analysis_matches(units: &[ImageUnits]) -> Vec<MatchRecord> {
    let mut out = Vec::new();
    for u in units {
        let (dt_match, _) = match_image(u, 0.0, AreaRange::All);
        for (d, m) in dt_match.iter().enumerate() {
            if let Some(g) = m {
                // Pairs with ignore regions are not evaluations.
                if !u.gts[*g].ignore {
                    out.push(MatchRecord {
                        image_id: u.image_id,
                        gt_id: u.gts[*g].id,
                        dt_id: u.dts[d].id,
                        oks: u.sim(d, *g),
                    });
                }
            }
        }
    }
    out
}

/// Evaluate one report part. See the module docs for the protocol.
pub fn evaluate(gt: &Dataset, dt: &[PersonInstance], cfg: &EvalConfig) -> Result<PartEval, EvalError> {
    cfg.check()?;
    let sigmas = gt.sigma_table.as_ref().ok_or(EvalError::MissingSigmas)?;
    let units = build_units(gt, dt, cfg, sigmas)?;

    let head = accumulate(&units, &cfg.thresholds, cfg.range);
    let (mut ap_medium, mut ap_large, mut ar_medium, mut ar_large) = (None, None, None, None);
    if cfg.range == AreaRange::All {
        let m = accumulate(&units, &cfg.thresholds, AreaRange::Medium);
        let l = accumulate(&units, &cfg.thresholds, AreaRange::Large);
        (ap_medium, ar_medium) = (m.ap, m.ar);
        (ap_large, ar_large) = (l.ap, l.ar);
    }

    Ok(PartEval {
        part: cfg.part,
        ap: head.ap,
        ar: head.ar,
        ap_medium,
        ap_large,
        ar_medium,
        ar_large,
        num_gt: head.num_gt,
        matches: analysis_matches(&units),
    })
}

/// The analysis matching alone: greedy in score order with no OKS floor,
/// over the full area range. Every detection is paired with the best still
/// unmatched labeled ground truth of its image (if any remain).
pub fn match_instances(
    gt: &Dataset,
    dt: &[PersonInstance],
    cfg: &EvalConfig,
) -> Result<Vec<MatchRecord>, EvalError> {
    cfg.check()?;
    let sigmas = gt.sigma_table.as_ref().ok_or(EvalError::MissingSigmas)?;
    let units = build_units(gt, dt, cfg, sigmas)?;
    Ok(analysis_matches(&units))
}
