//! Dataset-level statistics: annotation counts, instance scales, image
//! sharpness, and a coarse hand-gesture census.
//!
//! These are the descriptive numbers one reports about an annotation corpus
//! rather than about a model. Everything here is deterministic: clustering
//! is seeded and made invariant to input order, so two runs over the same
//! files produce identical reports.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::anno::{Dataset, Keypoint, Part};
use crate::geom::bilinear_sample;
use crate::pipeline::PixelGrid;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("bad input: {0}")]
    BadInput(String),

    #[error("skeleton: {0}")]
    Skeleton(String),
}

// ---------------------------------------------------------------------------
// Image sharpness.
// ---------------------------------------------------------------------------

/// Side length images are normalized to before measuring sharpness, so the
/// score is comparable across resolutions.
pub const BLUR_GRID: usize = 112;

/// Log-scale sharpness of an image: `log10(Var(∇²) + 1e-12)`.
///
/// The image is converted to luma (Rec. 601 weights, keeping the 0..255
/// scale), bilinearly resized to [`BLUR_GRID`]², and convolved with the
/// 3×3 Laplacian `[[0,1,0],[1,-4,1],[0,1,0]]` over the interior (no padding
/// — border cells produce no response). The score is the base-10 log of the
/// population variance of the responses, floored by the `1e-12` additive
/// term: a perfectly flat image scores exactly −12, and a 0/1 checkerboard
/// scores `log10(16)` (every response is ±4 with mean zero).
///
/// Accepts 3-channel (RGB) or single-channel (already gray) pixel grids.
pub fn blurriness(pixels: &PixelGrid) -> Result<f64, StatsError> {
    let (h, w) = pixels.shape();
    if h == 0 || w == 0 {
        return Err(StatsError::BadInput("empty image".into()));
    }
    let luma: Vec<f32> = match pixels.channels() {
        1 => pixels.channel(0).to_vec(),
        3 => {
            let (r, g, b) = (pixels.channel(0), pixels.channel(1), pixels.channel(2));
            (0..h * w)
                .map(|i| 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i])
                .collect()
        }
        c => {
            return Err(StatsError::BadInput(format!(
                "expected 1 or 3 channels, got {c}"
            )))
        }
    };
    let small = resize_bilinear(&luma, h, w, BLUR_GRID, BLUR_GRID);

    let n = BLUR_GRID;
    let mut responses = Vec::with_capacity((n - 2) * (n - 2));
    for r in 1..n - 1 {
        for c in 1..n - 1 {
            let v = small[(r - 1) * n + c] as f64
                + small[(r + 1) * n + c] as f64
                + small[r * n + c - 1] as f64
                + small[r * n + c + 1] as f64
                - 4.0 * small[r * n + c] as f64;
            responses.push(v);
        }
    }
    let count = responses.len() as f64;
    let mean = responses.iter().sum::<f64>() / count;
    let var = responses.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
    Ok((var + 1e-12).log10())
}

/// Bilinear resize of one plane. Output cell centers sample the source at
/// the corresponding continuous position, so a same-size resize is exact.
fn resize_bilinear(
    plane: &[f32],
    h: usize,
    w: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<f32> {
    let mut out = Vec::with_capacity(out_h * out_w);
    let sx = w as f64 / out_w as f64;
    let sy = h as f64 / out_h as f64;
    for r in 0..out_h {
        for c in 0..out_w {
            let x = (c as f64 + 0.5) * sx;
            let y = (r as f64 + 0.5) * sy;
            out.push(bilinear_sample(plane, h, w, x, y));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Skeleton.
// ---------------------------------------------------------------------------

/// A spanning tree over the 133-point layout, used to measure instance
/// scale as mean bone length. Shipped as an editable text file and parsed
/// once; [`SkeletonTree::parse`] enforces the tree property, so a bad edit
/// fails loudly instead of skewing statistics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkeletonTree {
    edges: Vec<(usize, usize)>,
}

static DEFAULT_TREE: OnceLock<SkeletonTree> = OnceLock::new();

impl SkeletonTree {
    /// Parse the `a b` edge-list format (one edge per line, `#` comments).
    ///
    /// The edges must form a spanning tree over all 133 keypoints: exactly
    /// 132 edges, every index in range, no duplicates, no cycles, connected.
    pub fn parse(text: &str) -> Result<SkeletonTree, StatsError> {
        let n = crate::anno::NUM_KEYPOINTS;
        let mut edges = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let (a, b) = match (it.next(), it.next(), it.next()) {
                (Some(a), Some(b), None) => (a, b),
                _ => {
                    return Err(StatsError::Skeleton(format!(
                        "line {}: expected two indices, got {raw:?}",
                        lineno + 1
                    )))
                }
            };
            let parse = |s: &str| -> Result<usize, StatsError> {
                s.parse().map_err(|_| {
                    StatsError::Skeleton(format!("line {}: bad index {s:?}", lineno + 1))
                })
            };
            let (a, b) = (parse(a)?, parse(b)?);
            if a >= n || b >= n {
                return Err(StatsError::Skeleton(format!(
                    "line {}: index out of range (0..{n})",
                    lineno + 1
                )));
            }
            if a == b {
                return Err(StatsError::Skeleton(format!("line {}: self loop {a}", lineno + 1)));
            }
            edges.push((a.min(b), a.max(b)));
        }
        if edges.len() != n - 1 {
            return Err(StatsError::Skeleton(format!(
                "expected {} edges for a spanning tree, got {}",
                n - 1,
                edges.len()
            )));
        }
        let mut sorted = edges.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != edges.len() {
            return Err(StatsError::Skeleton("duplicate edge".into()));
        }
        // Union-find cycle/connectivity check; n-1 acyclic edges connect.
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for &(a, b) in &edges {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra == rb {
                return Err(StatsError::Skeleton(format!("edge {a}-{b} closes a cycle")));
            }
            parent[ra] = rb;
        }
        Ok(SkeletonTree { edges })
    }

    /// The tree shipped with the library.
    pub fn default_tree() -> &'static SkeletonTree {
        DEFAULT_TREE.get_or_init(|| {
            SkeletonTree::parse(include_str!("../data/skeleton.txt"))
                .expect("bundled skeleton must be valid")
        })
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// The part an edge counts toward: that of its higher endpoint, so the
    /// single links attaching face and hands to the body belong to the
    /// attached part.
    pub fn edge_part(edge: (usize, usize)) -> Part {
        Part::of_index(edge.0.max(edge.1))
    }

    pub fn edges_for_part(&self, part: Part) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied().filter(move |&e| SkeletonTree::edge_part(e) == part)
    }
}

// ---------------------------------------------------------------------------
// Scale distribution.
// ---------------------------------------------------------------------------

/// Histogram of per-instance scale (mean length of a part's skeleton edges).
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleHistogram {
    pub part: Part,
    pub bin_width: f64,
    /// `counts[i]` covers `[i·bin_width, (i+1)·bin_width)`.
    pub counts: Vec<u64>,
    pub samples: usize,
    pub mean: f64,
}

/// Per-part scale distributions over a dataset.
///
/// An instance contributes one sample per part: the mean length of that
/// part's skeleton edges whose endpoints are both labeled. Instances with
/// no such edge are excluded from that part's histogram.
pub fn scale_distribution(
    ds: &Dataset,
    tree: &SkeletonTree,
    parts: &[Part],
    bin_width: f64,
) -> Result<Vec<ScaleHistogram>, StatsError> {
    if !(bin_width > 0.0) || !bin_width.is_finite() {
        return Err(StatsError::BadInput(format!("bin width must be positive, got {bin_width}")));
    }
    let mut out = Vec::with_capacity(parts.len());
    for &part in parts {
        let edges: Vec<(usize, usize)> = tree.edges_for_part(part).collect();
        let mut counts: Vec<u64> = Vec::new();
        let mut samples = 0usize;
        let mut sum = 0.0;
        for inst in &ds.instances {
            let lengths: Vec<f64> = edges
                .iter()
                .filter(|&&(a, b)| {
                    inst.keypoints[a].is_labeled() && inst.keypoints[b].is_labeled()
                })
                .map(|&(a, b)| inst.keypoints[a].dist(&inst.keypoints[b]))
                .collect();
            if lengths.is_empty() {
                continue;
            }
            let scale = lengths.iter().sum::<f64>() / lengths.len() as f64;
            let bin = (scale / bin_width).floor() as usize;
            if counts.len() <= bin {
                counts.resize(bin + 1, 0);
            }
            counts[bin] += 1;
            samples += 1;
            sum += scale;
        }
        let mean = if samples == 0 { 0.0 } else { sum / samples as f64 };
        out.push(ScaleHistogram { part, bin_width, counts, samples, mean });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Hand pose normalization and gesture clustering.
// ---------------------------------------------------------------------------

/// Hand keypoints per hand (wrist + 5 fingers × 4 joints).
pub const HAND_POINTS: usize = 21;

/// Fingertip indices within a hand slice.
pub const FINGERTIPS: [usize; 5] = [4, 8, 12, 16, 20];

/// Map one hand (21 keypoints, wrist first) into a canonical frame:
/// wrist at the origin, the wrist→middle-finger-base bone rotated onto +y
/// and scaled to length 1. Output is the 42-vector `[x0, y0, x1, y1, ...]`;
/// unlabeled keypoints map to `(0, 0)`.
///
/// The frame is defined by keypoints 0 (wrist) and 9 (middle-finger base);
/// both must be labeled and distinct, otherwise no canonical frame exists.
pub fn normalize_hand_pose(hand: &[Keypoint]) -> Result<Vec<f64>, StatsError> {
    if hand.len() != HAND_POINTS {
        return Err(StatsError::BadInput(format!(
            "a hand has {HAND_POINTS} keypoints, got {}",
            hand.len()
        )));
    }
    let (wrist, base) = (hand[0], hand[9]);
    if !wrist.is_labeled() || !base.is_labeled() {
        return Err(StatsError::BadInput(
            "wrist and middle-finger base must both be labeled".into(),
        ));
    }
    let (vx, vy) = (base.x - wrist.x, base.y - wrist.y);
    let norm = (vx * vx + vy * vy).sqrt();
    if !(norm > 1e-9) {
        return Err(StatsError::BadInput(
            "wrist and middle-finger base coincide; no orientation".into(),
        ));
    }
    // Proper rotation sending v to +y, then uniform 1/|v| scaling:
    // R = [[vy, -vx], [vx, vy]] / |v|.
    let mut out = Vec::with_capacity(2 * HAND_POINTS);
    for k in hand {
        if !k.is_labeled() {
            out.extend([0.0, 0.0]);
            continue;
        }
        let (dx, dy) = (k.x - wrist.x, k.y - wrist.y);
        out.push((vy * dx - vx * dy) / (norm * norm));
        out.push((vx * dx + vy * dy) / (norm * norm));
    }
    Ok(out)
}

/// Coarse gesture classes, ranked by how far the fingertips sit from the
/// wrist in the canonical hand frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GestureLabel {
    Fist,
    Palm,
    Others,
}

impl GestureLabel {
    pub fn name(self) -> &'static str {
        match self {
            GestureLabel::Fist => "fist",
            GestureLabel::Palm => "palm",
            GestureLabel::Others => "others",
        }
    }
}

#[derive(Debug, Clone)]
pub struct GestureClusters {
    /// Cluster index per input pose.
    pub assignments: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    /// Label per cluster. Among occupied clusters the smallest mean
    /// fingertip extent is `Fist` and the largest `Palm` (everything between
    /// `Others`); with a single occupied cluster everything is `Fist`.
    pub labels: Vec<GestureLabel>,
}

/// k-means over canonical hand poses, deterministic and order-invariant.
///
/// Seeding is k-means++ driven by a ChaCha stream from `seed`; Lloyd
/// iterations run to convergence (at most 100). Input order cannot matter:
/// clustering runs on a lexicographically sorted copy of the poses, and the
/// original poses are then assigned to the nearest resulting center (lowest
/// index on ties).
pub fn cluster_gestures(
    poses: &[Vec<f64>],
    k: usize,
    seed: u64,
) -> Result<GestureClusters, StatsError> {
    if poses.is_empty() {
        return Err(StatsError::BadInput("no poses to cluster".into()));
    }
    if k == 0 || k > poses.len() {
        return Err(StatsError::BadInput(format!(
            "k must lie in 1..={}, got {k}",
            poses.len()
        )));
    }
    let dim = 2 * HAND_POINTS;
    if poses.iter().any(|p| p.len() != dim) {
        return Err(StatsError::BadInput(format!("poses must have {dim} coordinates")));
    }
    if poses.iter().flatten().any(|v| !v.is_finite()) {
        return Err(StatsError::BadInput("poses must be finite".into()));
    }

    let mut canon: Vec<&Vec<f64>> = poses.iter().collect();
    canon.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let d2 = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    };

    // k-means++ seeding on the canonical order.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(canon[rng.gen_range(0..canon.len())].clone());
    let mut dist: Vec<f64> = canon.iter().map(|p| d2(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut idx = canon.len() - 1;
            for (i, &w) in dist.iter().enumerate() {
                if target < w {
                    idx = i;
                    break;
                }
                target -= w;
            }
            idx
        } else {
            rng.gen_range(0..canon.len())
        };
        centers.push(canon[next].clone());
        for (p, d) in canon.iter().zip(dist.iter_mut()) {
            *d = d.min(d2(p, centers.last().unwrap()));
        }
    }

    let nearest = |p: &[f64], centers: &[Vec<f64>]| -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, c) in centers.iter().enumerate() {
            let d = d2(p, c);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    };

    // Lloyd iterations on the canonical order.
    let mut assign: Vec<usize> = canon.iter().map(|p| nearest(p, &centers)).collect();
    for _ in 0..100 {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut ns = vec![0usize; k];
        for (p, &a) in canon.iter().zip(&assign) {
            ns[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p.iter()) {
                *s += v;
            }
        }
        for (c, (s, n)) in centers.iter_mut().zip(sums.into_iter().zip(ns)) {
            if n > 0 {
                *c = s.into_iter().map(|v| v / n as f64).collect();
            }
            // Empty clusters keep their center.
        }
        let next: Vec<usize> = canon.iter().map(|p| nearest(p, &centers)).collect();
        if next == assign {
            break;
        }
        assign = next;
    }

    // Assign the *original* poses.
    let assignments: Vec<usize> = poses.iter().map(|p| nearest(p, &centers)).collect();

    // Name occupied clusters by mean fingertip extent.
    let mut extent = vec![0.0f64; k];
    let mut members = vec![0usize; k];
    for (p, &a) in poses.iter().zip(&assignments) {
        let mean_tip = FINGERTIPS
            .iter()
            .map(|&t| (p[2 * t] * p[2 * t] + p[2 * t + 1] * p[2 * t + 1]).sqrt())
            .sum::<f64>()
            / FINGERTIPS.len() as f64;
        extent[a] += mean_tip;
        members[a] += 1;
    }
    let occupied: Vec<usize> = (0..k).filter(|&i| members[i] > 0).collect();
    let mut labels = vec![GestureLabel::Others; k];
    if occupied.len() == 1 {
        labels[occupied[0]] = GestureLabel::Fist;
    } else {
        let rank = |i: usize| extent[i] / members[i] as f64;
        let fist = occupied
            .iter()
            .copied()
            .min_by(|&a, &b| rank(a).total_cmp(&rank(b)))
            .unwrap();
        let palm = occupied
            .iter()
            .copied()
            .max_by(|&a, &b| rank(a).total_cmp(&rank(b)))
            .unwrap();
        labels[fist] = GestureLabel::Fist;
        labels[palm] = GestureLabel::Palm;
    }

    Ok(GestureClusters { assignments, centers, labels })
}

// ---------------------------------------------------------------------------
// Annotation counts.
// ---------------------------------------------------------------------------

/// Raw tallies over a dataset. All counts are additive: concatenating two
/// datasets sums their counts field by field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AnnotationCounts {
    pub images: usize,
    pub instances: usize,
    pub face_boxes: usize,
    pub lefthand_boxes: usize,
    pub righthand_boxes: usize,
    pub foot_valid: usize,
    /// Labeled keypoints per part, in [`Part::ALL`] order.
    pub keypoints: [usize; 5],
    pub total_keypoints: usize,
}

impl AnnotationCounts {
    /// Labeled-keypoint count of one part.
    pub fn keypoints_for(&self, part: Part) -> usize {
        let idx = Part::ALL.iter().position(|&p| p == part).unwrap();
        self.keypoints[idx]
    }

    /// Valid hand boxes, either side.
    pub fn hand_boxes(&self) -> usize {
        self.lefthand_boxes + self.righthand_boxes
    }
}

pub fn count_annotations(ds: &Dataset) -> AnnotationCounts {
    let mut c = AnnotationCounts { images: ds.images.len(), ..Default::default() };
    for inst in &ds.instances {
        c.instances += 1;
        c.face_boxes += inst.face_box.valid as usize;
        c.lefthand_boxes += inst.lefthand_box.valid as usize;
        c.righthand_boxes += inst.righthand_box.valid as usize;
        c.foot_valid += inst.foot_valid as usize;
        for (i, part) in Part::ALL.into_iter().enumerate() {
            let n = inst.keypoints.labeled_count(part);
            c.keypoints[i] += n;
            c.total_keypoints += n;
        }
    }
    c
}
