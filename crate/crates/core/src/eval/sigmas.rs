//! Per-keypoint OKS falloff constants and their derivation from
//! multi-annotator data.

use super::EvalError;
use crate::anno::{Keypoint, Part, NUM_KEYPOINTS};

/// Values below this are clamped on construction. A zero constant would make
/// OKS collapse to a delta function; derivation legitimately yields 0 when
/// annotators agree exactly, so the floor lives here rather than there.
pub const SIGMA_FLOOR: f64 = 1e-3;

/// The published COCO falloff constants for the 17 body keypoints, in layout
/// order.
pub const COCO_BODY_SIGMAS: [f64; 17] = [
    0.026, 0.025, 0.025, 0.035, 0.035, 0.079, 0.079, 0.072, 0.072, 0.062, 0.062, 0.107, 0.107,
    0.087, 0.087, 0.089, 0.089,
];

/// Falloff constant per keypoint, in the 133-point layout order.
///
/// Only the body slice has published values; foot, face and hand constants
/// must be supplied (from a config file or [`derive_sigmas`]) — there is no
/// invented default for them.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaTable {
    k: Vec<f64>,
}

impl SigmaTable {
    /// Build from 133 values; entries below [`SIGMA_FLOOR`] are clamped.
    /// Non-finite or negative entries are rejected.
    pub fn from_values(values: Vec<f64>) -> Result<SigmaTable, EvalError> {
        if values.len() != NUM_KEYPOINTS {
            return Err(EvalError::SigmaConfig(format!(
                "expected {NUM_KEYPOINTS} values, got {}",
                values.len()
            )));
        }
        let mut k = Vec::with_capacity(NUM_KEYPOINTS);
        for (i, v) in values.into_iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(EvalError::SigmaConfig(format!("value {i} is {v}, expected a finite non-negative number")));
            }
            k.push(v.max(SIGMA_FLOOR));
        }
        Ok(SigmaTable { k })
    }

    /// Same constant everywhere. Handy for synthetic fixtures.
    pub fn uniform(k: f64) -> SigmaTable {
        SigmaTable::from_values(vec![k; NUM_KEYPOINTS]).expect("uniform table is well-formed")
    }

    /// COCO body values plus one constant per remaining part.
    pub fn with_part_constants(foot: f64, face: f64, hand: f64) -> SigmaTable {
        let mut v = vec![0.0; NUM_KEYPOINTS];
        v[Part::Body.range()].copy_from_slice(&COCO_BODY_SIGMAS);
        for i in Part::Foot.range() {
            v[i] = foot;
        }
        for i in Part::Face.range() {
            v[i] = face;
        }
        for i in Part::LeftHand.range().chain(Part::RightHand.range()) {
            v[i] = hand;
        }
        SigmaTable::from_values(v).expect("part-constant table is well-formed")
    }

    /// Falloff constant of keypoint `idx`.
    pub fn k(&self, idx: usize) -> f64 {
        self.k[idx]
    }

    pub fn values(&self) -> &[f64] {
        &self.k
    }

    /// Parse the plain-text config format: 133 whitespace-separated decimals
    /// in layout order (body, foot, face, left hand, right hand). `#`
    /// comments and blank lines are allowed.
    pub fn parse(text: &str) -> Result<SigmaTable, EvalError> {
        let mut values = Vec::with_capacity(NUM_KEYPOINTS);
        for (i, tok) in text
            .lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .flat_map(|l| l.split_whitespace())
            .enumerate()
        {
            let v: f64 = tok.parse().map_err(|_| {
                EvalError::SigmaConfig(format!("token {i} ({tok:?}) is not a number"))
            })?;
            values.push(v);
        }
        SigmaTable::from_values(values)
    }

    /// Render in the config format, one value per line with part headers.
    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        for part in Part::ALL {
            out.push_str(&format!("# {}\n", part.name()));
            for i in part.range() {
                out.push_str(&format!("{}\n", self.k[i]));
            }
        }
        out
    }
}

/// The redundant annotations of one instance: the same keypoint slice marked
/// by several annotators, plus the instance scale used for normalization
/// (e.g. the square root of the relevant box area).
#[derive(Debug, Clone)]
pub struct AnnotatorSet<'a> {
    pub norm: f64,
    pub annotations: Vec<&'a [Keypoint]>,
}

/// Derive per-keypoint falloff constants from multi-annotator data.
///
/// For each keypoint, every instance where at least two annotators labeled
/// it contributes the population variance (per axis, across annotators) of
/// the scale-normalized coordinates; the constant is the square root of the
/// pooled per-axis variances summed over x and y:
///
/// ```text
/// kᵢ² = mean over instances ( σₓ²(i) + σᵧ²(i) )
/// ```
///
/// which equals the RMS radial spread of the annotator cloud. Two annotators
/// offset by ±δ along one axis at scale `s` therefore give `k = δ/s`
/// exactly, and exact agreement gives `k = 0` (the table constructor floors
/// it afterwards).
///
/// All annotation slices must share one length; every keypoint must receive
/// data from at least one instance.
pub fn derive_sigmas(instances: &[AnnotatorSet]) -> Result<Vec<f64>, EvalError> {
    let n = instances
        .first()
        .and_then(|set| set.annotations.first())
        .map(|a| a.len())
        .ok_or_else(|| EvalError::Derive("no instances provided".into()))?;

    let mut sum_var = vec![0.0f64; n];
    let mut num_inst = vec![0usize; n];

    for (idx, set) in instances.iter().enumerate() {
        if set.annotations.len() < 2 {
            return Err(EvalError::Derive(format!(
                "instance {idx} has {} annotator(s), need at least 2",
                set.annotations.len()
            )));
        }
        if !(set.norm > 0.0) {
            return Err(EvalError::Derive(format!("instance {idx} has non-positive norm {}", set.norm)));
        }
        for a in &set.annotations {
            if a.len() != n {
                return Err(EvalError::Derive(format!(
                    "instance {idx}: annotation length {} does not match {n}",
                    a.len()
                )));
            }
        }

        for kp in 0..n {
            let pts: Vec<(f64, f64)> = set
                .annotations
                .iter()
                .filter(|a| a[kp].is_labeled())
                .map(|a| (a[kp].x / set.norm, a[kp].y / set.norm))
                .collect();
            if pts.len() < 2 {
                continue;
            }
            let m = pts.len() as f64;
            let (mx, my) = pts.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
            let (mx, my) = (mx / m, my / m);
            // Population (1/n) variance: the annotator pool is the whole
            // population of interest, not a sample from a larger one.
            let (vx, vy) = pts.iter().fold((0.0, 0.0), |acc, p| {
                (acc.0 + (p.0 - mx).powi(2), acc.1 + (p.1 - my).powi(2))
            });
            sum_var[kp] += (vx + vy) / m;
            num_inst[kp] += 1;
        }
    }

    let mut out = Vec::with_capacity(n);
    for kp in 0..n {
        if num_inst[kp] == 0 {
            return Err(EvalError::Derive(format!(
                "keypoint {kp} was never labeled by two or more annotators"
            )));
        }
        out.push((sum_var[kp] / num_inst[kp] as f64).sqrt());
    }
    Ok(out)
}
