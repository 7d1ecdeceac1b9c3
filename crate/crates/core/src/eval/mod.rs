//! Keypoint and box evaluation.
//!
//! The central metric is OKS (object keypoint similarity),
//!
//! ```text
//! OKS = Σᵢ exp(−dᵢ² / (2 s² kᵢ²)) · [vᵢ > 0]  /  Σᵢ [vᵢ > 0]
//! ```
//!
//! where `dᵢ` is the Euclidean distance between prediction and ground truth,
//! `s² ` the instance area and `kᵢ` the per-keypoint falloff constant from the
//! [`SigmaTable`]. Only labeled ground-truth keypoints (`v > 0`) contribute;
//! a ground truth with no labeled keypoint in the evaluated part is skipped
//! (treated as an ignore region). The constants are used exactly as
//! configured — no hidden rescaling.
//!
//! [`evaluate`] runs greedy matching per image (detections in descending
//! score order, each ground truth matched at most once per threshold) and
//! averages 101-point interpolated precision over the OKS thresholds
//! 0.50:0.05:0.95, i.e. the familiar mAP/mAR protocol, with medium/large
//! splits by person area.

mod boxdet;
mod evaluate;
mod metrics;
mod oks;
mod sigmas;

pub use boxdet::{box_detection_eval, BoxDetEval, BoxDetection};
pub use evaluate::{
    default_thresholds, evaluate, match_instances, AreaRange, EvalConfig, EvalReport, MatchRecord,
    PartEval,
};
pub use metrics::{epe, hand_norm, inter_ocular, nme};
pub use oks::{oks, oks_with_areas};
pub use sigmas::{derive_sigmas, AnnotatorSet, SigmaTable, COCO_BODY_SIGMAS, SIGMA_FLOOR};

use crate::anno::Part;
use thiserror::Error;

/// The slices a report row can cover. `Hand` spans both hands; `WholeBody`
/// spans all 133 keypoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EvalPart {
    Body,
    Foot,
    Face,
    Hand,
    WholeBody,
}

impl EvalPart {
    /// The standard report order.
    pub const ALL: [EvalPart; 5] = [
        EvalPart::Body,
        EvalPart::Foot,
        EvalPart::Face,
        EvalPart::Hand,
        EvalPart::WholeBody,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EvalPart::Body => "body",
            EvalPart::Foot => "foot",
            EvalPart::Face => "face",
            EvalPart::Hand => "hand",
            EvalPart::WholeBody => "wholebody",
        }
    }

    pub fn from_name(name: &str) -> Option<EvalPart> {
        Some(match name {
            "body" => EvalPart::Body,
            "foot" => EvalPart::Foot,
            "face" => EvalPart::Face,
            "hand" => EvalPart::Hand,
            "wholebody" => EvalPart::WholeBody,
            _ => return None,
        })
    }

    /// The layout slices covered by this report part.
    pub fn slices(self) -> &'static [Part] {
        match self {
            EvalPart::Body => &[Part::Body],
            EvalPart::Foot => &[Part::Foot],
            EvalPart::Face => &[Part::Face],
            EvalPart::Hand => &[Part::LeftHand, Part::RightHand],
            EvalPart::WholeBody => &[
                Part::Body,
                Part::Foot,
                Part::Face,
                Part::LeftHand,
                Part::RightHand,
            ],
        }
    }
}

/// Which area the OKS scale `s²` is taken from.
///
/// Keypoint falloff should match the spatial extent of what is being
/// localized: a hand occupies a small fraction of the person box, so judging
/// hand keypoints against the person scale would be far too lenient. The
/// default therefore uses the part's own box area for face and hands and the
/// person area for body, feet and the whole-body slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AreaSource {
    /// Face → face-box area, hands → each hand's box area, everything else →
    /// person area.
    #[default]
    PartBox,
    /// Person area for every slice.
    PersonBox,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no sigma table attached to the ground-truth dataset")]
    MissingSigmas,

    #[error("detection {dt_id}: image_id {image_id} has no images entry in the ground truth")]
    UnknownImage { dt_id: u64, image_id: u64 },

    #[error("duplicate detection id {id} on image {image_id}")]
    DuplicateDetection { id: u64, image_id: u64 },

    #[error("invalid evaluation config: {0}")]
    BadConfig(String),

    #[error("sigma config: {0}")]
    SigmaConfig(String),

    #[error("sigma derivation: {0}")]
    Derive(String),
}
