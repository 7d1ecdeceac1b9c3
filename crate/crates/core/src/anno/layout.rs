use std::ops::Range;

/// Total number of keypoints per instance.
pub const NUM_KEYPOINTS: usize = 133;

/// The five keypoint groups, in layout order.
///
/// Index layout of the 133-point set:
///
/// | part       | indices   | count | order                                      |
/// |------------|-----------|-------|--------------------------------------------|
/// | body       | 0..17     | 17    | COCO body order (nose, eyes, ears, ...)    |
/// | foot       | 17..23    | 6     | L big toe, L small toe, L heel, then right |
/// | face       | 23..91    | 68    | 68-landmark order (jaw, brows, nose, eyes, lips) |
/// | left hand  | 91..112   | 21    | wrist first, then thumb..pinky, 4 joints each |
/// | right hand | 112..133  | 21    | same as left                               |
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Part {
    Body,
    Foot,
    Face,
    LeftHand,
    RightHand,
}

impl Part {
    /// All parts in layout order.
    pub const ALL: [Part; 5] = [
        Part::Body,
        Part::Foot,
        Part::Face,
        Part::LeftHand,
        Part::RightHand,
    ];

    /// Index range of this part within the 133-point layout.
    pub fn range(self) -> Range<usize> {
        match self {
            Part::Body => 0..17,
            Part::Foot => 17..23,
            Part::Face => 23..91,
            Part::LeftHand => 91..112,
            Part::RightHand => 112..133,
        }
    }

    /// Number of keypoints in this part.
    pub fn len(self) -> usize {
        self.range().len()
    }

    pub fn name(self) -> &'static str {
        match self {
            Part::Body => "body",
            Part::Foot => "foot",
            Part::Face => "face",
            Part::LeftHand => "lefthand",
            Part::RightHand => "righthand",
        }
    }

    /// The part that owns global keypoint index `idx`.
    ///
    /// Panics if `idx >= NUM_KEYPOINTS`.
    pub fn of_index(idx: usize) -> Part {
        match idx {
            0..=16 => Part::Body,
            17..=22 => Part::Foot,
            23..=90 => Part::Face,
            91..=111 => Part::LeftHand,
            112..=132 => Part::RightHand,
            _ => panic!("keypoint index {idx} out of range (0..{NUM_KEYPOINTS})"),
        }
    }
}

/// COCO body keypoint names, in layout order (indices 0..17).
pub const BODY_KEYPOINT_NAMES: [&str; 17] = [
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
];
