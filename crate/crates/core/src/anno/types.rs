use super::layout::{Part, NUM_KEYPOINTS};
use crate::eval::SigmaTable;

/// Visibility flag of a single keypoint.
///
/// `Unlabeled` points carry no positional information and are excluded from
/// every metric; `Occluded` and `Visible` both count as labeled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Visibility {
    #[default]
    Unlabeled,
    Occluded,
    Visible,
}

impl Visibility {
    /// Parse the interchange integer flag; values outside `{0, 1, 2}` are
    /// rejected.
    pub fn from_flag(v: i64) -> Option<Visibility> {
        match v {
            0 => Some(Visibility::Unlabeled),
            1 => Some(Visibility::Occluded),
            2 => Some(Visibility::Visible),
            _ => None,
        }
    }

    pub fn as_flag(self) -> u8 {
        match self {
            Visibility::Unlabeled => 0,
            Visibility::Occluded => 1,
            Visibility::Visible => 2,
        }
    }

    /// True for `Occluded` and `Visible` (i.e. `v > 0`).
    pub fn is_labeled(self) -> bool {
        !matches!(self, Visibility::Unlabeled)
    }
}

/// A single 2D keypoint with a visibility flag.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub v: Visibility,
}

impl Keypoint {
    pub fn new(x: f64, y: f64, v: Visibility) -> Keypoint {
        Keypoint { x, y, v }
    }

    /// Labeled keypoint marked visible.
    pub fn visible(x: f64, y: f64) -> Keypoint {
        Keypoint::new(x, y, Visibility::Visible)
    }

    pub fn is_labeled(&self) -> bool {
        self.v.is_labeled()
    }

    pub fn dist(&self, other: &Keypoint) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// The full 133-point set of one instance, in the fixed [`Part`] layout.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSet(Vec<Keypoint>);

impl KeypointSet {
    /// All points unlabeled at the origin.
    pub fn empty() -> KeypointSet {
        KeypointSet(vec![Keypoint::default(); NUM_KEYPOINTS])
    }

    /// Wrap an existing 133-point vector. Panics on any other length; use
    /// the parser for untrusted input.
    pub fn from_vec(points: Vec<Keypoint>) -> KeypointSet {
        assert_eq!(points.len(), NUM_KEYPOINTS, "a KeypointSet holds exactly {NUM_KEYPOINTS} points");
        KeypointSet(points)
    }

    pub fn as_slice(&self) -> &[Keypoint] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [Keypoint] {
        &mut self.0
    }

    /// The keypoints of one part, as a sub-slice in layout order.
    pub fn part(&self, part: Part) -> &[Keypoint] {
        &self.0[part.range()]
    }

    pub fn part_mut(&mut self, part: Part) -> &mut [Keypoint] {
        &mut self.0[part.range()]
    }

    /// Number of labeled (`v > 0`) keypoints in `part`.
    pub fn labeled_count(&self, part: Part) -> usize {
        self.part(part).iter().filter(|k| k.is_labeled()).count()
    }
}

impl std::ops::Index<usize> for KeypointSet {
    type Output = Keypoint;

    fn index(&self, idx: usize) -> &Keypoint {
        &self.0[idx]
    }
}

impl std::ops::IndexMut<usize> for KeypointSet {
    fn index_mut(&mut self, idx: usize) -> &mut Keypoint {
        &mut self.0[idx]
    }
}

/// Axis-aligned box in `(x, y, w, h)` form with a validity flag.
///
/// Invalid boxes keep their (meaningless) coordinates but gate their part's
/// keypoints: an invalid part contributes nothing to training targets or
/// metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub valid: bool,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox { x, y, w, h, valid: true }
    }

    /// The canonical invalid box (all-zero, `valid = false`).
    pub fn invalid() -> BBox {
        BBox { x: 0.0, y: 0.0, w: 0.0, h: 0.0, valid: false }
    }

    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1 - x0, y1 - y0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    /// Intersection-over-union with `other`; 0 when either box is empty.
    pub fn iou(&self, other: &BBox) -> f64 {
        let ix = (self.x + self.w).min(other.x + other.w) - self.x.max(other.x);
        let iy = (self.y + self.h).min(other.y + other.h) - self.y.max(other.y);
        if ix <= 0.0 || iy <= 0.0 {
            return 0.0;
        }
        let inter = ix * iy;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// Scale width and height by `factor` about the box center.
    pub fn padded(&self, factor: f64) -> BBox {
        let (cx, cy) = self.center();
        let w = self.w * factor;
        let h = self.h * factor;
        BBox { x: cx - w / 2.0, y: cy - h / 2.0, w, h, valid: self.valid }
    }

    /// Clip to the rectangle `[0, w] x [0, h]`. The result may be empty.
    pub fn clamped(&self, bound_w: f64, bound_h: f64) -> BBox {
        let x0 = self.x.max(0.0);
        let y0 = self.y.max(0.0);
        let x1 = (self.x + self.w).min(bound_w).max(x0);
        let y1 = (self.y + self.h).min(bound_h).max(y0);
        BBox { x: x0, y: y0, w: x1 - x0, h: y1 - y0, valid: self.valid }
    }

    /// True when `(x, y)` lies inside the half-open extent of the box.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x && x < self.x + self.w && y >= self.y && y < self.y + self.h
    }
}

/// The three part boxes an instance carries besides its person box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoxKind {
    Face,
    LeftHand,
    RightHand,
}

impl BoxKind {
    pub const ALL: [BoxKind; 3] = [BoxKind::Face, BoxKind::LeftHand, BoxKind::RightHand];

    pub fn name(self) -> &'static str {
        match self {
            BoxKind::Face => "face",
            BoxKind::LeftHand => "lefthand",
            BoxKind::RightHand => "righthand",
        }
    }

    /// The keypoint slice this box gates.
    pub fn part(self) -> Part {
        match self {
            BoxKind::Face => Part::Face,
            BoxKind::LeftHand => Part::LeftHand,
            BoxKind::RightHand => Part::RightHand,
        }
    }

    pub fn gt_box(self, inst: &PersonInstance) -> &BBox {
        match self {
            BoxKind::Face => &inst.face_box,
            BoxKind::LeftHand => &inst.lefthand_box,
            BoxKind::RightHand => &inst.righthand_box,
        }
    }
}

/// Minimal bounding rectangle of the labeled (`v > 0`) keypoints in `kps`,
/// or `None` when no keypoint is labeled.
///
/// This is the defining construction of the face and hand boxes.
pub fn minimal_rect(kps: &[Keypoint]) -> Option<BBox> {
    let mut bounds: Option<(f64, f64, f64, f64)> = None;
    for k in kps.iter().filter(|k| k.is_labeled()) {
        bounds = Some(match bounds {
            None => (k.x, k.y, k.x, k.y),
            Some((x0, y0, x1, y1)) => (x0.min(k.x), y0.min(k.y), x1.max(k.x), y1.max(k.y)),
        });
    }
    bounds.map(|(x0, y0, x1, y1)| BBox::from_corners(x0, y0, x1, y1))
}

/// One entry of the dataset image table.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageInfo {
    pub id: u64,
    pub width: u32,
    pub height: u32,
    pub file_name: String,
    /// Unknown interchange keys, preserved verbatim across a read/write
    /// round trip.
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl ImageInfo {
    pub fn new(id: u64, width: u32, height: u32, file_name: &str) -> ImageInfo {
        ImageInfo { id, width, height, file_name: file_name.to_string(), extra: Default::default() }
    }
}

/// One annotated (or predicted) person.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonInstance {
    pub id: u64,
    pub image_id: u64,
    pub person_box: BBox,
    pub face_box: BBox,
    pub lefthand_box: BBox,
    pub righthand_box: BBox,
    /// Gates the six foot keypoints; feet have no box of their own.
    pub foot_valid: bool,
    pub keypoints: KeypointSet,
    /// Segment area for ground truth (falls back to the person-box area);
    /// predictions inherit the detection-box area.
    pub area: f64,
    /// Detection confidence; `None` for ground truth.
    pub score: Option<f64>,
    /// Unknown interchange keys, preserved verbatim.
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl PersonInstance {
    /// A blank instance with the given identity and person box; everything
    /// else unlabeled/invalid.
    pub fn new(id: u64, image_id: u64, person_box: BBox) -> PersonInstance {
        PersonInstance {
            id,
            image_id,
            person_box,
            face_box: BBox::invalid(),
            lefthand_box: BBox::invalid(),
            righthand_box: BBox::invalid(),
            foot_valid: false,
            keypoints: KeypointSet::empty(),
            area: person_box.area(),
            score: None,
            extra: Default::default(),
        }
    }

    /// Validity flag of one part. The body is always "valid" (person boxes
    /// carry no flag); feet use `foot_valid`; face and hands use their box.
    pub fn part_valid(&self, part: Part) -> bool {
        match part {
            Part::Body => true,
            Part::Foot => self.foot_valid,
            Part::Face => self.face_box.valid,
            Part::LeftHand => self.lefthand_box.valid,
            Part::RightHand => self.righthand_box.valid,
        }
    }

    /// Enforce the labeling contract in both directions: keypoints of an
    /// invalid part are masked to `v = 0` (and zeroed), and a "valid" part
    /// without a single labeled keypoint is demoted to invalid.
    ///
    /// After this, `part_valid(p)` ⇔ the part has at least one labeled
    /// keypoint (for every gated part).
    pub fn normalize_validity(&mut self) {
        for part in [Part::Foot, Part::Face, Part::LeftHand, Part::RightHand] {
            let valid = self.part_valid(part) && self.keypoints.labeled_count(part) > 0;
            if !valid {
                for k in self.keypoints.part_mut(part) {
                    *k = Keypoint::default();
                }
            }
            match part {
                Part::Foot => self.foot_valid = valid,
                Part::Face => self.face_box.valid = valid,
                Part::LeftHand => self.lefthand_box.valid = valid,
                Part::RightHand => self.righthand_box.valid = valid,
                Part::Body => unreachable!(),
            }
        }
    }

    /// Structural checks applied before writing: non-negative box extents,
    /// positive ground-truth area, and validity/visibility consistency.
    pub fn check(&self) -> Result<(), String> {
        for (name, b) in [
            ("bbox", &self.person_box),
            ("face_box", &self.face_box),
            ("lefthand_box", &self.lefthand_box),
            ("righthand_box", &self.righthand_box),
        ] {
            if !(b.w >= 0.0 && b.h >= 0.0) {
                return Err(format!("{name} has negative extent ({} x {})", b.w, b.h));
            }
        }
        if self.score.is_none() && !(self.area > 0.0) {
            return Err(format!("ground-truth area must be positive, got {}", self.area));
        }
        for part in [Part::Foot, Part::Face, Part::LeftHand, Part::RightHand] {
            let labeled = self.keypoints.labeled_count(part);
            if self.part_valid(part) && labeled == 0 {
                return Err(format!("{} is marked valid but has no labeled keypoints", part.name()));
            }
            if !self.part_valid(part) && labeled > 0 {
                return Err(format!("{} is marked invalid but has {labeled} labeled keypoints", part.name()));
            }
        }
        Ok(())
    }
}

/// A set of images plus the instances annotated (or predicted) on them.
///
/// Instances are kept sorted by `(image_id, id)`; the parser establishes the
/// order and the writer re-asserts it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub images: Vec<ImageInfo>,
    pub instances: Vec<PersonInstance>,
    /// Per-keypoint OKS falloff constants, when attached (they are shipped
    /// separately from annotation files).
    pub sigma_table: Option<SigmaTable>,
    /// Unknown top-level interchange keys (`info`, `licenses`, ...).
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl Dataset {
    pub fn image(&self, id: u64) -> Option<&ImageInfo> {
        self.images.iter().find(|im| im.id == id)
    }

    /// Instances of one image, in id order.
    pub fn instances_for_image(&self, image_id: u64) -> impl Iterator<Item = &PersonInstance> {
        self.instances.iter().filter(move |i| i.image_id == image_id)
    }

    pub fn sort(&mut self) {
        self.images.sort_by_key(|im| im.id);
        self.instances.sort_by_key(|i| (i.image_id, i.id));
    }

    /// Report instances whose keypoints stray outside their image extent
    /// while labeled. Out-of-range points can occur legitimately in
    /// predictions mapped back to image coordinates, so this is a lint, not
    /// a hard error.
    pub fn out_of_bounds_report(&self) -> Vec<(u64, usize)> {
        let mut offenders = Vec::new();
        for inst in &self.instances {
            let Some(im) = self.image(inst.image_id) else { continue };
            let (w, h) = (f64::from(im.width), f64::from(im.height));
            let n = inst
                .keypoints
                .as_slice()
                .iter()
                .filter(|k| k.is_labeled() && !(k.x >= 0.0 && k.x <= w && k.y >= 0.0 && k.y <= h))
                .count();
            if n > 0 {
                offenders.push((inst.id, n));
            }
        }
        offenders
    }
}
