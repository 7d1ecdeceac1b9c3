//! COCO-style JSON interchange.
//!
//! A file is one JSON object with `images`, `annotations` and (optionally)
//! `categories` plus arbitrary extra keys. Each annotation carries:
//!
//! - `bbox` `[x, y, w, h]` — the person box; `area`; `score` (predictions only);
//! - `keypoints` — 17 body triplets `[x, y, v, ...]`, or 23 triplets with the
//!   feet fused at the tail (both accepted on read; see [`FootForm`] for the
//!   writer's choice);
//! - `foot_kpts` (6), `face_kpts` (68), `lefthand_kpts` (21),
//!   `righthand_kpts` (21) — flat triplet arrays;
//! - `face_box`, `lefthand_box`, `righthand_box` — part boxes as `[x, y, w, h]`;
//! - `foot_valid`, `face_valid`, `lefthand_valid`, `righthand_valid` —
//!   booleans (0/1 integers accepted).
//!
//! On load, keypoints of parts whose validity flag is false (or whose box is
//! missing) are masked to `v = 0`, and a part flagged valid without a single
//! labeled keypoint is demoted to invalid, so validity and visibility are
//! consistent in both directions afterwards. Out-of-range visibility flags
//! and wrong array lengths are schema errors naming the annotation.
//!
//! The writer emits the separate-key form by default (feet can instead be
//! fused into `keypoints`, the older body-file convention), orders images by
//! id and annotations by `(image_id, id)`, rounds coordinates to two decimals
//! (matching the release convention) and preserves unknown keys. Parsing what
//! it wrote yields a structurally equal dataset, and `write ∘ parse` is a
//! fixed point on canonical files.

use serde::Deserialize;
use serde_json::{json, Map, Value};

use super::layout::{Part, BODY_KEYPOINT_NAMES};
use super::types::{BBox, Dataset, ImageInfo, Keypoint, KeypointSet, PersonInstance, Visibility};
use super::AnnoError;

/// Boolean that tolerates 0/1 integers, as found in some release files.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(untagged)]
enum Flag {
    Bool(bool),
    Int(i64),
}

impl Flag {
    fn as_bool(self) -> bool {
        match self {
            Flag::Bool(b) => b,
            Flag::Int(i) => i != 0,
        }
    }
}

impl Default for Flag {
    fn default() -> Flag {
        Flag::Bool(false)
    }
}

#[derive(Deserialize)]
struct RawDataset {
    #[serde(default)]
    images: Vec<RawImage>,
    #[serde(default)]
    annotations: Vec<RawAnnotation>,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

#[derive(Deserialize)]
struct RawImage {
    id: u64,
    width: Option<u32>,
    height: Option<u32>,
    #[serde(default)]
    file_name: String,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

#[derive(Deserialize)]
struct RawAnnotation {
    id: u64,
    image_id: u64,
    #[serde(default)]
    bbox: Vec<f64>,
    #[serde(default)]
    area: f64,
    #[serde(default)]
    keypoints: Vec<f64>,
    #[serde(default)]
    num_keypoints: Option<i64>,
    #[serde(default)]
    foot_kpts: Vec<f64>,
    #[serde(default)]
    face_kpts: Vec<f64>,
    #[serde(default)]
    lefthand_kpts: Vec<f64>,
    #[serde(default)]
    righthand_kpts: Vec<f64>,
    #[serde(default)]
    foot_valid: Flag,
    #[serde(default)]
    face_valid: Flag,
    #[serde(default)]
    lefthand_valid: Flag,
    #[serde(default)]
    righthand_valid: Flag,
    face_box: Option<Vec<f64>>,
    lefthand_box: Option<Vec<f64>>,
    righthand_box: Option<Vec<f64>>,
    score: Option<f64>,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

/// Parse an interchange file. See the module docs for the normalization
/// applied; the result is sorted by `(image_id, id)`.
pub fn parse_dataset(bytes: &[u8]) -> Result<Dataset, AnnoError> {
    let raw: RawDataset = serde_json::from_slice(bytes).map_err(|e| parse_error(bytes, &e))?;

    let mut images = Vec::with_capacity(raw.images.len());
    for im in raw.images {
        let width = im.width.ok_or_else(|| AnnoError::Schema {
            id: im.id,
            msg: "images entry is missing 'width'".into(),
        })?;
        let height = im.height.ok_or_else(|| AnnoError::Schema {
            id: im.id,
            msg: "images entry is missing 'height'".into(),
        })?;
        images.push(ImageInfo { id: im.id, width, height, file_name: im.file_name, extra: im.extra });
    }

    let mut instances = Vec::with_capacity(raw.annotations.len());
    for ann in raw.annotations {
        let id = ann.id;
        if !images.iter().any(|im| im.id == ann.image_id) {
            return Err(AnnoError::UnknownImage { annotation_id: id, image_id: ann.image_id });
        }
        instances.push(convert_annotation(ann)?);
    }

    let mut ds = Dataset { images, instances, sigma_table: None, extra: raw.extra };
    ds.sort();
    Ok(ds)
}

fn convert_annotation(ann: RawAnnotation) -> Result<PersonInstance, AnnoError> {
    let id = ann.id;
    let schema = |msg: String| AnnoError::Schema { id, msg };

    let person_box = parse_box_array(&ann.bbox)
        .ok_or_else(|| schema(format!("'bbox' must have 4 entries, got {}", ann.bbox.len())))?;

    // Body keypoints, optionally with the feet fused at the tail.
    let (body, fused_feet) = match ann.keypoints.len() {
        51 => (parse_triplets(&ann.keypoints, id, "keypoints")?, None),
        69 => {
            let all = parse_triplets(&ann.keypoints, id, "keypoints")?;
            (all[..17].to_vec(), Some(all[17..].to_vec()))
        }
        n => {
            return Err(schema(format!(
                "'keypoints' must hold 17 or 23 [x, y, v] triplets (51 or 69 numbers), got {n}"
            )))
        }
    };

    let feet = if !ann.foot_kpts.is_empty() {
        parse_part_triplets(&ann.foot_kpts, 6, id, "foot_kpts")?
    } else {
        fused_feet.unwrap_or_else(|| vec![Keypoint::default(); 6])
    };
    let face = if !ann.face_kpts.is_empty() {
        parse_part_triplets(&ann.face_kpts, 68, id, "face_kpts")?
    } else {
        vec![Keypoint::default(); 68]
    };
    let lhand = if !ann.lefthand_kpts.is_empty() {
        parse_part_triplets(&ann.lefthand_kpts, 21, id, "lefthand_kpts")?
    } else {
        vec![Keypoint::default(); 21]
    };
    let rhand = if !ann.righthand_kpts.is_empty() {
        parse_part_triplets(&ann.righthand_kpts, 21, id, "righthand_kpts")?
    } else {
        vec![Keypoint::default(); 21]
    };

    let mut points = Vec::with_capacity(super::layout::NUM_KEYPOINTS);
    points.extend(body);
    points.extend(feet);
    points.extend(face);
    points.extend(lhand);
    points.extend(rhand);

    // A part box is usable only when present with 4 entries; the flag alone
    // cannot make keypoints evaluable without a box.
    let part_box = |raw: &Option<Vec<f64>>, flag: Flag, name: &str| -> Result<BBox, AnnoError> {
        match raw {
            None => Ok(BBox::invalid()),
            Some(v) => {
                let mut b = parse_box_array(v)
                    .ok_or_else(|| AnnoError::Schema {
                        id,
                        msg: format!("'{name}' must have 4 entries, got {}", v.len()),
                    })?;
                b.valid = flag.as_bool();
                Ok(b)
            }
        }
    };

    let area = if ann.area > 0.0 { ann.area } else { person_box.area() };
    if ann.score.is_none() && !(area > 0.0) {
        return Err(schema(format!("ground-truth area must be positive, got {area}")));
    }

    let mut inst = PersonInstance {
        id,
        image_id: ann.image_id,
        person_box,
        face_box: part_box(&ann.face_box, ann.face_valid, "face_box")?,
        lefthand_box: part_box(&ann.lefthand_box, ann.lefthand_valid, "lefthand_box")?,
        righthand_box: part_box(&ann.righthand_box, ann.righthand_valid, "righthand_box")?,
        foot_valid: ann.foot_valid.as_bool(),
        keypoints: KeypointSet::from_vec(points),
        area,
        score: ann.score,
        extra: ann.extra,
    };
    let _ = ann.num_keypoints; // recomputed on write
    inst.normalize_validity();
    Ok(inst)
}

fn parse_box_array(v: &[f64]) -> Option<BBox> {
    if v.len() == 4 {
        Some(BBox::new(v[0], v[1], v[2], v[3]))
    } else {
        None
    }
}

fn parse_triplets(flat: &[f64], id: u64, field: &str) -> Result<Vec<Keypoint>, AnnoError> {
    debug_assert_eq!(flat.len() % 3, 0);
    flat.chunks_exact(3)
        .enumerate()
        .map(|(i, c)| {
            let v = c[2];
            if v.fract() != 0.0 || !(0.0..=2.0).contains(&v) {
                return Err(AnnoError::Schema {
                    id,
                    msg: format!("'{field}' entry {i} has visibility {v}, expected 0, 1 or 2"),
                });
            }
            Ok(Keypoint::new(c[0], c[1], Visibility::from_flag(v as i64).unwrap()))
        })
        .collect()
}

fn parse_part_triplets(flat: &[f64], n: usize, id: u64, field: &str) -> Result<Vec<Keypoint>, AnnoError> {
    if flat.len() != 3 * n {
        return Err(AnnoError::Schema {
            id,
            msg: format!("'{field}' must hold {n} [x, y, v] triplets ({} numbers), got {}", 3 * n, flat.len()),
        });
    }
    parse_triplets(flat, id, field)
}

fn parse_error(bytes: &[u8], e: &serde_json::Error) -> AnnoError {
    let (line, column) = (e.line(), e.column());
    // serde_json reports 1-based line/column; recover the byte offset.
    let mut offset = 0usize;
    let mut seen_lines = 1usize;
    for (i, b) in bytes.iter().enumerate() {
        if seen_lines == line {
            offset = i + column.saturating_sub(1);
            break;
        }
        if *b == b'\n' {
            seen_lines += 1;
            offset = i + 1;
        }
    }
    if line == 1 {
        offset = column.saturating_sub(1);
    }
    AnnoError::Parse { offset: offset.min(bytes.len()), line, column, msg: e.to_string() }
}

/// Round a coordinate to the two-decimal release convention.
fn r2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn triplets_json(kps: &[Keypoint]) -> Value {
    let mut out = Vec::with_capacity(kps.len() * 3);
    for k in kps {
        out.push(json!(r2(k.x)));
        out.push(json!(r2(k.y)));
        out.push(json!(k.v.as_flag()));
    }
    Value::Array(out)
}

fn box_json(b: &BBox) -> Value {
    json!([r2(b.x), r2(b.y), r2(b.w), r2(b.h)])
}

/// Where foot keypoints land when writing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FootForm {
    /// Feet under their own `foot_kpts` key; `keypoints` holds 17 triplets.
    #[default]
    Separate,
    /// Feet appended to `keypoints` (23 triplets), as in body-only releases
    /// that carry foot labels. No `foot_kpts` key is written.
    Fused,
}

/// Serialize a dataset in the canonical separate-key form.
///
/// Instances are validated first (see [`PersonInstance::check`]); a failure
/// aborts the write with an error naming the offending instance.
pub fn write_dataset(ds: &Dataset) -> Result<Vec<u8>, AnnoError> {
    write_dataset_as(ds, FootForm::Separate)
}

/// [`write_dataset`] with an explicit foot convention. Either form parses
/// back to the same dataset.
pub fn write_dataset_as(ds: &Dataset, feet: FootForm) -> Result<Vec<u8>, AnnoError> {
    for inst in &ds.instances {
        inst.check().map_err(|msg| AnnoError::Invalid { id: inst.id, msg })?;
    }

    let mut image_order: Vec<&ImageInfo> = ds.images.iter().collect();
    image_order.sort_by_key(|im| im.id);
    let mut inst_order: Vec<&PersonInstance> = ds.instances.iter().collect();
    inst_order.sort_by_key(|i| (i.image_id, i.id));

    let images: Vec<Value> = image_order
        .into_iter()
        .map(|im| {
            let mut obj = im.extra.clone();
            obj.insert("id".into(), json!(im.id));
            obj.insert("width".into(), json!(im.width));
            obj.insert("height".into(), json!(im.height));
            obj.insert("file_name".into(), json!(im.file_name));
            Value::Object(obj)
        })
        .collect();

    let annotations: Vec<Value> = inst_order
        .into_iter()
        .map(|inst| {
            let kps = &inst.keypoints;
            let mut obj = inst.extra.clone();
            obj.insert("id".into(), json!(inst.id));
            obj.insert("image_id".into(), json!(inst.image_id));
            obj.entry("category_id".to_string()).or_insert(json!(1));
            obj.entry("iscrowd".to_string()).or_insert(json!(0));
            obj.insert("bbox".into(), box_json(&inst.person_box));
            obj.insert("area".into(), json!(r2(inst.area)));
            match feet {
                FootForm::Separate => {
                    obj.insert("keypoints".into(), triplets_json(kps.part(Part::Body)));
                    obj.insert("num_keypoints".into(), json!(kps.labeled_count(Part::Body)));
                    obj.insert("foot_kpts".into(), triplets_json(kps.part(Part::Foot)));
                }
                FootForm::Fused => {
                    // Body and foot blocks are adjacent in the layout.
                    obj.insert("keypoints".into(), triplets_json(&kps.as_slice()[..23]));
                    obj.insert(
                        "num_keypoints".into(),
                        json!(kps.labeled_count(Part::Body) + kps.labeled_count(Part::Foot)),
                    );
                    obj.remove("foot_kpts");
                }
            }
            obj.insert("face_kpts".into(), triplets_json(kps.part(Part::Face)));
            obj.insert("lefthand_kpts".into(), triplets_json(kps.part(Part::LeftHand)));
            obj.insert("righthand_kpts".into(), triplets_json(kps.part(Part::RightHand)));
            obj.insert("foot_valid".into(), json!(inst.foot_valid));
            obj.insert("face_valid".into(), json!(inst.face_box.valid));
            obj.insert("lefthand_valid".into(), json!(inst.lefthand_box.valid));
            obj.insert("righthand_valid".into(), json!(inst.righthand_box.valid));
            obj.insert("face_box".into(), box_json(&inst.face_box));
            obj.insert("lefthand_box".into(), box_json(&inst.lefthand_box));
            obj.insert("righthand_box".into(), box_json(&inst.righthand_box));
            if let Some(s) = inst.score {
                obj.insert("score".into(), json!(s));
            }
            Value::Object(obj)
        })
        .collect();

    let mut root = ds.extra.clone();
    root.insert("images".into(), Value::Array(images));
    root.insert("annotations".into(), Value::Array(annotations));
    root.entry("categories".to_string()).or_insert_with(default_categories);

    Ok(serde_json::to_vec(&Value::Object(root)).expect("serializing a JSON value cannot fail"))
}

fn default_categories() -> Value {
    json!([{
        "id": 1,
        "name": "person",
        "supercategory": "person",
        "keypoints": BODY_KEYPOINT_NAMES,
    }])
}
