//! Two-stage whole-body inference pipeline.
//!
//! The pipeline owns everything that is *not* learned: cropping the person
//! out of the image, checking the shape contract of every predictor stage,
//! decoding body keypoints and part boxes from the body heatmap, zooming
//! into face and hand regions with RoI-align, decoding the head outputs,
//! and mapping all coordinates back into the original image frame.
//!
//! A [`Predictor`] supplies the four learned stages:
//!
//! 1. `feature_stage`  — person crop -> two feature pyramids `F1`, `F2`,
//! 2. `body_stage`     — `(F1, F2)` -> body/foot keypoint channels plus
//!    corner/center channels for the face and hand boxes,
//! 3. `face_stage`     — RoI-aligned `(F1, F2)` patches -> 68 face channels,
//! 4. `hand_stage`     — RoI-aligned `(F1, F2)` patches -> 21 hand channels.
//!
//! RoI extraction happens *between* stages and is performed here, not by the
//! predictor: the pipeline pads and clamps each decoded part box, cuts the
//! corresponding patches out of `F1`/`F2`, and hands those patches to the
//! head stage. Predictor implementations therefore never see the full image
//! or feature map unless they stash it themselves.
//!
//! All stage outputs are validated against [`StageShapes`]; a mismatch is a
//! [`PipelineError::Contract`] naming the offending stage rather than a
//! silent misdecode.

mod blob;
mod stub;

pub use blob::{blob_path, BlobPredictor};
pub use stub::GtStubPredictor;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rayon::prelude::*;
use thiserror::Error;

use crate::anno::{BBox, BoxKind, Dataset, ImageInfo, Keypoint, Part, PersonInstance, Visibility};
use crate::geom::{
    bilinear_sample, crop_and_resize_person, decode_boxes, decode_heatmap, roi_align,
    BoxChannelMap, CropTransform, GeomError, Heatmap, StageShapes, DEFAULT_SIGMA,
};

/// Pixel data for one image: a 3-channel (RGB) [`Heatmap`] with stride 1 and
/// values in `0..=255`. Reusing the heatmap container keeps the bilinear
/// sampling helpers shared between pixels and features.
pub type PixelGrid = Heatmap;

#[derive(Debug, Error)]
pub enum PipelineError {
    /// A stage produced output violating the declared shape contract.
    #[error("{stage} contract violated: {msg}")]
    Contract { stage: &'static str, msg: String },
    /// A detection box that cannot be cropped from its image.
    #[error("bad detection: {0}")]
    BadDetection(String),
    /// A detection referencing an image id absent from the dataset.
    #[error("detection references unknown image {0}")]
    UnknownImage(u64),
    /// Pixel loading or image metadata problems.
    #[error("input: {0}")]
    Input(String),
    /// A predictor could not supply an output (missing/corrupt external data).
    #[error("predictor: {0}")]
    Predictor(String),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

/// Fixed (non-learned) knobs of the pipeline.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub shapes: StageShapes,
    /// Padding factor applied to the detection box before cropping.
    pub person_padding: f64,
    /// Padding factor applied to decoded part boxes before RoI extraction.
    pub part_padding: f64,
    /// Channel layout of the corner/center box channels in the body output.
    pub box_map: BoxChannelMap,
    /// Minimum center-channel confidence for a decoded box to be used.
    pub box_threshold: f32,
    /// Gaussian sigma used by predictors that render heatmaps (the stub).
    pub heatmap_sigma: f64,
    /// Bilinear samples per RoI-align bin edge (`n` gives `n^2` per bin).
    pub roi_samples: usize,
    /// Replace decoded part boxes with ground-truth part boxes. Requires a
    /// dataset with instances and only affects [`run_dataset`]; used to
    /// isolate how much box-localization errors cost the heads.
    pub oracle_boxes: bool,
}

impl Default for PipelineConfig {
    fn default() -> PipelineConfig {
        PipelineConfig {
            shapes: StageShapes::standard(),
            person_padding: 1.25,
            part_padding: 1.25,
            box_map: BoxChannelMap::standard(),
            box_threshold: 0.3,
            heatmap_sigma: DEFAULT_SIGMA,
            roi_samples: 2,
            oracle_boxes: false,
        }
    }
}

/// Everything a predictor may know about the person being processed.
#[derive(Debug, Clone)]
pub struct PersonContext {
    pub image_id: u64,
    /// `(width, height)` of the source image in pixels.
    pub image_size: (u32, u32),
    /// Index of this detection within its image (canonical processing
    /// order); stable across runs, used to key per-instance external data.
    pub person_index: usize,
    /// The raw detection box, image frame, before padding.
    pub detection: BBox,
    /// Image-frame -> crop-frame transform actually used.
    pub crop: CropTransform,
}

/// Context for one head invocation: the person plus the zoom region.
#[derive(Debug, Clone)]
pub struct RoiContext {
    pub person: PersonContext,
    pub kind: BoxKind,
    /// Zoom box in crop coordinates, after padding and clamping.
    pub roi: BBox,
}

/// The four learned stages. Implementations receive owned contexts and
/// borrowed tensors; they must not rely on call order between persons.
pub trait Predictor {
    /// Whether stages may be invoked from several threads at once. When
    /// `false` the pipeline serializes every stage call through a mutex.
    fn reentrant(&self) -> bool {
        true
    }

    /// Person crop -> `(F1, F2)` feature pyramids.
    fn feature_stage(
        &self,
        crop: &PixelGrid,
        ctx: &PersonContext,
    ) -> Result<(Heatmap, Heatmap), PipelineError>;

    /// `(F1, F2)` -> body output: 23 keypoint channels followed by the
    /// corner/center channels described by the pipeline's `BoxChannelMap`.
    fn body_stage(
        &self,
        f1: &Heatmap,
        f2: &Heatmap,
        ctx: &PersonContext,
    ) -> Result<Heatmap, PipelineError>;

    /// RoI patches -> 68 face keypoint channels.
    fn face_stage(
        &self,
        f1_patch: &Heatmap,
        f2_patch: &Heatmap,
        ctx: &RoiContext,
    ) -> Result<Heatmap, PipelineError>;

    /// RoI patches -> 21 hand keypoint channels (left or right per context).
    fn hand_stage(
        &self,
        f1_patch: &Heatmap,
        f2_patch: &Heatmap,
        ctx: &RoiContext,
    ) -> Result<Heatmap, PipelineError>;
}

/// One person detection to run the pipeline on.
#[derive(Debug, Clone)]
pub struct Detection {
    pub image_id: u64,
    pub bbox: BBox,
    /// Detector confidence; multiplied into the final instance score.
    pub score: Option<f64>,
}

/// Output of the pipeline for one detection.
#[derive(Debug, Clone)]
pub struct WholeBodyResult {
    /// Predicted instance in image coordinates. Keypoint visibility is
    /// `Visible` where a peak was decoded and `Unlabeled` where the part was
    /// skipped or the channel was empty. Part boxes are minimal rectangles
    /// of the predicted part keypoints.
    pub instance: PersonInstance,
    /// Mean decoded confidence per part; `None` when the part was not run.
    pub part_confidence: Vec<(Part, Option<f64>)>,
    /// Crop-frame zoom boxes actually used for the heads (after padding and
    /// clamping); `None` when the box was missing or degenerate.
    pub zoom_boxes: Vec<(BoxKind, Option<BBox>)>,
}

/// Where [`run_dataset`] gets pixels from.
#[derive(Debug, Clone)]
pub enum ImageSource {
    /// All-zero pixels of each image's recorded size. Suitable for
    /// predictors that ignore pixel content (the stub, blob replay).
    Blank,
    /// Load `ImageInfo::file_name` relative to this directory.
    Directory(std::path::PathBuf),
}

impl ImageSource {
    /// Materialize one image as a 3-channel (or blank) pixel grid, checking
    /// file dimensions against the recorded metadata.
    pub fn load(&self, info: &ImageInfo) -> Result<PixelGrid, PipelineError> {
        if info.width == 0 || info.height == 0 {
            return Err(PipelineError::Input(format!(
                "image {} has no usable dimensions ({}x{})",
                info.id, info.width, info.height
            )));
        }
        match self {
            ImageSource::Blank => {
                Ok(Heatmap::zeros(3, info.height as usize, info.width as usize, 1.0))
            }
            ImageSource::Directory(dir) => {
                let path = dir.join(&info.file_name);
                let img = image::open(&path).map_err(|e| {
                    PipelineError::Input(format!("cannot load {}: {e}", path.display()))
                })?;
                let rgb = img.to_rgb8();
                if rgb.width() != info.width || rgb.height() != info.height {
                    return Err(PipelineError::Input(format!(
                        "{} is {}x{} but image {} is recorded as {}x{}",
                        path.display(),
                        rgb.width(),
                        rgb.height(),
                        info.id,
                        info.width,
                        info.height
                    )));
                }
                let (w, h) = (info.width as usize, info.height as usize);
                let mut grid = Heatmap::zeros(3, h, w, 1.0);
                for c in 0..3 {
                    let plane = grid.channel_mut(c);
                    for (i, px) in rgb.pixels().enumerate() {
                        plane[i] = px.0[c] as f32;
                    }
                }
                Ok(grid)
            }
        }
    }
}

/// Resample `pixels` into the crop frame described by `t`.
///
/// Output cell `(r, c)` takes the bilinear sample of the source at the image
/// point corresponding to the cell center `(c + 0.5, r + 0.5)`; samples
/// falling outside the image replicate the border.
pub fn warp_crop(pixels: &PixelGrid, t: &CropTransform) -> PixelGrid {
    let (src_h, src_w) = pixels.shape();
    let mut out = Heatmap::zeros(pixels.channels(), t.out_h, t.out_w, 1.0);
    for ch in 0..pixels.channels() {
        let src = pixels.channel(ch);
        for r in 0..t.out_h {
            for c in 0..t.out_w {
                let (ix, iy) = t.to_image(c as f64 + 0.5, r as f64 + 0.5);
                let v = bilinear_sample(src, src_h, src_w, ix, iy);
                out.set(ch, r, c, v);
            }
        }
    }
    out
}

fn expect_shape(
    stage: &'static str,
    map: &Heatmap,
    channels: Option<usize>,
    shape: (usize, usize),
    stride: f64,
) -> Result<(), PipelineError> {
    if let Some(ch) = channels {
        if map.channels() != ch {
            return Err(PipelineError::Contract {
                stage,
                msg: format!("expected {ch} channels, got {}", map.channels()),
            });
        }
    } else if map.channels() == 0 {
        return Err(PipelineError::Contract { stage, msg: "no channels".into() });
    }
    if map.shape() != shape {
        return Err(PipelineError::Contract {
            stage,
            msg: format!(
                "expected {}x{} cells, got {}x{}",
                shape.0,
                shape.1,
                map.shape().0,
                map.shape().1
            ),
        });
    }
    if (map.stride() - stride).abs() > 1e-9 {
        return Err(PipelineError::Contract {
            stage,
            msg: format!("expected stride {stride}, got {}", map.stride()),
        });
    }
    Ok(())
}

/// Number of dedicated keypoint channels in the body output (body + feet).
const BODY_CHANNELS: usize = 23;

/// Run the full pipeline for a single detection.
///
/// `pixels` must be the full image (3 channels, matching `image`'s recorded
/// size). The detection box must be positive-sized, no larger than the image
/// along either axis, and must intersect it.
pub fn run_person<P: Predictor + ?Sized>(
    pixels: &PixelGrid,
    image: &ImageInfo,
    detection: &Detection,
    predictor: &P,
    cfg: &PipelineConfig,
) -> Result<WholeBodyResult, PipelineError> {
    run_person_at(pixels, image, detection, 0, predictor, cfg, None)
}

fn run_person_at<P: Predictor + ?Sized>(
    pixels: &PixelGrid,
    image: &ImageInfo,
    detection: &Detection,
    person_index: usize,
    predictor: &P,
    cfg: &PipelineConfig,
    oracle: Option<&PersonInstance>,
) -> Result<WholeBodyResult, PipelineError> {
    cfg.shapes.validate()?;
    let (img_w, img_h) = (image.width as f64, image.height as f64);
    if pixels.channels() != 3 || pixels.shape() != (image.height as usize, image.width as usize) {
        return Err(PipelineError::Input(format!(
            "pixel grid is {}ch {}x{}, image {} is recorded as {}x{}",
            pixels.channels(),
            pixels.shape().1,
            pixels.shape().0,
            image.id,
            image.width,
            image.height
        )));
    }
    let b = &detection.bbox;
    if !b.valid || !(b.w > 0.0) || !(b.h > 0.0) {
        return Err(PipelineError::BadDetection(format!(
            "degenerate box {}x{} in image {}",
            b.w, b.h, image.id
        )));
    }
    if b.w > img_w || b.h > img_h {
        return Err(PipelineError::BadDetection(format!(
            "box {}x{} larger than image {} ({}x{})",
            b.w, b.h, image.id, image.width, image.height
        )));
    }
    if b.clamped(img_w, img_h).area() <= 0.0 {
        return Err(PipelineError::BadDetection(format!(
            "box at ({}, {}) does not intersect image {}",
            b.x, b.y, image.id
        )));
    }

    let padded = b.padded(cfg.person_padding);
    let crop_t = crop_and_resize_person(&padded, cfg.shapes.input.0, cfg.shapes.input.1)?;
    let crop = warp_crop(pixels, &crop_t);
    let ctx = PersonContext {
        image_id: image.id,
        image_size: (image.width, image.height),
        person_index,
        detection: *b,
        crop: crop_t,
    };

    let (f1, f2) = predictor.feature_stage(&crop, &ctx)?;
    expect_shape("feature stage (F1)", &f1, None, cfg.shapes.f1, cfg.shapes.f1_stride())?;
    expect_shape("feature stage (F2)", &f2, None, cfg.shapes.f2, cfg.shapes.f2_stride())?;

    let body = predictor.body_stage(&f1, &f2, &ctx)?;
    expect_shape(
        "body stage",
        &body,
        Some(cfg.box_map.required_channels()),
        cfg.shapes.body_output,
        cfg.shapes.body_stride(),
    )?;

    // Body + foot keypoints live in the first 23 channels; decode them all
    // and keep the per-channel confidences for scoring.
    let decoded = decode_heatmap(&body);
    let mut inst = PersonInstance::new(0, image.id, *b);
    inst.score = Some(1.0);
    let mut confidence = vec![0.0f64; crate::anno::NUM_KEYPOINTS];
    for (i, d) in decoded.iter().take(BODY_CHANNELS).enumerate() {
        if d.confidence > 0.0 {
            let (ix, iy) = ctx.crop.to_image(d.x, d.y);
            inst.keypoints[i] = Keypoint::new(ix, iy, Visibility::Visible);
            confidence[i] = d.confidence as f64;
        }
    }

    // Zoom boxes: either decoded from the corner/center channels or, under
    // oracle substitution, the ground-truth part boxes mapped into the crop.
    let crop_rect = (cfg.shapes.input.1 as f64, cfg.shapes.input.0 as f64);
    let mut zoom_boxes: Vec<(BoxKind, Option<BBox>)> = Vec::with_capacity(BoxKind::ALL.len());
    match oracle {
        Some(gt) => {
            for kind in BoxKind::ALL {
                let raw = kind.gt_box(gt);
                let zoom = raw.valid.then(|| ctx.crop.to_crop_box(raw));
                zoom_boxes.push((kind, zoom));
            }
        }
        None => {
            for (kind, dec) in decode_boxes(&body, &cfg.box_map, cfg.box_threshold)? {
                zoom_boxes.push((kind, dec.map(|d| d.bbox)));
            }
        }
    }
    for (_, zoom) in zoom_boxes.iter_mut() {
        *zoom = zoom
            .map(|z| z.padded(cfg.part_padding).clamped(crop_rect.0, crop_rect.1))
            .filter(|z| z.w > 0.0 && z.h > 0.0);
    }

    for &(kind, zoom) in &zoom_boxes {
        let Some(roi) = zoom else { continue };
        let (hf1_h, hf1_w) = cfg.shapes.head_input_f1;
        let (hf2_h, hf2_w) = cfg.shapes.head_input_f2;
        let f1_patch = roi_align(&f1, &roi, hf1_h, hf1_w, cfg.roi_samples)?;
        let f2_patch = roi_align(&f2, &roi, hf2_h, hf2_w, cfg.roi_samples)?;
        let rctx = RoiContext { person: ctx.clone(), kind, roi };
        let (stage, head): (&'static str, Heatmap) = match kind {
            BoxKind::Face => ("face stage", predictor.face_stage(&f1_patch, &f2_patch, &rctx)?),
            BoxKind::LeftHand | BoxKind::RightHand => {
                ("hand stage", predictor.hand_stage(&f1_patch, &f2_patch, &rctx)?)
            }
        };
        expect_shape(stage, &head, Some(kind.part().range().len()), cfg.shapes.head_output, 1.0)?;

        // Head grids span the RoI: cell coordinates scale anisotropically
        // with the box edges, not with a uniform stride.
        let (out_h, out_w) = cfg.shapes.head_output;
        for (j, d) in decode_heatmap(&head).into_iter().enumerate() {
            let i = kind.part().range().start + j;
            if d.confidence > 0.0 {
                let cx = roi.x + d.x / out_w as f64 * roi.w;
                let cy = roi.y + d.y / out_h as f64 * roi.h;
                let (ix, iy) = ctx.crop.to_image(cx, cy);
                inst.keypoints[i] = Keypoint::new(ix, iy, Visibility::Visible);
                confidence[i] = d.confidence as f64;
            }
        }
    }

    // Part boxes of the prediction are minimal rectangles over the predicted
    // keypoints; validity then follows the usual labeled-keypoints rule.
    for kind in BoxKind::ALL {
        let rect = crate::anno::minimal_rect(inst.keypoints.part(kind.part()));
        match kind {
            BoxKind::Face => inst.face_box = rect.unwrap_or_else(BBox::invalid),
            BoxKind::LeftHand => inst.lefthand_box = rect.unwrap_or_else(BBox::invalid),
            BoxKind::RightHand => inst.righthand_box = rect.unwrap_or_else(BBox::invalid),
        }
    }
    inst.foot_valid = inst.keypoints.labeled_count(Part::Foot) > 0;
    inst.normalize_validity();

    let mut part_confidence = Vec::with_capacity(Part::ALL.len());
    for part in Part::ALL {
        let ran = match part {
            Part::Body | Part::Foot => true,
            Part::Face => zoom_boxes[0].1.is_some(),
            Part::LeftHand => zoom_boxes[1].1.is_some(),
            Part::RightHand => zoom_boxes[2].1.is_some(),
        };
        let mean = ran.then(|| {
            let r = part.range();
            confidence[r.clone()].iter().sum::<f64>() / r.len() as f64
        });
        part_confidence.push((part, mean));
    }

    let produced: Vec<f64> = confidence.iter().copied().filter(|&c| c > 0.0).collect();
    let mean_conf = if produced.is_empty() {
        0.0
    } else {
        produced.iter().sum::<f64>() / produced.len() as f64
    };
    inst.score = Some(detection.score.unwrap_or(1.0) * mean_conf);

    Ok(WholeBodyResult { instance: inst, part_confidence, zoom_boxes })
}

/// Progress callback: `(persons done, persons total)`. Called once per
/// completed person, possibly from worker threads.
pub type Progress<'a> = &'a (dyn Fn(usize, usize) + Sync);

/// Run the pipeline over a detection list.
///
/// Detections are put in a canonical order (image id, then score descending,
/// then box coordinates) before processing, so the output — including the
/// sequential instance ids assigned here — does not depend on input order or
/// thread count. Images are processed in parallel when the predictor is
/// reentrant; otherwise every stage call is serialized.
///
/// `dataset` supplies image metadata (and instances, when
/// [`PipelineConfig::oracle_boxes`] is set: each detection is then paired
/// with the ground-truth instance whose person box overlaps it most).
pub fn run_dataset<P: Predictor + Sync + ?Sized>(
    dataset: &Dataset,
    detections: &[Detection],
    source: &ImageSource,
    predictor: &P,
    cfg: &PipelineConfig,
    progress: Option<Progress<'_>>,
) -> Result<Vec<WholeBodyResult>, PipelineError> {
    cfg.shapes.validate()?;
    for d in detections {
        if dataset.image(d.image_id).is_none() {
            return Err(PipelineError::UnknownImage(d.image_id));
        }
    }

    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        let (da, db) = (&detections[a], &detections[b]);
        da.image_id
            .cmp(&db.image_id)
            .then_with(|| {
                db.score.unwrap_or(1.0).total_cmp(&da.score.unwrap_or(1.0))
            })
            .then_with(|| da.bbox.x.total_cmp(&db.bbox.x))
            .then_with(|| da.bbox.y.total_cmp(&db.bbox.y))
            .then_with(|| da.bbox.w.total_cmp(&db.bbox.w))
            .then_with(|| da.bbox.h.total_cmp(&db.bbox.h))
    });

    // Group by image so pixels are loaded once per image.
    let mut groups: Vec<(u64, Vec<usize>)> = Vec::new();
    for idx in order {
        let id = detections[idx].image_id;
        match groups.last_mut() {
            Some((gid, members)) if *gid == id => members.push(idx),
            _ => groups.push((id, vec![idx])),
        }
    }

    let total = detections.len();
    let done = AtomicUsize::new(0);
    let serial = Mutex::new(());

    let process_group = |&(image_id, ref members): &(u64, Vec<usize>)| {
        let info = dataset.image(image_id).expect("checked above");
        let pixels = source.load(info)?;
        let gts: Vec<&PersonInstance> = dataset.instances_for_image(image_id).collect();
        let mut out = Vec::with_capacity(members.len());
        for (person_index, &idx) in members.iter().enumerate() {
            let det = &detections[idx];
            let oracle = if cfg.oracle_boxes {
                let best = gts
                    .iter()
                    .map(|&g| (g, det.bbox.iou(&g.person_box)))
                    .filter(|&(_, iou)| iou > 0.0)
                    .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.id.cmp(&a.0.id)));
                match best {
                    Some((g, _)) => Some(g),
                    None => {
                        return Err(PipelineError::BadDetection(format!(
                            "oracle boxes requested but no ground truth overlaps \
                             the detection at ({}, {}) in image {}",
                            det.bbox.x, det.bbox.y, image_id
                        )))
                    }
                }
            } else {
                None
            };
            let guard = (!predictor.reentrant()).then(|| serial.lock().unwrap());
            let r = run_person_at(&pixels, info, det, person_index, predictor, cfg, oracle)?;
            drop(guard);
            out.push(r);
            if let Some(p) = progress {
                p(done.fetch_add(1, Ordering::Relaxed) + 1, total);
            }
        }
        Ok(out)
    };

    let per_group: Vec<Vec<WholeBodyResult>> = if predictor.reentrant() {
        groups.par_iter().map(process_group).collect::<Result<_, _>>()?
    } else {
        groups.iter().map(process_group).collect::<Result<_, _>>()?
    };

    let mut results: Vec<WholeBodyResult> = per_group.into_iter().flatten().collect();
    for (i, r) in results.iter_mut().enumerate() {
        r.instance.id = i as u64 + 1;
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anno::Visibility;

    /// Minimal predictor with configurable output shapes, for contract tests.
    struct ShapePredictor {
        f1: (usize, usize, usize, f64),
        f2: (usize, usize, usize, f64),
        body: (usize, usize, usize, f64),
        head: (usize, usize, f64),
        /// Render corner/center Gaussians for this crop-frame box into all
        /// three part-box channel groups (so the heads actually run).
        paint_boxes: Option<BBox>,
    }

    impl ShapePredictor {
        fn conforming() -> ShapePredictor {
            let s = StageShapes::standard();
            ShapePredictor {
                f1: (4, s.f1.0, s.f1.1, s.f1_stride()),
                f2: (4, s.f2.0, s.f2.1, s.f2_stride()),
                body: (38, s.body_output.0, s.body_output.1, s.body_stride()),
                head: (s.head_output.0, s.head_output.1, 1.0),
                paint_boxes: None,
            }
        }
    }

    impl Predictor for ShapePredictor {
        fn feature_stage(
            &self,
            _crop: &PixelGrid,
            _ctx: &PersonContext,
        ) -> Result<(Heatmap, Heatmap), PipelineError> {
            Ok((
                Heatmap::zeros(self.f1.0, self.f1.1, self.f1.2, self.f1.3),
                Heatmap::zeros(self.f2.0, self.f2.1, self.f2.2, self.f2.3),
            ))
        }

        fn body_stage(
            &self,
            _f1: &Heatmap,
            _f2: &Heatmap,
            _ctx: &PersonContext,
        ) -> Result<Heatmap, PipelineError> {
            match self.paint_boxes {
                None => Ok(Heatmap::zeros(self.body.0, self.body.1, self.body.2, self.body.3)),
                Some(b) => {
                    let mut pts = vec![Keypoint::default(); 38];
                    let map = BoxChannelMap::standard();
                    for kind in BoxKind::ALL {
                        let ch = map.channels(kind);
                        for (j, p) in crate::geom::box_corner_points(&b).into_iter().enumerate()
                        {
                            pts[ch.top_left + j] = p;
                        }
                    }
                    let enc = crate::geom::encode_heatmap(
                        &pts,
                        self.body.1,
                        self.body.2,
                        self.body.3,
                        DEFAULT_SIGMA,
                    )?;
                    Ok(enc.heatmap)
                }
            }
        }

        fn face_stage(
            &self,
            _f1: &Heatmap,
            _f2: &Heatmap,
            _ctx: &RoiContext,
        ) -> Result<Heatmap, PipelineError> {
            Ok(Heatmap::zeros(68, self.head.0, self.head.1, self.head.2))
        }

        fn hand_stage(
            &self,
            _f1: &Heatmap,
            _f2: &Heatmap,
            _ctx: &RoiContext,
        ) -> Result<Heatmap, PipelineError> {
            Ok(Heatmap::zeros(21, self.head.0, self.head.1, self.head.2))
        }
    }

    fn test_image() -> ImageInfo {
        ImageInfo::new(7, 640, 480, "img7.png")
    }

    fn test_detection() -> Detection {
        Detection { image_id: 7, bbox: BBox::new(100.0, 80.0, 120.0, 300.0), score: Some(0.9) }
    }

    fn blank_pixels(info: &ImageInfo) -> PixelGrid {
        Heatmap::zeros(3, info.height as usize, info.width as usize, 1.0)
    }

    #[test]
    fn zero_channels_mean_no_keypoints_and_no_heads() {
        let info = test_image();
        let r = run_person(
            &blank_pixels(&info),
            &info,
            &test_detection(),
            &ShapePredictor::conforming(),
            &PipelineConfig::default(),
        )
        .unwrap();
        assert_eq!(r.instance.keypoints.labeled_count(Part::Body), 0);
        assert!(r.zoom_boxes.iter().all(|(_, z)| z.is_none()));
        assert!(!r.instance.face_box.valid);
        assert_eq!(r.instance.score, Some(0.0));
        // Heads never ran.
        for (part, conf) in &r.part_confidence {
            match part {
                Part::Body | Part::Foot => assert_eq!(*conf, Some(0.0)),
                _ => assert!(conf.is_none()),
            }
        }
    }

    #[test]
    fn shape_violations_name_the_stage() {
        let info = test_image();
        let det = test_detection();
        let cfg = PipelineConfig::default();
        let pixels = blank_pixels(&info);

        let mut bad_f1 = ShapePredictor::conforming();
        bad_f1.f1.1 = 100;
        let err = run_person(&pixels, &info, &det, &bad_f1, &cfg).unwrap_err();
        assert!(err.to_string().contains("feature stage (F1)"), "{err}");

        let mut bad_f2 = ShapePredictor::conforming();
        bad_f2.f2.3 = 3.0;
        let err = run_person(&pixels, &info, &det, &bad_f2, &cfg).unwrap_err();
        assert!(err.to_string().contains("feature stage (F2)"), "{err}");

        let mut bad_body = ShapePredictor::conforming();
        bad_body.body.0 = 23;
        let err = run_person(&pixels, &info, &det, &bad_body, &cfg).unwrap_err();
        assert!(err.to_string().contains("body stage"), "{err}");

        // Head contract: trip it by making the body stage emit decodable
        // part boxes so the heads actually run, then shrink the head grid.
        let mut bad_head = ShapePredictor::conforming();
        bad_head.paint_boxes = Some(BBox::new(40.0, 60.0, 80.0, 100.0));
        bad_head.head = (32, 32, 1.0);
        let err = run_person(&pixels, &info, &det, &bad_head, &cfg).unwrap_err();
        assert!(err.to_string().contains("face stage"), "{err}");
    }

    #[test]
    fn detection_box_checks() {
        let info = test_image();
        let cfg = PipelineConfig::default();
        let pixels = blank_pixels(&info);
        let p = ShapePredictor::conforming();

        let huge = Detection {
            image_id: 7,
            bbox: BBox::new(0.0, 0.0, 700.0, 100.0),
            score: None,
        };
        let err = run_person(&pixels, &info, &huge, &p, &cfg).unwrap_err();
        assert!(matches!(err, PipelineError::BadDetection(_)), "{err}");
        assert!(err.to_string().contains("larger than image"), "{err}");

        let outside = Detection {
            image_id: 7,
            bbox: BBox::new(1000.0, 1000.0, 50.0, 50.0),
            score: None,
        };
        let err = run_person(&pixels, &info, &outside, &p, &cfg).unwrap_err();
        assert!(err.to_string().contains("does not intersect"), "{err}");

        let degenerate = Detection {
            image_id: 7,
            bbox: BBox::new(10.0, 10.0, 0.0, 50.0),
            score: None,
        };
        let err = run_person(&pixels, &info, &degenerate, &p, &cfg).unwrap_err();
        assert!(err.to_string().contains("degenerate"), "{err}");
    }

    #[test]
    fn pixel_grid_must_match_image_metadata() {
        let info = test_image();
        let wrong = Heatmap::zeros(3, 100, 100, 1.0);
        let err = run_person(
            &wrong,
            &info,
            &test_detection(),
            &ShapePredictor::conforming(),
            &PipelineConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, PipelineError::Input(_)), "{err}");
    }

    #[test]
    fn warp_crop_identity_on_unit_transform() {
        let mut src = Heatmap::zeros(1, 4, 5, 1.0);
        for r in 0..4 {
            for c in 0..5 {
                src.set(0, r, c, (r * 5 + c) as f32);
            }
        }
        let t = CropTransform { origin: (0.0, 0.0), scale: 1.0, out_w: 5, out_h: 4 };
        let out = warp_crop(&src, &t);
        assert_eq!(out.data(), src.data());
    }

    #[test]
    fn warp_crop_respects_offset_and_scale() {
        // Source holds the plane f(x, y) = x + 10 y at pixel centers; any
        // bilinear sample of a plane reproduces the plane (away from the
        // border), so warped cells are predictable in closed form.
        let mut src = Heatmap::zeros(1, 20, 20, 1.0);
        for r in 0..20 {
            for c in 0..20 {
                src.set(0, r, c, (c as f32 + 0.5) + 10.0 * (r as f32 + 0.5));
            }
        }
        let t = CropTransform { origin: (4.0, 6.0), scale: 2.0, out_w: 8, out_h: 8 };
        let out = warp_crop(&src, &t);
        for r in 0..8 {
            for c in 0..8 {
                let ix = 4.0 + (c as f64 + 0.5) / 2.0;
                let iy = 6.0 + (r as f64 + 0.5) / 2.0;
                let want = ix as f32 + 10.0 * iy as f32;
                assert!(
                    (out.get(0, r, c) - want).abs() < 1e-4,
                    "cell ({r},{c}): {} vs {want}",
                    out.get(0, r, c)
                );
            }
        }
    }

    #[test]
    fn run_dataset_rejects_unknown_image() {
        let mut ds = Dataset::default();
        ds.images.push(test_image());
        let orphan = Detection { image_id: 99, ..test_detection() };
        let err = run_dataset(
            &ds,
            &[orphan],
            &ImageSource::Blank,
            &ShapePredictor::conforming(),
            &PipelineConfig::default(),
            None,
        )
        .unwrap_err();
        assert!(matches!(err, PipelineError::UnknownImage(99)), "{err}");
    }

    #[test]
    fn run_dataset_empty_detections_is_empty() {
        let ds = Dataset::default();
        let out = run_dataset(
            &ds,
            &[],
            &ImageSource::Blank,
            &ShapePredictor::conforming(),
            &PipelineConfig::default(),
            None,
        )
        .unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn run_dataset_order_is_canonical() {
        let mut ds = Dataset::default();
        ds.images.push(ImageInfo::new(1, 640, 480, "a.png"));
        ds.images.push(ImageInfo::new(2, 640, 480, "b.png"));
        let dets = vec![
            Detection { image_id: 2, bbox: BBox::new(5.0, 5.0, 60.0, 90.0), score: Some(0.4) },
            Detection { image_id: 1, bbox: BBox::new(0.0, 0.0, 50.0, 80.0), score: Some(0.2) },
            Detection { image_id: 1, bbox: BBox::new(30.0, 10.0, 40.0, 70.0), score: Some(0.8) },
        ];
        let p = ShapePredictor::conforming();
        let cfg = PipelineConfig::default();
        let run = |order: &[usize]| {
            let shuffled: Vec<Detection> = order.iter().map(|&i| dets[i].clone()).collect();
            run_dataset(&ds, &shuffled, &ImageSource::Blank, &p, &cfg, None).unwrap()
        };
        let a = run(&[0, 1, 2]);
        let b = run(&[2, 0, 1]);
        assert_eq!(a.len(), 3);
        // Canonical order: image 1 score 0.8, image 1 score 0.2, image 2.
        assert_eq!(a[0].instance.person_box.x, 30.0);
        assert_eq!(a[1].instance.person_box.x, 0.0);
        assert_eq!(a[2].instance.image_id, 2);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.instance, y.instance);
        }
        assert_eq!(a[0].instance.id, 1);
        assert_eq!(a[2].instance.id, 3);
    }

    #[test]
    fn progress_reports_every_person() {
        let mut ds = Dataset::default();
        ds.images.push(test_image());
        let dets = vec![test_detection(), test_detection()];
        let seen = Mutex::new(Vec::new());
        let cb = |done: usize, total: usize| seen.lock().unwrap().push((done, total));
        run_dataset(
            &ds,
            &dets,
            &ImageSource::Blank,
            &ShapePredictor::conforming(),
            &PipelineConfig::default(),
            Some(&cb),
        )
        .unwrap();
        let mut got = seen.into_inner().unwrap();
        got.sort_unstable();
        assert_eq!(got, vec![(1, 2), (2, 2)]);
    }

    #[test]
    fn non_reentrant_predictor_is_serialized() {
        use std::sync::atomic::AtomicBool;

        struct Grumpy {
            busy: AtomicBool,
            inner: ShapePredictor,
        }
        impl Predictor for Grumpy {
            fn reentrant(&self) -> bool {
                false
            }
            fn feature_stage(
                &self,
                crop: &PixelGrid,
                ctx: &PersonContext,
            ) -> Result<(Heatmap, Heatmap), PipelineError> {
                assert!(!self.busy.swap(true, Ordering::SeqCst), "stage reentered");
                std::thread::sleep(std::time::Duration::from_millis(2));
                let r = self.inner.feature_stage(crop, ctx);
                self.busy.store(false, Ordering::SeqCst);
                r
            }
            fn body_stage(
                &self,
                f1: &Heatmap,
                f2: &Heatmap,
                ctx: &PersonContext,
            ) -> Result<Heatmap, PipelineError> {
                self.inner.body_stage(f1, f2, ctx)
            }
            fn face_stage(
                &self,
                f1: &Heatmap,
                f2: &Heatmap,
                ctx: &RoiContext,
            ) -> Result<Heatmap, PipelineError> {
                self.inner.face_stage(f1, f2, ctx)
            }
            fn hand_stage(
                &self,
                f1: &Heatmap,
                f2: &Heatmap,
                ctx: &RoiContext,
            ) -> Result<Heatmap, PipelineError> {
                self.inner.hand_stage(f1, f2, ctx)
            }
        }

        let mut ds = Dataset::default();
        for id in 1..=4 {
            ds.images.push(ImageInfo::new(id, 320, 240, &format!("{id}.png")));
        }
        let dets: Vec<Detection> = (1..=4)
            .map(|id| Detection {
                image_id: id,
                bbox: BBox::new(10.0, 10.0, 100.0, 200.0),
                score: None,
            })
            .collect();
        let p = Grumpy { busy: AtomicBool::new(false), inner: ShapePredictor::conforming() };
        let out =
            run_dataset(&ds, &dets, &ImageSource::Blank, &p, &PipelineConfig::default(), None)
                .unwrap();
        assert_eq!(out.len(), 4);
    }

    #[test]
    fn body_keypoints_map_back_to_image_coordinates() {
        // A body stage that paints one keypoint channel with a Gaussian at a
        // fixed crop position; the decoded instance keypoint must come back
        // at the matching image position to within decode quantization.
        struct OnePoint {
            crop_xy: (f64, f64),
        }
        impl Predictor for OnePoint {
            fn feature_stage(
                &self,
                _c: &PixelGrid,
                _ctx: &PersonContext,
            ) -> Result<(Heatmap, Heatmap), PipelineError> {
                let s = StageShapes::standard();
                Ok((
                    Heatmap::zeros(1, s.f1.0, s.f1.1, s.f1_stride()),
                    Heatmap::zeros(1, s.f2.0, s.f2.1, s.f2_stride()),
                ))
            }
            fn body_stage(
                &self,
                _f1: &Heatmap,
                _f2: &Heatmap,
                _ctx: &PersonContext,
            ) -> Result<Heatmap, PipelineError> {
                let s = StageShapes::standard();
                let mut pts = vec![Keypoint::default(); 38];
                pts[0] = Keypoint::new(self.crop_xy.0, self.crop_xy.1, Visibility::Visible);
                let enc = crate::geom::encode_heatmap(
                    &pts,
                    s.body_output.0,
                    s.body_output.1,
                    s.body_stride(),
                    DEFAULT_SIGMA,
                )?;
                Ok(enc.heatmap)
            }
            fn face_stage(
                &self,
                _f1: &Heatmap,
                _f2: &Heatmap,
                _ctx: &RoiContext,
            ) -> Result<Heatmap, PipelineError> {
                unreachable!()
            }
            fn hand_stage(
                &self,
                _f1: &Heatmap,
                _f2: &Heatmap,
                _ctx: &RoiContext,
            ) -> Result<Heatmap, PipelineError> {
                unreachable!()
            }
        }

        let info = test_image();
        let det = test_detection();
        let cfg = PipelineConfig::default();
        let p = OnePoint { crop_xy: (101.3, 222.9) };
        let r = run_person(&blank_pixels(&info), &info, &det, &p, &cfg).unwrap();
        let kp = r.instance.keypoints[0];
        assert_eq!(kp.v, Visibility::Visible);
        assert_eq!(r.instance.keypoints.labeled_count(Part::Body), 1);

        // Recreate the transform the pipeline used and bound the error by
        // the decode quantization (a quarter-cell in heatmap units).
        let t = crop_and_resize_person(
            &det.bbox.padded(cfg.person_padding),
            cfg.shapes.input.0,
            cfg.shapes.input.1,
        )
        .unwrap();
        let (ex, ey) = t.to_image(101.3, 222.9);
        let tol = 0.26 * cfg.shapes.body_stride() / t.scale;
        assert!((kp.x - ex).abs() <= tol, "x {} vs {ex} (tol {tol})", kp.x);
        assert!((kp.y - ey).abs() <= tol, "y {} vs {ey} (tol {tol})", kp.y);
    }
}
