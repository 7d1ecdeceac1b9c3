//! A predictor that replays ground truth through the pipeline.
//!
//! Each stage renders the matching annotated instance into the exact tensor
//! a learned model would produce: Gaussian keypoint channels at body
//! resolution, corner/center channels for the part boxes, and head channels
//! over whatever RoI the pipeline asks about. This turns the pipeline into a
//! closed loop — decode(encode(gt)) — which pins down every coordinate
//! convention end to end and gives evaluation fixtures with known-perfect
//! content.
//!
//! The stub is honest about information flow: it only looks at the contexts
//! the pipeline provides. If a part box decodes badly and the RoI misses the
//! part, the rendered keypoints fall off the head grid and are lost, exactly
//! as they would be for a real model.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::anno::{BoxKind, Dataset, Keypoint, PersonInstance};
use crate::geom::{box_corner_points, encode_heatmap, BoxChannelMap, Heatmap, StageShapes};
use crate::synth::perturb_box;

use super::{PersonContext, PipelineConfig, PipelineError, PixelGrid, Predictor, RoiContext};

pub struct GtStubPredictor {
    by_image: HashMap<u64, Vec<PersonInstance>>,
    shapes: StageShapes,
    box_map: BoxChannelMap,
    sigma: f64,
    /// Fractional perturbation applied to the part boxes rendered into the
    /// corner channels (keypoint channels stay clean). Models a predictor
    /// with good keypoints but sloppy box localization.
    box_noise: f64,
    noise_seed: u64,
}

impl GtStubPredictor {
    pub fn new(gt: &Dataset, cfg: &PipelineConfig) -> GtStubPredictor {
        let mut by_image: HashMap<u64, Vec<PersonInstance>> = HashMap::new();
        for inst in &gt.instances {
            by_image.entry(inst.image_id).or_default().push(inst.clone());
        }
        GtStubPredictor {
            by_image,
            shapes: cfg.shapes,
            box_map: cfg.box_map,
            sigma: cfg.heatmap_sigma,
            box_noise: 0.0,
            noise_seed: 0,
        }
    }

    pub fn with_box_noise(mut self, frac: f64, seed: u64) -> GtStubPredictor {
        self.box_noise = frac;
        self.noise_seed = seed;
        self
    }

    /// The annotated instance this detection is for: highest person-box IoU,
    /// lowest id on ties, `None` when nothing overlaps.
    fn find(&self, ctx: &PersonContext) -> Option<&PersonInstance> {
        let list = self.by_image.get(&ctx.image_id)?;
        let mut best: Option<(&PersonInstance, f64)> = None;
        for inst in list {
            let iou = ctx.detection.iou(&inst.person_box);
            if iou > 0.0 && best.map_or(true, |(_, b)| iou > b) {
                best = Some((inst, iou));
            }
        }
        best.map(|(inst, _)| inst)
    }
}

impl Predictor for GtStubPredictor {
    fn feature_stage(
        &self,
        _crop: &PixelGrid,
        _ctx: &PersonContext,
    ) -> Result<(Heatmap, Heatmap), PipelineError> {
        let s = &self.shapes;
        Ok((
            Heatmap::zeros(1, s.f1.0, s.f1.1, s.f1_stride()),
            Heatmap::zeros(1, s.f2.0, s.f2.1, s.f2_stride()),
        ))
    }

    fn body_stage(
        &self,
        _f1: &Heatmap,
        _f2: &Heatmap,
        ctx: &PersonContext,
    ) -> Result<Heatmap, PipelineError> {
        let (h, w) = self.shapes.body_output;
        let mut pts = vec![Keypoint::default(); self.box_map.required_channels()];
        if let Some(gt) = self.find(ctx) {
            for (i, k) in gt.keypoints.as_slice().iter().take(super::BODY_CHANNELS).enumerate() {
                if k.is_labeled() {
                    let (cx, cy) = ctx.crop.to_crop(k.x, k.y);
                    pts[i] = Keypoint::new(cx, cy, k.v);
                }
            }
            for (kind_idx, kind) in BoxKind::ALL.into_iter().enumerate() {
                let b = kind.gt_box(gt);
                if !b.valid {
                    continue;
                }
                let mut cb = ctx.crop.to_crop_box(b);
                if self.box_noise > 0.0 {
                    // Deterministic per (instance, kind) so results do not
                    // depend on stage call order across threads.
                    let seed = self
                        .noise_seed
                        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                        .wrapping_add(gt.id.wrapping_mul(8) + kind_idx as u64);
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    cb = perturb_box(&cb, self.box_noise, &mut rng);
                }
                let ch = self.box_map.channels(kind);
                for (j, p) in box_corner_points(&cb).into_iter().enumerate() {
                    pts[ch.top_left + j] = p;
                }
            }
        }
        Ok(encode_heatmap(&pts, h, w, self.shapes.body_stride(), self.sigma)?.heatmap)
    }

    fn face_stage(
        &self,
        _f1: &Heatmap,
        _f2: &Heatmap,
        ctx: &RoiContext,
    ) -> Result<Heatmap, PipelineError> {
        self.render_head(ctx)
    }

    fn hand_stage(
        &self,
        _f1: &Heatmap,
        _f2: &Heatmap,
        ctx: &RoiContext,
    ) -> Result<Heatmap, PipelineError> {
        self.render_head(ctx)
    }
}

impl GtStubPredictor {
    fn render_head(&self, ctx: &RoiContext) -> Result<Heatmap, PipelineError> {
        let (h, w) = self.shapes.head_output;
        let part = ctx.kind.part();
        let mut pts = vec![Keypoint::default(); part.range().len()];
        if let Some(gt) = self.find(&ctx.person) {
            for (j, k) in gt.keypoints.part(part).iter().enumerate() {
                if !k.is_labeled() {
                    continue;
                }
                // Image -> crop -> head grid. The grid spans the RoI, so the
                // two axes scale independently; points outside the RoI land
                // off-grid and are dropped by the encoder.
                let (cx, cy) = ctx.person.crop.to_crop(k.x, k.y);
                let gx = (cx - ctx.roi.x) / ctx.roi.w * w as f64;
                let gy = (cy - ctx.roi.y) / ctx.roi.h * h as f64;
                pts[j] = Keypoint::new(gx, gy, k.v);
            }
        }
        Ok(encode_heatmap(&pts, h, w, 1.0, self.sigma)?.heatmap)
    }
}
