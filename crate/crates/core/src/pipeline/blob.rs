//! Replaying stage outputs produced outside this process.
//!
//! Model inference typically happens elsewhere (a Python training run, an
//! ONNX session, a remote service). The interchange is a directory of
//! heatmap blobs in the [`Heatmap`] binary format, one file per stage
//! invocation, keyed by image id and the person's index within that image:
//!
//! ```text
//! {image_id}_{person_index}_body.bin
//! {image_id}_{person_index}_face.bin
//! {image_id}_{person_index}_lefthand.bin
//! {image_id}_{person_index}_righthand.bin
//! ```
//!
//! Head blobs are only read for part boxes that actually decode from the
//! body blob, so a producer must ship head blobs for every box its own body
//! output yields. A missing or unreadable blob is a hard error naming the
//! instance — silently skipping a person would bias any evaluation run on
//! the output.

use std::path::{Path, PathBuf};

use crate::geom::{Heatmap, StageShapes};

use super::{PersonContext, PipelineConfig, PipelineError, PixelGrid, Predictor, RoiContext};

/// The blob file holding one stage output of one person.
pub fn blob_path(dir: &Path, image_id: u64, person_index: usize, stage: &str) -> PathBuf {
    dir.join(format!("{image_id}_{person_index}_{stage}.bin"))
}

pub struct BlobPredictor {
    dir: PathBuf,
    shapes: StageShapes,
}

impl BlobPredictor {
    pub fn new(dir: impl Into<PathBuf>, cfg: &PipelineConfig) -> BlobPredictor {
        BlobPredictor { dir: dir.into(), shapes: cfg.shapes }
    }

    fn read(
        &self,
        image_id: u64,
        person_index: usize,
        stage: &str,
    ) -> Result<Heatmap, PipelineError> {
        let path = blob_path(&self.dir, image_id, person_index, stage);
        let bytes = std::fs::read(&path).map_err(|e| {
            PipelineError::Predictor(format!(
                "missing {stage} blob for person {person_index} of image {image_id} \
                 (expected {}): {e}",
                path.display()
            ))
        })?;
        Heatmap::from_blob(&bytes).map_err(|e| {
            PipelineError::Predictor(format!(
                "unreadable {stage} blob for person {person_index} of image {image_id} \
                 ({}): {e}",
                path.display()
            ))
        })
    }
}

impl Predictor for BlobPredictor {
    fn feature_stage(
        &self,
        _crop: &PixelGrid,
        _ctx: &PersonContext,
    ) -> Result<(Heatmap, Heatmap), PipelineError> {
        // Heads replay from their own blobs; features are never inspected.
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
        self.read(ctx.image_id, ctx.person_index, "body")
    }

    fn face_stage(
        &self,
        _f1: &Heatmap,
        _f2: &Heatmap,
        ctx: &RoiContext,
    ) -> Result<Heatmap, PipelineError> {
        self.read(ctx.person.image_id, ctx.person.person_index, ctx.kind.name())
    }

    fn hand_stage(
        &self,
        _f1: &Heatmap,
        _f2: &Heatmap,
        ctx: &RoiContext,
    ) -> Result<Heatmap, PipelineError> {
        self.read(ctx.person.image_id, ctx.person.person_index, ctx.kind.name())
    }
}
