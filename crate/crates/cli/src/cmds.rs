//! Subcommand implementations: thin orchestration over the library, each
//! ending in one atomic report or file write.

use std::path::Path;

use rayon::prelude::*;
use serde::Deserialize;

use wholebody::anno::{
    parse_dataset, write_dataset, write_dataset_as, Dataset, FootForm, Keypoint, Part, Visibility,
    NUM_KEYPOINTS,
};
use wholebody::diagnose::{
    classify_keypoints, correction_gain, pie_breakdown, DiagnoseConfig,
};
use wholebody::eval::{derive_sigmas, evaluate, AnnotatorSet, EvalConfig, EvalPart, SigmaTable};
use wholebody::pipeline::{
    run_dataset, BlobPredictor, Detection, GtStubPredictor, ImageSource, PipelineConfig,
};
use wholebody::stats::{
    blurriness, cluster_gestures, count_annotations, normalize_hand_pose, scale_distribution,
    SkeletonTree,
};
use wholebody::BBox;

use crate::report::{write_atomic, write_report, Cell, Row};
use crate::{
    BlurArgs, CliError, ConvertArgs, CountsArgs, DiagnoseArgs, EvalArgs, FootFormArg,
    GesturesArgs, PredictorKind, RunArgs, ScaleArgs, SigmasArgs,
};

// ---------------------------------------------------------------------------
// Shared input helpers.
// ---------------------------------------------------------------------------

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))
}

fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    let bytes = read(path)?;
    parse_dataset(&bytes).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn load_sigmas(path: &Path) -> Result<SigmaTable, CliError> {
    let bytes = read(path)?;
    let text = String::from_utf8(bytes)
        .map_err(|_| CliError::Input(format!("{} is not UTF-8 text", path.display())))?;
    SigmaTable::parse(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Byte offset of a serde_json error, from its 1-based line/column.
fn json_error_offset(bytes: &[u8], e: &serde_json::Error) -> usize {
    let (line, column) = (e.line(), e.column());
    if line <= 1 {
        return column.saturating_sub(1).min(bytes.len());
    }
    let mut seen = 1usize;
    for (i, b) in bytes.iter().enumerate() {
        if *b == b'\n' {
            seen += 1;
            if seen == line {
                return (i + column).min(bytes.len());
            }
        }
    }
    bytes.len()
}

fn json_input_error(path: &Path, bytes: &[u8], e: &serde_json::Error) -> CliError {
    CliError::Input(format!(
        "{}: JSON parse error at byte {} (line {}, column {}): {e}",
        path.display(),
        json_error_offset(bytes, e),
        e.line(),
        e.column(),
    ))
}

/// Resolve `--parts` for evaluation reports; empty means all five rows.
fn eval_parts(names: &[String]) -> Result<Vec<EvalPart>, CliError> {
    if names.is_empty() {
        return Ok(EvalPart::ALL.to_vec());
    }
    names
        .iter()
        .map(|n| {
            EvalPart::from_name(n).ok_or_else(|| {
                CliError::Input(format!(
                    "unknown part {n:?}; expected body, foot, face, hand or wholebody"
                ))
            })
        })
        .collect()
}

/// Resolve layout parts for the scale report; empty means all five.
fn layout_parts(names: &[String]) -> Result<Vec<Part>, CliError> {
    if names.is_empty() {
        return Ok(Part::ALL.to_vec());
    }
    names
        .iter()
        .map(|n| {
            Part::ALL
                .into_iter()
                .find(|p| p.name() == n)
                .ok_or_else(|| {
                    CliError::Input(format!(
                        "unknown part {n:?}; expected body, foot, face, lefthand or righthand"
                    ))
                })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

pub fn eval(args: &EvalArgs) -> Result<(), CliError> {
    let mut gt = load_dataset(&args.gt)?;
    gt.sigma_table = Some(load_sigmas(&args.sigmas)?);
    let dt = load_dataset(&args.dt)?;
    let parts = eval_parts(&args.parts)?;

    let mut rows = Vec::with_capacity(parts.len());
    for part in parts {
        let mut cfg = EvalConfig::for_part(part);
        cfg.area_source = args.area_source.into();
        cfg.max_detections = args.max_detections;
        let pe = evaluate(&gt, &dt.instances, &cfg)?;
        rows.push(
            Row::new()
                .col("part", Cell::text(part.name()))
                .col("ap", Cell::opt(pe.ap, 3))
                .col("ap_medium", Cell::opt(pe.ap_medium, 3))
                .col("ap_large", Cell::opt(pe.ap_large, 3))
                .col("ar", Cell::opt(pe.ar, 3))
                .col("ar_medium", Cell::opt(pe.ar_medium, 3))
                .col("ar_large", Cell::opt(pe.ar_large, 3))
                .col("num_gt", Cell::Int(pe.num_gt as i64)),
        );
    }
    write_report(&args.out, &rows, args.report_format)
}

// ---------------------------------------------------------------------------
// diagnose
// ---------------------------------------------------------------------------

pub fn diagnose(args: &DiagnoseArgs) -> Result<(), CliError> {
    let mut gt = load_dataset(&args.gt)?;
    gt.sigma_table = Some(load_sigmas(&args.sigmas)?);
    let dt = load_dataset(&args.dt)?;
    let part = EvalPart::from_name(&args.part).ok_or_else(|| {
        CliError::Input(format!(
            "unknown part {:?}; expected body, foot, face, hand or wholebody",
            args.part
        ))
    })?;

    let dcfg = DiagnoseConfig {
        t_good: args.good,
        t_jitter: args.jitter,
        area_source: args.area_source.into(),
    };
    let verdicts = classify_keypoints(&gt, &dt.instances, &dcfg)?;

    let mut ecfg = EvalConfig::for_part(part);
    ecfg.area_source = args.area_source.into();
    let correction = correction_gain(&gt, &dt.instances, &verdicts, &ecfg)?;

    // Uniform five-column schema; `-` marks cells a row kind does not use.
    let row = |kind: &str, part: &str, category: &str, bucket: &str, value: Cell| {
        Row::new()
            .col("kind", Cell::text(kind))
            .col("part", Cell::text(part))
            .col("category", Cell::text(category))
            .col("bucket", Cell::text(bucket))
            .col("value", value)
    };

    let mut rows = Vec::new();
    for pie in pie_breakdown(&verdicts, &EvalPart::ALL) {
        rows.push(row("total", pie.part.name(), "-", "-", Cell::Int(pie.total as i64)));
        for (category, fraction) in &pie.fractions {
            rows.push(row(
                "pie",
                pie.part.name(),
                category.name(),
                "-",
                Cell::num(*fraction, 4),
            ));
        }
    }

    rows.push(row("ap-before", part.name(), "-", "-", Cell::opt(correction.ap_before, 3)));
    for (bucket, ap) in &correction.bucket_before {
        rows.push(row("ap-before", part.name(), "-", bucket.name(), Cell::opt(*ap, 3)));
    }
    for gain in &correction.gains {
        rows.push(row(
            "ap-corrected",
            part.name(),
            gain.category.name(),
            "-",
            Cell::opt(gain.ap_after, 3),
        ));
        for (bucket, ap) in &gain.per_bucket {
            rows.push(row(
                "ap-corrected",
                part.name(),
                gain.category.name(),
                bucket.name(),
                Cell::opt(*ap, 3),
            ));
        }
    }
    rows.push(row(
        "ap-full-correction",
        part.name(),
        "-",
        "-",
        Cell::opt(correction.full_correction_ap, 3),
    ));

    write_report(&args.out, &rows, args.report_format)
}

// ---------------------------------------------------------------------------
// stats
// ---------------------------------------------------------------------------

pub fn stats_counts(args: &CountsArgs) -> Result<(), CliError> {
    let ds = load_dataset(&args.input)?;
    let c = count_annotations(&ds);

    let mut rows = Vec::new();
    let mut push = |metric: &str, value: usize| {
        rows.push(
            Row::new()
                .col("metric", Cell::text(metric))
                .col("value", Cell::Int(value as i64)),
        );
    };
    push("images", c.images);
    push("instances", c.instances);
    push("face-boxes", c.face_boxes);
    push("lefthand-boxes", c.lefthand_boxes);
    push("righthand-boxes", c.righthand_boxes);
    push("hand-boxes", c.hand_boxes());
    push("foot-valid-instances", c.foot_valid);
    for part in Part::ALL {
        push(&format!("{}-keypoints", part.name()), c.keypoints_for(part));
    }
    push("total-keypoints", c.total_keypoints);

    write_report(&args.out, &rows, args.report_format)
}

pub fn stats_scale(args: &ScaleArgs) -> Result<(), CliError> {
    let ds = load_dataset(&args.input)?;
    let parts = layout_parts(&args.parts)?;
    let hists = scale_distribution(&ds, SkeletonTree::default_tree(), &parts, args.bin_width)?;

    let row = |kind: &str, part: Part| {
        Row::new()
            .col("kind", Cell::text(kind))
            .col("part", Cell::text(part.name()))
    };
    let mut rows = Vec::new();
    for hist in &hists {
        rows.push(
            row("summary", hist.part)
                .col("bin", Cell::Missing)
                .col("lo", Cell::Missing)
                .col("hi", Cell::Missing)
                .col("count", Cell::Missing)
                .col("samples", Cell::Int(hist.samples as i64))
                .col("mean", Cell::num(hist.mean, 2)),
        );
        for (bin, &count) in hist.counts.iter().enumerate() {
            if count == 0 {
                continue;
            }
            rows.push(
                row("bin", hist.part)
                    .col("bin", Cell::Int(bin as i64))
                    .col("lo", Cell::num(bin as f64 * hist.bin_width, 2))
                    .col("hi", Cell::num((bin + 1) as f64 * hist.bin_width, 2))
                    .col("count", Cell::Int(count as i64))
                    .col("samples", Cell::Missing)
                    .col("mean", Cell::Missing),
            );
        }
    }
    write_report(&args.out, &rows, args.report_format)
}

pub fn stats_blur(args: &BlurArgs) -> Result<(), CliError> {
    let ds = load_dataset(&args.input)?;
    let source = ImageSource::Directory(args.images.clone());

    // Parallel decode + score; output order stays the dataset image order.
    let scores: Vec<f64> = ds
        .images
        .par_iter()
        .map(|im| -> Result<f64, CliError> {
            let pixels = source.load(im)?;
            Ok(blurriness(&pixels)?)
        })
        .collect::<Result<_, _>>()?;

    let rows: Vec<Row> = ds
        .images
        .iter()
        .zip(scores)
        .map(|(im, score)| {
            Row::new()
                .col("image", Cell::Int(im.id as i64))
                .col("file", Cell::text(im.file_name.clone()))
                .col("blurriness", Cell::num(score, 4))
        })
        .collect();
    write_report(&args.out, &rows, args.report_format)
}

pub fn stats_gestures(args: &GesturesArgs) -> Result<(), CliError> {
    let ds = load_dataset(&args.input)?;

    // A hand enters the census when it can be normalized (wrist and
    // middle-finger base labeled and distinct). Hands with labels that still
    // lack an anchor are tallied as skipped rather than silently dropped.
    let mut poses = Vec::new();
    let mut owners = Vec::new();
    let mut skipped = 0usize;
    for inst in &ds.instances {
        for (part, side) in [(Part::LeftHand, "left"), (Part::RightHand, "right")] {
            let hand = inst.keypoints.part(part);
            if !hand.iter().any(Keypoint::is_labeled) {
                continue;
            }
            match normalize_hand_pose(hand) {
                Ok(pose) => {
                    poses.push(pose);
                    owners.push((inst.image_id, inst.id, side));
                }
                Err(_) => skipped += 1,
            }
        }
    }

    let columns = |r: Row, cluster: Cell, label: Cell, members: Cell| {
        r.col("cluster", cluster).col("label", label).col("members", members)
    };
    let blank = |kind: &str| {
        Row::new()
            .col("kind", Cell::text(kind))
            .col("image", Cell::Missing)
            .col("annotation", Cell::Missing)
            .col("hand", Cell::Missing)
    };

    let mut rows = Vec::new();
    rows.push(columns(blank("skipped"), Cell::Missing, Cell::Missing, Cell::Int(skipped as i64)));

    if !poses.is_empty() {
        let clusters = cluster_gestures(&poses, args.clusters, args.seed)?;
        let mut members = vec![0usize; clusters.centers.len()];
        for &a in &clusters.assignments {
            members[a] += 1;
        }
        for (i, label) in clusters.labels.iter().enumerate() {
            rows.push(columns(
                blank("cluster"),
                Cell::Int(i as i64),
                Cell::text(label.name()),
                Cell::Int(members[i] as i64),
            ));
        }
        for ((image, annotation, side), &cluster) in owners.iter().zip(&clusters.assignments) {
            rows.push(columns(
                Row::new()
                    .col("kind", Cell::text("hand"))
                    .col("image", Cell::Int(*image as i64))
                    .col("annotation", Cell::Int(*annotation as i64))
                    .col("hand", Cell::text(*side)),
                Cell::Int(cluster as i64),
                Cell::text(clusters.labels[cluster].name()),
                Cell::Missing,
            ));
        }
    }
    write_report(&args.out, &rows, args.report_format)
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
struct RawDetection {
    image_id: u64,
    bbox: Vec<f64>,
    #[serde(default)]
    score: Option<f64>,
}

fn load_detections(path: &Path) -> Result<Vec<Detection>, CliError> {
    let bytes = read(path)?;
    let raw: Vec<RawDetection> =
        serde_json::from_slice(&bytes).map_err(|e| json_input_error(path, &bytes, &e))?;
    raw.into_iter()
        .enumerate()
        .map(|(i, d)| {
            if d.bbox.len() != 4 {
                return Err(CliError::Input(format!(
                    "{}: detection {i} has a {}-element bbox, expected 4",
                    path.display(),
                    d.bbox.len()
                )));
            }
            Ok(Detection {
                image_id: d.image_id,
                bbox: BBox::new(d.bbox[0], d.bbox[1], d.bbox[2], d.bbox[3]),
                score: d.score,
            })
        })
        .collect()
}

pub fn run_pipeline(args: &RunArgs) -> Result<(), CliError> {
    let ds = load_dataset(&args.gt)?;
    let detections = load_detections(&args.boxes)?;

    let mut cfg = PipelineConfig::default();
    cfg.oracle_boxes = args.oracle_boxes;
    if args.oracle_boxes && ds.instances.is_empty() {
        return Err(CliError::Input(
            "--oracle-boxes needs ground-truth annotations, but the --gt file has none".into(),
        ));
    }

    let source = match &args.images {
        Some(dir) => ImageSource::Directory(dir.clone()),
        None => ImageSource::Blank,
    };

    let results = match args.predictor {
        PredictorKind::Stub => {
            if args.blobs.is_some() {
                return Err(CliError::Input(
                    "--blobs applies to the external predictor only".into(),
                ));
            }
            if ds.instances.is_empty() && !detections.is_empty() {
                return Err(CliError::Input(
                    "the stub predictor replays ground truth, but the --gt file has no \
                     annotations"
                        .into(),
                ));
            }
            let mut stub = GtStubPredictor::new(&ds, &cfg);
            if args.box_noise != 0.0 {
                stub = stub.with_box_noise(args.box_noise, args.seed);
            }
            run_dataset(&ds, &detections, &source, &stub, &cfg, None)?
        }
        PredictorKind::External => {
            if args.box_noise != 0.0 {
                return Err(CliError::Input(
                    "--box-noise applies to the stub predictor only".into(),
                ));
            }
            let dir = args.blobs.as_ref().ok_or_else(|| {
                CliError::Input("the external predictor requires --blobs <DIR>".into())
            })?;
            let predictor = BlobPredictor::new(dir.clone(), &cfg);
            run_dataset(&ds, &detections, &source, &predictor, &cfg, None)?
        }
    };

    let out = Dataset {
        images: ds.images.clone(),
        instances: results.into_iter().map(|r| r.instance).collect(),
        sigma_table: None,
        extra: serde_json::Map::new(),
    };
    let bytes = write_dataset(&out)?;
    write_atomic(&args.out, &bytes)
}

// ---------------------------------------------------------------------------
// convert
// ---------------------------------------------------------------------------

pub fn convert(args: &ConvertArgs) -> Result<(), CliError> {
    let ds = load_dataset(&args.input)?;
    let form = match args.feet {
        FootFormArg::Separate => FootForm::Separate,
        FootFormArg::Fused => FootForm::Fused,
    };
    let bytes = write_dataset_as(&ds, form)?;
    write_atomic(&args.out, &bytes)
}

// ---------------------------------------------------------------------------
// sigmas
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
struct RawAnnotators {
    instances: Vec<RawAnnotatorSet>,
}

#[derive(Debug, Deserialize)]
struct RawAnnotatorSet {
    /// Scale normalizer (e.g. the square root of the instance area).
    norm: f64,
    /// One flat `[x, y, v, ...]` array of 133 triplets per annotator.
    annotations: Vec<Vec<f64>>,
}

pub fn sigmas(args: &SigmasArgs) -> Result<(), CliError> {
    let bytes = read(&args.input)?;
    let raw: RawAnnotators =
        serde_json::from_slice(&bytes).map_err(|e| json_input_error(&args.input, &bytes, &e))?;

    let mut store: Vec<(f64, Vec<Vec<Keypoint>>)> = Vec::with_capacity(raw.instances.len());
    for (i, set) in raw.instances.into_iter().enumerate() {
        let mut annotations = Vec::with_capacity(set.annotations.len());
        for (a, flat) in set.annotations.into_iter().enumerate() {
            if flat.len() != 3 * NUM_KEYPOINTS {
                return Err(CliError::Input(format!(
                    "instance {i}, annotator {a}: expected {} numbers ({NUM_KEYPOINTS} \
                     [x, y, v] triplets), got {}",
                    3 * NUM_KEYPOINTS,
                    flat.len()
                )));
            }
            let kps: Vec<Keypoint> = flat
                .chunks_exact(3)
                .enumerate()
                .map(|(k, c)| {
                    let flag = c[2];
                    if flag.fract() != 0.0 || !(0.0..=2.0).contains(&flag) {
                        return Err(CliError::Input(format!(
                            "instance {i}, annotator {a}: keypoint {k} has visibility {flag}, \
                             expected 0, 1 or 2"
                        )));
                    }
                    Ok(Keypoint::new(c[0], c[1], Visibility::from_flag(flag as i64).unwrap()))
                })
                .collect::<Result<_, _>>()?;
            annotations.push(kps);
        }
        store.push((set.norm, annotations));
    }

    let sets: Vec<AnnotatorSet> = store
        .iter()
        .map(|(norm, annotations)| AnnotatorSet {
            norm: *norm,
            annotations: annotations.iter().map(|a| a.as_slice()).collect(),
        })
        .collect();

    let values = derive_sigmas(&sets)?;
    let table = SigmaTable::from_values(values)?;
    write_atomic(&args.out, table.to_config_string().as_bytes())
}
