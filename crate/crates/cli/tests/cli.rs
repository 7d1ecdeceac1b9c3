//! End-to-end subcommand tests driving the binary entry point in-process:
//! fixtures on disk in, exit codes and report files out.

use std::path::{Path, PathBuf};

use clap::Parser;
use tempfile::TempDir;

use wholebody::anno::{write_dataset, Dataset, PersonInstance};
use wholebody::eval::SigmaTable;
use wholebody::pipeline::blob_path;
use wholebody::synth::{generate, jitter_instances, SynthConfig};
use wholebody_cli::{main_with_args, run, Cli, CliError};

// ---------------------------------------------------------------------------
// Fixture plumbing.
// ---------------------------------------------------------------------------

fn write(dir: &Path, name: &str, bytes: &[u8]) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, bytes).unwrap();
    path
}

fn write_gt(dir: &Path, ds: &Dataset) -> PathBuf {
    write(dir, "gt.json", &write_dataset(ds).unwrap())
}

fn write_dt(dir: &Path, gt: &Dataset, instances: Vec<PersonInstance>) -> PathBuf {
    let ds = Dataset { images: gt.images.clone(), instances, ..Dataset::default() };
    write(dir, "dt.json", &write_dataset(&ds).unwrap())
}

fn write_sigmas(dir: &Path, k: f64) -> PathBuf {
    write(dir, "sigmas.txt", SigmaTable::uniform(k).to_config_string().as_bytes())
}

/// Ground-truth person boxes as a detection array, score 0.9.
fn write_boxes(dir: &Path, ds: &Dataset) -> PathBuf {
    let arr: Vec<serde_json::Value> = ds
        .instances
        .iter()
        .map(|i| {
            serde_json::json!({
                "image_id": i.image_id,
                "bbox": [i.person_box.x, i.person_box.y, i.person_box.w, i.person_box.h],
                "score": 0.9,
            })
        })
        .collect();
    write(dir, "boxes.json", serde_json::to_string(&arr).unwrap().as_bytes())
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Run the CLI in-process, asserting the expected exit code.
fn cli(code: i32, args: &[&str]) {
    let mut argv = vec!["wholebody"];
    argv.extend_from_slice(args);
    assert_eq!(main_with_args(argv.clone()), code, "args: {argv:?}");
}

/// Run and return the command's error for message inspection.
fn cli_err(args: &[&str]) -> CliError {
    let mut argv = vec!["wholebody"];
    argv.extend_from_slice(args);
    run(Cli::try_parse_from(argv).unwrap()).unwrap_err()
}

/// Parse a TSV report into header + rows.
fn read_tsv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().unwrap().split('\t').map(str::to_owned).collect();
    let rows = lines.map(|l| l.split('\t').map(str::to_owned).collect()).collect();
    (header, rows)
}

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

#[test]
fn eval_of_perfect_predictions_reports_ap_one_everywhere() {
    let tmp = TempDir::new().unwrap();
    let gt = generate(&SynthConfig { images: 6, seed: 3, ..Default::default() });
    let gt_path = write_gt(tmp.path(), &gt);
    let dt_path = write_dt(tmp.path(), &gt, jitter_instances(&gt, 5, 0.0, 0.0));
    let sig = write_sigmas(tmp.path(), 0.05);
    let out = tmp.path().join("report.tsv");

    cli(0, &[
        "eval", "--gt", s(&gt_path), "--dt", s(&dt_path), "--sigmas", s(&sig), "--out", s(&out),
    ]);

    let (header, rows) = read_tsv(&out);
    assert_eq!(rows.len(), 5);
    let (ap, ar) = (column(&header, "ap"), column(&header, "ar"));
    for row in &rows {
        assert_eq!(row[ap], "1.000", "part {}: {row:?}", row[0]);
        assert_eq!(row[ar], "1.000", "part {}: {row:?}", row[0]);
    }
    let parts: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(parts, ["body", "foot", "face", "hand", "wholebody"]);
}

#[test]
fn parts_flag_selects_a_subset_of_the_full_report() {
    let tmp = TempDir::new().unwrap();
    let gt = generate(&SynthConfig { images: 5, seed: 11, ..Default::default() });
    let gt_path = write_gt(tmp.path(), &gt);
    let dt_path = write_dt(tmp.path(), &gt, jitter_instances(&gt, 2, 0.01, 0.1));
    let sig = write_sigmas(tmp.path(), 0.05);
    let full = tmp.path().join("full.tsv");
    let subset = tmp.path().join("subset.tsv");

    let base = ["--gt", s(&gt_path), "--dt", s(&dt_path), "--sigmas", s(&sig)];
    cli(0, &[&["eval"], &base[..], &["--out", s(&full)]].concat());
    cli(0, &[&["eval"], &base[..], &["--out", s(&subset), "--parts", "face,hand"]].concat());

    let full_text = std::fs::read_to_string(&full).unwrap();
    let subset_text = std::fs::read_to_string(&subset).unwrap();
    let expected: Vec<&str> = full_text
        .lines()
        .filter(|l| l.starts_with("face\t") || l.starts_with("hand\t"))
        .collect();
    let got: Vec<&str> = subset_text.lines().skip(1).collect();
    assert_eq!(got, expected, "subset rows must match the full report");
}

#[test]
fn eval_jsonl_report_carries_full_precision() {
    let tmp = TempDir::new().unwrap();
    let gt = generate(&SynthConfig { images: 4, seed: 7, ..Default::default() });
    let gt_path = write_gt(tmp.path(), &gt);
    let dt_path = write_dt(tmp.path(), &gt, jitter_instances(&gt, 9, 0.0, 0.0));
    let sig = write_sigmas(tmp.path(), 0.05);
    let out = tmp.path().join("report.jsonl");

    cli(0, &[
        "eval", "--gt", s(&gt_path), "--dt", s(&dt_path), "--sigmas", s(&sig),
        "--out", s(&out), "--report-format", "jsonl",
    ]);

    let text = std::fs::read_to_string(&out).unwrap();
    let rows: Vec<serde_json::Value> =
        text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 5);
    for row in &rows {
        assert_eq!(row["ap"], serde_json::json!(1.0));
        assert!(row["num_gt"].as_i64().unwrap() > 0);
    }
}

#[test]
fn corrupt_dt_file_exits_two_and_names_the_byte_offset() {
    let tmp = TempDir::new().unwrap();
    let gt = generate(&SynthConfig { images: 2, seed: 1, ..Default::default() });
    let gt_path = write_gt(tmp.path(), &gt);
    // The stray 'b' sits at byte 13.
    let dt_path = write(tmp.path(), "dt.json", br#"{"images": []broken"#);
    let sig = write_sigmas(tmp.path(), 0.05);
    let out = tmp.path().join("report.tsv");

    let args = [
        "eval", "--gt", s(&gt_path), "--dt", s(&dt_path), "--sigmas", s(&sig), "--out", s(&out),
    ];
    cli(2, &args);
    let msg = cli_err(&args).to_string();
    assert!(msg.contains("byte 13"), "{msg}");
    assert!(!out.exists(), "no partial report on failure");
}

#[test]
fn bad_sigma_config_exits_two() {
    let tmp = TempDir::new().unwrap();
    let gt = generate(&SynthConfig { images: 2, seed: 1, ..Default::default() });
    let gt_path = write_gt(tmp.path(), &gt);
    let dt_path = write_dt(tmp.path(), &gt, jitter_instances(&gt, 5, 0.0, 0.0));
    let sig = write(tmp.path(), "sigmas.txt", b"0.1 0.2 0.3\n");
    let out = tmp.path().join("report.tsv");

    cli(2, &[
        "eval", "--gt", s(&gt_path), "--dt", s(&dt_path), "--sigmas", s(&sig), "--out", s(&out),
    ]);
    // The flag itself is required: omitting it is a usage error, same code.
    cli(2, &["eval", "--gt", s(&gt_path), "--dt", s(&dt_path), "--out", s(&out)]);
}

// ---------------------------------------------------------------------------
// diagnose
// ---------------------------------------------------------------------------

#[test]
fn diagnose_on_perfect_predictions_is_all_good() {
    let tmp = TempDir::new().unwrap();
    let gt = generate(&SynthConfig { images: 5, seed: 21, ..Default::default() });
    let gt_path = write_gt(tmp.path(), &gt);
    let dt_path = write_dt(tmp.path(), &gt, jitter_instances(&gt, 4, 0.0, 0.0));
    let sig = write_sigmas(tmp.path(), 0.05);
    let out = tmp.path().join("diagnose.tsv");

    cli(0, &[
        "diagnose", "--gt", s(&gt_path), "--dt", s(&dt_path), "--sigmas", s(&sig),
        "--out", s(&out),
    ]);

    let (header, rows) = read_tsv(&out);
    let kind = column(&header, "kind");
    let category = column(&header, "category");
    let value = column(&header, "value");
    let part = column(&header, "part");

    let pie = |p: &str, c: &str| -> &str {
        &rows
            .iter()
            .find(|r| r[kind] == "pie" && r[part] == p && r[category] == c)
            .unwrap()[value]
    };
    for p in ["body", "foot", "face", "hand", "wholebody"] {
        assert_eq!(pie(p, "good"), "1.0000", "{p}");
        assert_eq!(pie(p, "miss"), "0.0000", "{p}");
    }
    let full = rows.iter().find(|r| r[kind] == "ap-full-correction").unwrap();
    assert_eq!(full[value], "1.000");
    let before = rows
        .iter()
        .find(|r| r[kind] == "ap-before" && r[3] == "-")
        .unwrap();
    assert_eq!(before[value], "1.000");
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

#[test]
fn stub_run_feeds_eval_above_099() {
    let tmp = TempDir::new().unwrap();
    let gt = generate(&SynthConfig { images: 8, max_persons: 2, seed: 31, ..Default::default() });
    let gt_path = write_gt(tmp.path(), &gt);
    let boxes = write_boxes(tmp.path(), &gt);
    let preds = tmp.path().join("preds.json");

    cli(0, &[
        "run", "--gt", s(&gt_path), "--boxes", s(&boxes), "--predictor", "stub",
        "--out", s(&preds),
    ]);

    let sig = write_sigmas(tmp.path(), 0.05);
    let report = tmp.path().join("report.tsv");
    cli(0, &[
        "eval", "--gt", s(&gt_path), "--dt", s(&preds), "--sigmas", s(&sig),
        "--out", s(&report),
    ]);

    let (header, rows) = read_tsv(&report);
    let ap = column(&header, "ap");
    for row in &rows {
        let v: f64 = row[ap].parse().unwrap();
        assert!(v >= 0.99, "part {} at {v}", row[0]);
    }
}

#[test]
fn empty_boxes_file_writes_empty_predictions_and_exits_zero() {
    let tmp = TempDir::new().unwrap();
    let gt = generate(&SynthConfig { images: 3, seed: 2, ..Default::default() });
    let gt_path = write_gt(tmp.path(), &gt);
    let boxes = write(tmp.path(), "boxes.json", b"[]");
    let preds = tmp.path().join("preds.json");

    cli(0, &[
        "run", "--gt", s(&gt_path), "--boxes", s(&boxes), "--predictor", "stub",
        "--out", s(&preds),
    ]);

    let out = wholebody::anno::parse_dataset(&std::fs::read(&preds).unwrap()).unwrap();
    assert!(out.instances.is_empty());
    assert_eq!(out.images.len(), 3);
}

#[test]
fn external_mode_without_blobs_exits_two_naming_the_instance() {
    let tmp = TempDir::new().unwrap();
    let gt = generate(&SynthConfig { images: 2, max_persons: 1, seed: 6, ..Default::default() });
    let gt_path = write_gt(tmp.path(), &gt);
    let boxes = write_boxes(tmp.path(), &gt);
    let blobs = tmp.path().join("blobs");
    std::fs::create_dir(&blobs).unwrap();
    let preds = tmp.path().join("preds.json");

    let args = [
        "run", "--gt", s(&gt_path), "--boxes", s(&boxes), "--predictor", "external",
        "--blobs", s(&blobs), "--out", s(&preds),
    ];
    cli(2, &args);
    let msg = cli_err(&args).to_string();
    assert!(msg.contains("missing body blob for person 0 of image"), "{msg}");

    // A malformed blob is the same failure class.
    let first_image = gt.images[0].id;
    std::fs::write(blob_path(&blobs, first_image, 0, "body"), b"garbage").unwrap();
    cli(2, &args);
}

#[test]
fn run_flag_combinations_are_validated() {
    let tmp = TempDir::new().unwrap();
    let gt = generate(&SynthConfig { images: 2, seed: 2, ..Default::default() });
    let gt_path = write_gt(tmp.path(), &gt);
    let boxes = write_boxes(tmp.path(), &gt);
    let preds = tmp.path().join("preds.json");

    // --blobs with the stub predictor.
    cli(2, &[
        "run", "--gt", s(&gt_path), "--boxes", s(&boxes), "--predictor", "stub",
        "--blobs", "/tmp", "--out", s(&preds),
    ]);
    // external without --blobs.
    cli(2, &[
        "run", "--gt", s(&gt_path), "--boxes", s(&boxes), "--predictor", "external",
        "--out", s(&preds),
    ]);
    // --box-noise with external.
    cli(2, &[
        "run", "--gt", s(&gt_path), "--boxes", s(&boxes), "--predictor", "external",
        "--blobs", "/tmp", "--box-noise", "0.1", "--out", s(&preds),
    ]);
}

// ---------------------------------------------------------------------------
// stats
// ---------------------------------------------------------------------------

#[test]
fn counts_report_matches_the_library_tally() {
    let tmp = TempDir::new().unwrap();
    let gt = generate(&SynthConfig { images: 6, part_dropout: 0.3, seed: 13, ..Default::default() });
    let gt_path = write_gt(tmp.path(), &gt);
    let out = tmp.path().join("counts.tsv");

    cli(0, &["stats", "counts", "--input", s(&gt_path), "--out", s(&out)]);

    let c = wholebody::stats::count_annotations(&gt);
    let (header, rows) = read_tsv(&out);
    let metric = column(&header, "metric");
    let value = column(&header, "value");
    let get = |name: &str| -> usize {
        rows.iter().find(|r| r[metric] == name).unwrap()[value].parse().unwrap()
    };
    assert_eq!(get("images"), 6);
    assert_eq!(get("instances"), c.instances);
    assert_eq!(get("face-boxes"), c.face_boxes);
    assert_eq!(get("hand-boxes"), c.hand_boxes());
    assert_eq!(get("total-keypoints"), c.total_keypoints);
}

#[test]
fn scale_report_has_summary_and_bins() {
    let tmp = TempDir::new().unwrap();
    let gt = generate(&SynthConfig { images: 6, seed: 17, ..Default::default() });
    let gt_path = write_gt(tmp.path(), &gt);
    let out = tmp.path().join("scale.tsv");

    cli(0, &[
        "stats", "scale", "--input", s(&gt_path), "--out", s(&out),
        "--bin-width", "4", "--parts", "body,face",
    ]);

    let (header, rows) = read_tsv(&out);
    let kind = column(&header, "kind");
    let part = column(&header, "part");
    let count = column(&header, "count");
    let samples = column(&header, "samples");

    let parts: std::collections::HashSet<&str> =
        rows.iter().map(|r| r[part].as_str()).collect();
    assert_eq!(parts, ["body", "face"].into_iter().collect());

    for p in ["body", "face"] {
        let summary = rows.iter().find(|r| r[kind] == "summary" && r[part] == p).unwrap();
        let n: u64 = summary[samples].parse().unwrap();
        assert_eq!(n as usize, gt.instances.len(), "{p}: every instance contributes");
        let bin_total: u64 = rows
            .iter()
            .filter(|r| r[kind] == "bin" && r[part] == p)
            .map(|r| r[count].parse::<u64>().unwrap())
            .sum();
        assert_eq!(bin_total, n, "{p}: bins account for every sample");
    }
}

#[test]
fn gesture_report_labels_every_hand() {
    let tmp = TempDir::new().unwrap();
    let gt = generate(&SynthConfig { images: 8, seed: 19, ..Default::default() });
    let gt_path = write_gt(tmp.path(), &gt);
    let out = tmp.path().join("gestures.tsv");

    cli(0, &[
        "stats", "gestures", "--input", s(&gt_path), "--out", s(&out), "--clusters", "2",
    ]);

    let (header, rows) = read_tsv(&out);
    let kind = column(&header, "kind");
    let label = column(&header, "label");
    let members = column(&header, "members");

    let hands: Vec<_> = rows.iter().filter(|r| r[kind] == "hand").collect();
    assert_eq!(hands.len(), 2 * gt.instances.len(), "all synth hands are complete");
    for h in &hands {
        assert!(["fist", "palm", "others"].contains(&h[label].as_str()));
    }
    let cluster_members: u64 = rows
        .iter()
        .filter(|r| r[kind] == "cluster")
        .map(|r| r[members].parse::<u64>().unwrap())
        .sum();
    assert_eq!(cluster_members as usize, hands.len());
}

// ---------------------------------------------------------------------------
// convert / sigmas
// ---------------------------------------------------------------------------

#[test]
fn convert_round_trip_preserves_content() {
    let tmp = TempDir::new().unwrap();
    let gt = generate(&SynthConfig { images: 4, part_dropout: 0.2, seed: 23, ..Default::default() });
    let gt_path = write_gt(tmp.path(), &gt);
    let fused = tmp.path().join("fused.json");
    let separate = tmp.path().join("separate.json");
    let fused_again = tmp.path().join("fused2.json");

    cli(0, &["convert", "--input", s(&gt_path), "--out", s(&fused), "--feet", "fused"]);
    cli(0, &["convert", "--input", s(&fused), "--out", s(&separate), "--feet", "separate"]);
    cli(0, &["convert", "--input", s(&separate), "--out", s(&fused_again), "--feet", "fused"]);

    // fused → separate → fused is the identity on bytes, and every stop
    // parses to the same dataset (the canonical two-decimal form of the
    // original).
    assert_eq!(std::fs::read(&fused).unwrap(), std::fs::read(&fused_again).unwrap());
    let a = wholebody::anno::parse_dataset(&std::fs::read(&fused).unwrap()).unwrap();
    let b = wholebody::anno::parse_dataset(&std::fs::read(&separate).unwrap()).unwrap();
    let canonical = wholebody::anno::parse_dataset(&std::fs::read(&gt_path).unwrap()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, canonical);

    // The fused file really is fused: 69-number keypoints, no foot_kpts key.
    let raw: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&fused).unwrap()).unwrap();
    let ann = &raw["annotations"][0];
    assert_eq!(ann["keypoints"].as_array().unwrap().len(), 69);
    assert!(ann.get("foot_kpts").is_none());
}

#[test]
fn sigmas_command_matches_direct_derivation() {
    use wholebody::anno::{Keypoint, NUM_KEYPOINTS};
    use wholebody::eval::{derive_sigmas, AnnotatorSet};

    // Three annotators per instance: base, +δ, −δ on x. The library call on
    // the same data is the reference; the command must reproduce its table.
    let base: Vec<(f64, f64)> =
        (0..NUM_KEYPOINTS).map(|i| (10.0 + i as f64, 20.0 + (i % 7) as f64)).collect();
    let mut instances = Vec::new();
    for (norm, delta) in [(100.0, 1.5), (80.0, 0.8)] {
        let annos: Vec<Vec<f64>> = [-delta, 0.0, delta]
            .iter()
            .map(|d| {
                base.iter().flat_map(|(x, y)| [x + d, *y, 2.0]).collect::<Vec<f64>>()
            })
            .collect();
        instances.push(serde_json::json!({ "norm": norm, "annotations": annos }));
    }
    let doc = serde_json::json!({ "instances": instances });

    let tmp = TempDir::new().unwrap();
    let input = write(tmp.path(), "annotators.json", doc.to_string().as_bytes());
    let out = tmp.path().join("sigmas.txt");
    cli(0, &["sigmas", "--input", s(&input), "--out", s(&out)]);

    // Reference via the library on identical keypoints.
    let sets_data: Vec<(f64, Vec<Vec<Keypoint>>)> = [(100.0, 1.5), (80.0, 0.8)]
        .iter()
        .map(|&(norm, delta)| {
            let annos = [-delta, 0.0, delta]
                .iter()
                .map(|d| base.iter().map(|(x, y)| Keypoint::visible(x + d, *y)).collect())
                .collect();
            (norm, annos)
        })
        .collect();
    let sets: Vec<AnnotatorSet> = sets_data
        .iter()
        .map(|(norm, annos)| AnnotatorSet {
            norm: *norm,
            annotations: annos.iter().map(|a| a.as_slice()).collect(),
        })
        .collect();
    let want = SigmaTable::from_values(derive_sigmas(&sets).unwrap()).unwrap();

    let got = SigmaTable::parse(&std::fs::read_to_string(&out).unwrap()).unwrap();
    for i in 0..NUM_KEYPOINTS {
        assert!((got.k(i) - want.k(i)).abs() < 1e-12, "keypoint {i}");
    }
}

// ---------------------------------------------------------------------------
// Determinism.
// ---------------------------------------------------------------------------

#[test]
fn outputs_are_byte_identical_across_runs_and_worker_counts() {
    let tmp = TempDir::new().unwrap();
    let gt = generate(&SynthConfig { images: 6, seed: 37, ..Default::default() });
    let gt_path = write_gt(tmp.path(), &gt);
    let boxes = write_boxes(tmp.path(), &gt);

    let mut runs = Vec::new();
    for (tag, jobs) in [("a", "1"), ("b", "4"), ("c", "4")] {
        let preds = tmp.path().join(format!("preds_{tag}.json"));
        let gestures = tmp.path().join(format!("gestures_{tag}.tsv"));
        cli(0, &[
            "run", "--gt", s(&gt_path), "--boxes", s(&boxes), "--predictor", "stub",
            "--box-noise", "0.1", "--seed", "42", "--out", s(&preds), "--jobs", jobs,
        ]);
        cli(0, &[
            "stats", "gestures", "--input", s(&gt_path), "--out", s(&gestures),
            "--seed", "42", "--jobs", jobs,
        ]);
        runs.push((std::fs::read(&preds).unwrap(), std::fs::read(&gestures).unwrap()));
    }
    assert_eq!(runs[0], runs[1], "jobs=1 vs jobs=4");
    assert_eq!(runs[1], runs[2], "repeated run");
}
