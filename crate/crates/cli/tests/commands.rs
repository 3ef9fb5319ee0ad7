use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use densepl::synth::{CorruptionSpec, SceneSpec};
use densepl::{parse_dataset, parse_results, write_results, DetectionResults, EvalConfig, Stage, SuppressionConfig};
use densepl_cli::{PipelineConfig, ReportFormat, SuppressionSection, SynthSection};
use proptest::prelude::*;

fn densepl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_densepl"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const THRESHOLDS: [&str; 6] = ["--score-threshold", "0", "--nms-iou", "0.5", "--nms-inter-iou", "0.7"];

fn synth(dir: &Path, extra: &[&str]) {
    let mut args = vec!["synth", "--output", "s"];
    args.extend_from_slice(extra);
    let o = densepl(dir, &args);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn refine_reports_nested_false_positives_removed() {
    let dir = tempfile::tempdir().unwrap();
    // 20 boxes, each with exactly one nested false positive
    synth(dir.path(), &["--density", "20", "--nested-fp-rate", "1", "--drop-rate", "0", "--seed", "3"]);
    let mut args = vec!["refine", "--results", "s/results.json", "--output", "r.json"];
    args.extend_from_slice(&THRESHOLDS);
    let o = densepl(dir.path(), &args);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("NmsInter removed: 20"), "{out}");
    let refined = parse_results(&fs::read(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(refined.num_detections(), 20);
}

#[test]
fn refine_of_empty_results_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("empty.json"), write_results(&DetectionResults::new())).unwrap();
    let mut args = vec!["refine", "--results", "empty.json", "--output", "r.json", "--format", "machine"];
    args.extend_from_slice(&THRESHOLDS);
    let o = densepl(dir.path(), &args);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(summary["output"], 0);
    assert_eq!(fs::read_to_string(dir.path().join("r.json")).unwrap().trim(), "[]");
}

#[test]
fn invalid_threshold_and_bad_input_fail_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.json"), "[{\"image_id\": 1,").unwrap();
    let o = densepl(dir.path(), &["refine", "--results", "bad.json", "--output", "r.json", "--score-threshold", "0.2", "--nms-iou", "1.2", "--nms-inter-iou", "0.7"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("1.2"), "{}", stderr(&o));
    assert!(stdout(&o).is_empty());

    let mut args = vec!["refine", "--results", "bad.json", "--output", "r.json"];
    args.extend_from_slice(&THRESHOLDS);
    let o = densepl(dir.path(), &args);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("line"), "{}", stderr(&o));
    assert!(!dir.path().join("r.json").exists());
}

#[test]
fn eval_prints_perfect_and_empty_map() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &["--density", "30", "--images", "2", "--noise-sigma", "0", "--nested-fp-rate", "0", "--drop-rate", "0"]);
    let gt = parse_dataset(&fs::read(dir.path().join("s/dataset.json")).unwrap()).unwrap();
    let perfect: DetectionResults = gt
        .boxes_by_image()
        .into_iter()
        .map(|(id, b)| (id, b.into_iter().map(|b| densepl::ScoredBox::new(b, 1.0, 1).unwrap()).collect()))
        .collect();
    fs::write(dir.path().join("perfect.json"), write_results(&perfect)).unwrap();
    fs::write(dir.path().join("empty.json"), "[]").unwrap();

    let o = densepl(dir.path(), &["eval", "--gt", "s/dataset.json", "--results", "perfect.json", "--output", "report.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("mAP 1.0000\n"), "{}", stdout(&o));
    let doc: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(doc["map"], 1.0);
    assert_eq!(doc["ap_per_threshold"]["0.75"], 1.0);

    let o = densepl(dir.path(), &["eval", "--gt", "s/dataset.json", "--results", "empty.json"]);
    assert!(stdout(&o).starts_with("mAP 0.0000\n"));
}

#[test]
fn eval_names_unknown_image() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &["--density", "10"]);
    let mut r = DetectionResults::new();
    r.insert(4242, vec![]);
    fs::write(dir.path().join("r.json"), "[{\"image_id\": 4242, \"category_id\": 1, \"bbox\": [0, 0, 1, 1], \"score\": 0.5}]").unwrap();
    let o = densepl(dir.path(), &["eval", "--gt", "s/dataset.json", "--results", "r.json"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("4242"), "{}", stderr(&o));
}

#[test]
fn pseudo_label_chain_and_merge() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, &["--density", "40", "--images", "3", "--seed", "1"]);
    let o = densepl(d, &["synth", "--output", "labeled", "--density", "40", "--images", "2", "--seed", "500"]);
    assert!(o.status.success());

    let mut args = vec!["pseudo-label", "--images", "s/dataset.json", "--results", "s/results.json", "--output", "p0.json", "--teacher-label", "t0", "--created-at", "2024-02-03T04:05:06Z"];
    args.extend_from_slice(&THRESHOLDS);
    let o = densepl(d, &args);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(d.join("p0.manifest.json").exists());

    let mut args = vec!["pseudo-label", "--images", "s/dataset.json", "--results", "s/results.json", "--output", "p1.json", "--prev-manifest", "p0.manifest.json", "--format", "machine"];
    args.extend_from_slice(&THRESHOLDS);
    let o = densepl(d, &args);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(summary["round_index"], 1);

    // edit round 1's output: round 2 refuses to chain onto it
    let mut bytes = fs::read(d.join("p1.json")).unwrap();
    let last = bytes.len() - 2;
    bytes[last] ^= 0x20;
    fs::write(d.join("p1.json"), bytes).unwrap();
    let mut args = vec!["pseudo-label", "--images", "s/dataset.json", "--results", "s/results.json", "--output", "p2.json", "--prev-manifest", "p1.manifest.json"];
    args.extend_from_slice(&THRESHOLDS);
    let o = densepl(d, &args);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("digest"), "{}", stderr(&o));
    assert!(!d.join("p2.json").exists());

    let o = densepl(d, &["merge", "--labeled", "labeled/dataset.json", "--pseudo", "p0.json", "--output", "m.json", "--remap", "remap.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.starts_with("images: 5\n"), "{out}");
    assert!(out.contains("mean density"));
    let labeled = parse_dataset(&fs::read(d.join("labeled/dataset.json")).unwrap()).unwrap();
    let pseudo = parse_dataset(&fs::read(d.join("p0.json")).unwrap()).unwrap();
    let merged = parse_dataset(&fs::read(d.join("m.json")).unwrap()).unwrap();
    assert_eq!(merged.annotations().len(), labeled.annotations().len() + pseudo.annotations().len());

    // same images on both sides
    let o = densepl(d, &["merge", "--labeled", "s/dataset.json", "--pseudo", "p0.json", "--output", "m2.json"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("present in both"), "{}", stderr(&o));
}

#[test]
fn sample_frames_from_results_keyed_by_frame() {
    let dir = tempfile::tempdir().unwrap();
    let b = |n| densepl::ScoredBox::new(densepl::BBox::new(0.0, 0.0, 1.0, 1.0).unwrap(), 0.5, 1).unwrap().with_score(n).unwrap();
    let mut r = DetectionResults::new();
    for (frame, count) in [(1u64, 5usize), (2, 120), (3, 118), (4, 3)] {
        r.insert(frame, (0..count).map(|_| b(0.5)).collect());
    }
    fs::write(dir.path().join("frames.json"), write_results(&r)).unwrap();
    let o = densepl(dir.path(), &["sample-frames", "--results", "frames.json", "--output", "picked.json", "--min-detections", "50", "--temporal-stride", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let picked: Vec<u64> = serde_json::from_slice(&fs::read(dir.path().join("picked.json")).unwrap()).unwrap();
    assert_eq!(picked, vec![2, 3]);
}

#[test]
fn synth_infeasible_spec_fails() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("c.toml"),
        "[synth.scene]\nimage_width = 100\nimage_height = 100\ntarget_density = 50.0\ngrid_rows = 2\ngrid_cols = 2\njitter = 0.1\nseed = 0\n",
    )
    .unwrap();
    let o = densepl(dir.path(), &["synth", "--output", "s", "--config", "c.toml"]);
    assert!(!o.status.success());
    assert!(!stderr(&o).is_empty());
}

#[test]
fn flags_override_file_override_defaults() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("c.toml"),
        "report_format = \"machine\"\n[suppression]\nscore_threshold = 0.4\nnms_iou_threshold = 0.6\n[eval]\nmax_detections = 100\n",
    )
    .unwrap();
    let o = densepl(dir.path(), &["refine", "--config", "c.toml", "--results", "x", "--output", "y", "--nms-iou", "0.3", "--nms-inter-iou", "0.8", "--dump-config"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = PipelineConfig::from_toml(&stdout(&o)).unwrap();
    assert_eq!(cfg.report_format, ReportFormat::Machine);
    assert_eq!(cfg.suppression.resolve().unwrap(), SuppressionConfig::new(0.4, 0.3, 0.8));
    assert_eq!(cfg.eval.max_detections, 100);
    assert_eq!(cfg.eval.iou_thresholds, EvalConfig::default().iou_thresholds);

    fs::write(dir.path().join("typo.toml"), "[suppression]\nscore_treshold = 0.4\n").unwrap();
    let o = densepl(dir.path(), &["refine", "--config", "typo.toml", "--results", "x", "--output", "y"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("score_treshold"), "{}", stderr(&o));
}

#[test]
fn threads_flag_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &["--density", "60", "--images", "8"]);
    for (threads, out) in [("1", "a.json"), ("4", "b.json")] {
        let mut args = vec!["refine", "--threads", threads, "--results", "s/results.json", "--output", out];
        args.extend_from_slice(&THRESHOLDS);
        assert!(densepl(dir.path(), &args).status.success());
    }
    assert_eq!(fs::read(dir.path().join("a.json")).unwrap(), fs::read(dir.path().join("b.json")).unwrap());
}

fn arb_config() -> impl Strategy<Value = PipelineConfig> {
    let threshold = prop::option::of(0.0..=1.0f64);
    let stages = prop::option::of(Just(vec![Stage::NmsInter, Stage::ScoreFilter]));
    (
        (threshold.clone(), threshold.clone(), threshold, stages),
        (1usize..500, 2usize..200, 0usize..300, 1usize..10, prop::option::of(0usize..100)),
        (1usize..50, 1.0..300.0f64, 0..=i64::MAX as u64, 0.0..5.0f64, 0.0..=1.0f64, prop::bool::ANY),
    )
        .prop_map(|((s, u, m, order), (max_det, points, min_det, stride, cap), (images, density, seed, sigma, rate, explicit))| {
            let mut cfg = PipelineConfig {
                report_format: if explicit { ReportFormat::Machine } else { ReportFormat::Table },
                suppression: SuppressionSection { score_threshold: s, nms_iou_threshold: u, nms_inter_iou_threshold: m, stage_order: order },
                eval: EvalConfig { max_detections: max_det, recall_points: points, ..EvalConfig::default() },
                sampler: densepl::FrameSamplerConfig { min_detections: min_det, temporal_stride: stride, max_frames: cap },
                synth: SynthSection {
                    images,
                    density,
                    seed,
                    corruption: CorruptionSpec { coordinate_noise_sigma: sigma, nested_fp_rate: rate, seed, ..CorruptionSpec::default() },
                    ..SynthSection::default()
                },
            };
            if explicit {
                cfg.synth.scene = Some(SceneSpec::shelf(density, seed));
            }
            cfg
        })
}

proptest! {
    #[test]
    fn config_round_trips(cfg in arb_config()) {
        prop_assert_eq!(PipelineConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }

    #[test]
    fn seeds_beyond_toml_range_are_an_error(seed in (i64::MAX as u64 + 1)..=u64::MAX) {
        let cfg = PipelineConfig { synth: SynthSection { seed, ..SynthSection::default() }, ..PipelineConfig::default() };
        prop_assert!(cfg.to_toml().is_err());
    }
}
