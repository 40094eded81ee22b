use std::path::{Path, PathBuf};

use panofix::pipeline::synth::{make_synthetic_case, synthetic_scene, write_case, SyntheticSpec};
use panofix::pipeline::*;
use panofix::projection::extract_perspective;
use panofix::segment::category_mask;
use panofix::stitch::FrameSet;
use panofix::{io, Error, View};

fn config_for(dir: &Path, out: &Path) -> PipelineConfig {
    PipelineConfig {
        precap: dir.join("precap.png"),
        panorama: PanoramaSource::Image {
            path: dir.join("panorama.png"),
            coverage: Some(dir.join("coverage.png")),
        },
        labels_pre: Some(dir.join("labels_pre.png")),
        labels_gen: Some(dir.join("labels_gen.png")),
        palette: Some(dir.join("palette.txt")),
        matches: None,
        out_dir: out.to_path_buf(),
        dump: true,
        options: RunOptions::default(),
    }
}

fn written_case(dir: &Path, (w, h): (usize, usize), seed: u64) {
    let (base, labels) = synthetic_scene(w, h, seed).unwrap();
    let case = make_synthetic_case(&base, &labels, &SyntheticSpec::relight(w, seed)).unwrap();
    write_case(&case, dir).unwrap();
}

const DUMPED: [&str; 13] = [
    "2_panorama",
    "2_coverage",
    "3_aligned",
    "3_coverage",
    "4_labels_pre",
    "4_labels_gen",
    "5_tone",
    "5_residual",
    "6_sky_copy",
    "6_sky_hole",
    "6_sky_copied",
    "6_sky_zenith_filled",
    "6_sky_equirect_filled",
];

fn assert_outputs(out: &Path) {
    for f in ["result.png", "report.txt", "report.kv", "transform.json"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    for name in DUMPED.iter().chain(&["7_result"]) {
        assert!(out.join(format!("{name}.png")).is_file(), "missing {name}.png");
    }
}

#[test]
fn file_run_writes_result_report_and_intermediates() {
    let tmp = tempfile::tempdir().unwrap();
    let (case_dir, out_dir) = (tmp.path().join("case"), tmp.path().join("out"));
    written_case(&case_dir, (480, 240), 21);
    let out = run(&config_for(&case_dir, &out_dir)).unwrap();
    assert_outputs(&out_dir);

    let result = io::read_image::<f64>(out_dir.join("result.png")).unwrap();
    assert_eq!(result.to_u8(), out.image.to_u8());
    let dumped = io::read_image::<f64>(out_dir.join("7_result.png")).unwrap();
    assert_eq!(dumped.to_u8(), out.image.to_u8());

    let kv = std::fs::read_to_string(out_dir.join("report.kv")).unwrap();
    assert!(kv.contains("transform.kind = similarity"));
    for line in kv.lines() {
        let (key, value) = line.split_once(" = ").unwrap();
        if let Ok(v) = value.parse::<f64>() {
            let rounded: f64 = format!("{v:.5e}").parse().unwrap();
            assert_eq!(rounded, v, "{key} = {value} has more than six significant digits");
        }
    }
    let json: TransformRecord =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("transform.json")).unwrap()).unwrap();
    let (a, b) = (json.as_similarity().unwrap(), out.report.transform.as_similarity().unwrap());
    for (x, y) in [(a.sx, b.sx), (a.sy, b.sy), (a.tx, b.tx), (a.ty, b.ty)] {
        assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
    }
    let text = std::fs::read_to_string(out_dir.join("report.txt")).unwrap();
    assert!(text.contains("3-align") && text.contains("similarity"));
}

#[test]
fn file_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let case_dir = tmp.path().join("case");
    written_case(&case_dir, (480, 240), 22);
    let mut cfg = config_for(&case_dir, &tmp.path().join("a"));
    cfg.dump = false;
    run(&cfg).unwrap();
    cfg.out_dir = tmp.path().join("b");
    run(&cfg).unwrap();
    let read = |d: &str| std::fs::read(tmp.path().join(d).join("result.png")).unwrap();
    assert_eq!(read("a"), read("b"));
    let json = |d: &str| std::fs::read_to_string(tmp.path().join(d).join("transform.json")).unwrap();
    assert_eq!(json("a"), json("b"));
}

#[test]
fn default_coverage_comes_from_non_black_pixels() {
    let tmp = tempfile::tempdir().unwrap();
    let case_dir = tmp.path().join("case");
    written_case(&case_dir, (480, 240), 23);
    let mut cfg = config_for(&case_dir, &tmp.path().join("out"));
    cfg.panorama = PanoramaSource::Image {
        path: case_dir.join("panorama.png"),
        coverage: None,
    };
    let out = run(&cfg).unwrap();
    let t = out.report.transform.as_similarity().unwrap();
    let truth = SyntheticSpec::relight(480, 23).transform;
    assert!(t.corner_displacement(&truth, 480.0, 240.0, 480.0) < 1.0);
}

#[test]
fn validation_fails_before_any_compute() {
    let tmp = tempfile::tempdir().unwrap();
    let case_dir = tmp.path().join("case");
    written_case(&case_dir, (128, 64), 24);
    let out_dir = tmp.path().join("out");
    let good = config_for(&case_dir, &out_dir);
    good.validate().unwrap();

    let mut missing_palette = good.clone();
    missing_palette.palette = Some(case_dir.join("nope.txt"));
    let mut no_palette = good.clone();
    no_palette.palette = None;
    let mut one_label = good.clone();
    one_label.labels_gen = None;
    let mut no_labels = good.clone();
    no_labels.labels_pre = None;
    no_labels.labels_gen = None;
    let mut missing_frames = good.clone();
    missing_frames.panorama = PanoramaSource::Frames {
        dir: case_dir.join("frames"),
        hfov_deg: 90.0,
        frame_step: None,
    };
    let mut bad_matches = good.clone();
    bad_matches.matches = Some(PathBuf::from("/nonexistent/m.csv"));
    let mut bad_rounds = good.clone();
    bad_rounds.options.rounds = 0;
    for cfg in [missing_palette, no_palette, one_label, no_labels, missing_frames, bad_matches, bad_rounds] {
        match run(&cfg) {
            Err(Error::Config(msg)) => assert!(!msg.is_empty()),
            other => panic!("expected a configuration error, got {other:?}"),
        }
    }
    assert!(!out_dir.exists(), "nothing may be written on a validation error");

    let mut fallback = good.clone();
    fallback.labels_pre = None;
    fallback.labels_gen = None;
    fallback.options.fallback_sky = true;
    fallback.validate().unwrap();
}

#[test]
fn unreadable_input_is_a_load_stage_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let case_dir = tmp.path().join("case");
    written_case(&case_dir, (128, 64), 25);
    std::fs::write(case_dir.join("precap.png"), b"not a png").unwrap();
    match run(&config_for(&case_dir, &tmp.path().join("out"))) {
        Err(Error::Stage { stage, .. }) => assert_eq!(stage, "1-load"),
        other => panic!("expected a stage error, got {other:?}"),
    }
}

#[test]
fn frames_are_stitched_then_calibrated() {
    let (w, h) = (720, 360);
    let (base, labels) = synthetic_scene(w, h, 26).unwrap();
    let mut spec = SyntheticSpec::relight(w, 26);
    spec.coverage = panofix::pipeline::synth::CoverageWindow::full();
    spec.transform = panofix::Similarity::identity();
    let case = make_synthetic_case(&base, &labels, &spec).unwrap();
    // a level sweep starting straight ahead, so the composite shares the world frame
    let frames = (0..12)
        .map(|k| {
            let view = View::new((30.0 * k as f64).to_radians(), 0.0, 0.0, 100f64.to_radians(), 320, 240).unwrap();
            extract_perspective(&case.ground_truth, &view)
        })
        .collect();
    let fs = FrameSet::new(frames, 100f64.to_radians()).unwrap();
    let inputs = Inputs {
        precap: case.precap.clone(),
        panorama: PanoramaInput::Frames {
            frames: fs,
            step: Some(1),
        },
        labels: Some((case.pre_labels.clone(), case.gen_labels.clone())),
        matches: None,
    };
    let out = run_on(inputs, &RunOptions::default()).unwrap();
    assert_eq!(out.report.frames_used, 12);
    assert!(out.report.stitch_inliers.iter().all(|&n| n >= 8));
    let t = out.report.transform.as_similarity().unwrap();
    let d = t.corner_displacement(&panofix::Similarity::identity(), w as f64, h as f64, w as f64);
    assert!(d < 2.0, "transform {t:?}");
    let Some(Artifact::Mask(cover)) = out.artifact("3_coverage") else {
        panic!("no coverage");
    };
    let earth = category_mask(&labels, labels.id_of("earth").unwrap(), Some(cover)).unwrap();
    assert!(earth.count() > 5000);
    let gt = case.ground_truth.as_raster();
    let before = panofix::pipeline::synth::median_abs_error(case.precap.as_raster(), gt, &earth).unwrap();
    let after = panofix::pipeline::synth::median_abs_error(out.image.as_raster(), gt, &earth).unwrap();
    assert!(after < 0.5 * before, "earth median error {before} -> {after}");
}

#[test]
fn full_size_fixture_completes_with_all_intermediates() {
    let tmp = tempfile::tempdir().unwrap();
    let (case_dir, out_dir) = (tmp.path().join("case"), tmp.path().join("out"));
    written_case(&case_dir, (1810, 906), 27);
    let out = run(&config_for(&case_dir, &out_dir)).unwrap();
    assert_outputs(&out_dir);
    assert_eq!(out.image.dims(), (1810, 906));
    let sky = io::read_mask(out_dir.join("6_sky_hole.png")).unwrap();
    let zen = io::read_mask(out_dir.join("6_sky_zenith_filled.png")).unwrap();
    let eq = io::read_mask(out_dir.join("6_sky_equirect_filled.png")).unwrap();
    assert_eq!(zen.or(&eq), sky);
}
