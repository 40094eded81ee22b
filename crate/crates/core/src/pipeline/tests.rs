use super::synth::*;
use super::*;
use crate::segment::{category_mask, SKY};

fn inputs(case: &SyntheticCase) -> Inputs<f64> {
    Inputs {
        precap: case.precap.clone(),
        panorama: PanoramaInput::Image {
            image: case.panorama.clone(),
            cover: case.pano_cover.clone(),
        },
        labels: Some((case.pre_labels.clone(), case.gen_labels.clone())),
        matches: None,
    }
}

fn small_case(seed: u64) -> SyntheticCase {
    let (base, labels) = synthetic_scene(480, 240, seed).unwrap();
    make_synthetic_case(&base, &labels, &SyntheticSpec::relight(480, seed)).unwrap()
}

fn mean_abs(a: &RasterImage<f64>, b: &RasterImage<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.data().len() as f64
}

fn non_sky(labels: &LabelMap) -> BitMask {
    let sky = category_mask(labels, labels.id_of(SKY).unwrap(), None).unwrap();
    sky.not()
}

#[test]
fn identity_case_is_the_base() {
    let (base, labels) = synthetic_scene(128, 64, 1).unwrap();
    let case = make_synthetic_case(&base, &labels, &SyntheticSpec::identity()).unwrap();
    assert_eq!(case.ground_truth.data(), base.data());
    assert_eq!(case.panorama.data(), base.data());
    assert_eq!(case.gen_labels.ids(), labels.ids());
    assert!(case.pano_cover.bits().iter().all(|&b| b));
}

#[test]
fn brightening_one_category_changes_exactly_that_category() {
    let (base, labels) = synthetic_scene(128, 64, 2).unwrap();
    let mut spec = SyntheticSpec::identity();
    spec.curves.insert("building".into(), ToneCurve::brighten(40.0 / 255.0));
    let case = make_synthetic_case(&base, &labels, &spec).unwrap();
    let building = category_mask(&labels, labels.id_of("building").unwrap(), None).unwrap();
    assert!(building.any());
    for i in 0..128 * 64 {
        let changed = case.ground_truth.pixel_at(i) != base.pixel_at(i);
        assert_eq!(changed, building.bits()[i], "pixel {i}");
    }
}

#[test]
fn coverage_window_wraps_through_the_seam() {
    let win = CoverageWindow {
        lon_min: 150.0,
        lon_max: -150.0,
        lat_min: -90.0,
        lat_max: 90.0,
    };
    assert!(win.contains(179.0, 0.0) && win.contains(-179.0, 0.0));
    assert!(!win.contains(0.0, 0.0));
    let m = win.mask(360, 180);
    assert_eq!(m.count(), 60 * 180);
}

#[test]
fn scene_covers_every_category_with_wide_textures() {
    let (img, labels) = synthetic_scene(480, 240, 3).unwrap();
    for (&id, name) in labels.palette() {
        let m = category_mask(&labels, id, None).unwrap();
        assert!(m.count() > 1000, "{name} has {} px", m.count());
        if name == SKY {
            continue;
        }
        for c in 0..3 {
            let vals: Vec<f64> = m.iter_set().map(|i| img.pixel_at(i)[c]).collect();
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!(hi - lo > 0.5, "{name} channel {c} spans {lo}..{hi}");
        }
    }
}

#[test]
fn score_of_perfect_and_uncorrected_results() {
    let case = small_case(4);
    let gt = case.ground_truth.as_raster();
    let pre = case.precap.as_raster();
    let m = score(gt, gt, pre, &case.pre_labels).unwrap();
    assert_eq!(m.mae, 0.0);
    assert_eq!(m.improvement, 1.0);
    assert!(m.categories.iter().all(|c| c.mae == 0.0 && c.median == 0.0 && c.cdf_distance == 0.0));
    assert_eq!(m.sky_mae, Some(0.0));
    let m = score(pre, gt, pre, &case.pre_labels).unwrap();
    assert_eq!(m.improvement, 0.0);
    // an exact baseline reports no improvement rather than dividing by zero
    let m = score(gt, gt, gt, &case.pre_labels).unwrap();
    assert_eq!(m.improvement, 0.0);
}

#[test]
fn score_matches_hand_computed_micro_fixture() {
    // 64x32 mid gray; left half building, right half tree
    let (w, h) = (64, 32);
    let base = EquirectImage::new(RasterImage::filled(w, h, &[0.5, 0.5, 0.5]).unwrap()).unwrap();
    let palette = [(0u8, "sky"), (1, "tree"), (2, "building")]
        .iter()
        .map(|&(i, n)| (i, n.to_string()))
        .collect();
    let ids = (0..w * h).map(|i| if i % w < w / 2 { 2 } else { 1 }).collect();
    let labels = LabelMap::new(w, h, ids, palette).unwrap();
    let mut spec = SyntheticSpec::identity();
    spec.curves.insert("building".into(), ToneCurve::brighten(40.0 / 255.0));
    let case = make_synthetic_case(&base, &labels, &spec).unwrap();
    // a result that gets halfway on the building
    let result = RasterImage::from_fn(w, h, 3, |x, _, p: &mut [f64]| {
        p.fill(if x < w / 2 { 0.5 + 20.0 / 255.0 } else { 0.5 })
    })
    .unwrap();
    let m = score(&result, case.ground_truth.as_raster(), base.as_raster(), &labels).unwrap();
    // baseline error 40/255 on half the pixels, result 20/255 on the same half
    assert!((m.baseline_mae - 20.0 / 255.0).abs() < 1e-12);
    assert!((m.mae - 10.0 / 255.0).abs() < 1e-12);
    assert!((m.improvement - 0.5).abs() < 1e-12);
    let building = m.categories.iter().find(|c| c.name == "building").unwrap();
    assert!((building.mae - 20.0 / 255.0).abs() < 1e-12);
    assert!((building.median - 20.0 / 255.0).abs() < 1e-12);
    assert_eq!(building.pixels, 32 * 32);
    let tree = m.categories.iter().find(|c| c.name == "tree").unwrap();
    assert_eq!(tree.mae, 0.0);
    assert_eq!(m.sky_mae, None);
}

#[test]
fn score_rejects_mismatched_dims() {
    let a = RasterImage::<f64>::new(8, 4, 3).unwrap();
    let b = RasterImage::<f64>::new(4, 2, 3).unwrap();
    let labels = LabelMap::new(8, 4, vec![0; 32], scene_palette()).unwrap();
    assert!(matches!(score(&a, &b, &a, &labels), Err(Error::DimensionMismatch { .. })));
}

#[test]
fn panorama_equal_to_precap_is_a_fixed_point() {
    let (base, labels) = synthetic_scene(480, 240, 5).unwrap();
    let case = make_synthetic_case(&base, &labels, &SyntheticSpec::identity()).unwrap();
    let out = run_on(inputs(&case), &RunOptions::default()).unwrap();
    assert!(mean_abs(out.image.as_raster(), base.as_raster()) < 2.0 / 255.0);
    let t = out.report.transform.as_similarity().unwrap();
    let d = t.corner_displacement(&SimilarityTransform2D::identity(), 480.0, 240.0, 480.0);
    assert!(d < 0.5, "transform {t:?}");
}

#[test]
fn relight_recovers_transform_and_reduces_error() {
    let case = small_case(6);
    let out = run_on(inputs(&case), &RunOptions::default()).unwrap();
    let t = out.report.transform.as_similarity().unwrap();
    let d = t.corner_displacement(&case.transform, 480.0, 240.0, 480.0);
    assert!(d < 1.0, "corner displacement {d}");
    let mask = non_sky(&case.pre_labels);
    let gt = case.ground_truth.as_raster();
    let after = synth::median_abs_error(out.image.as_raster(), gt, &mask).unwrap();
    let before = synth::median_abs_error(case.precap.as_raster(), gt, &mask).unwrap();
    assert!(after < 0.3 * before, "median error {before} -> {after}");
    for c in &out.report.categories {
        assert!(c.after < c.before, "{c:?}");
    }
}

#[test]
fn stages_run_once_in_order_and_pass_the_audit() {
    let out = run_on(inputs(&small_case(7)), &RunOptions::default()).unwrap();
    let names: Vec<&str> = out.report.stages.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(
        names,
        ["2-panorama", "3-align", "4-segment", "5-tone", "6-sky-plan", "6-sky-copy", "6-sky-repair", "7-result"]
    );
    out.report.audit().unwrap();
    let stage_numbers: Vec<u8> = out.artifacts.iter().map(|(n, _)| n.as_bytes()[0]).collect();
    assert!(stage_numbers.windows(2).all(|p| p[0] <= p[1]), "artifacts come out in stage order");
    assert!(out.artifact("7_result").is_some());
}

#[test]
fn runs_are_deterministic() {
    let case = small_case(8);
    let a = run_on(inputs(&case), &RunOptions::default()).unwrap();
    let b = run_on(inputs(&case), &RunOptions::default()).unwrap();
    assert_eq!(a.image.to_u8(), b.image.to_u8());
    assert_eq!(a.image.data(), b.image.data());
    let strip = |kv: String| -> Vec<String> {
        kv.lines().filter(|l| !l.starts_with("stage.")).map(String::from).collect()
    };
    assert_eq!(strip(a.report.to_kv()), strip(b.report.to_kv()));
}

#[test]
fn skipping_sky_leaves_non_sky_pixels_alone() {
    let case = small_case(9);
    let full = run_on(inputs(&case), &RunOptions::default()).unwrap();
    let opts = RunOptions {
        skip_sky: true,
        ..RunOptions::default()
    };
    let partial = run_on(inputs(&case), &opts).unwrap();
    assert!(partial.report.stage("6-sky-repair").is_none());
    assert!(partial.report.warnings.iter().any(|w| w.contains("sky stage skipped")));
    partial.report.audit().unwrap();
    let mask = non_sky(&case.pre_labels);
    for i in mask.iter_set() {
        assert_eq!(full.image.pixel_at(i), partial.image.pixel_at(i), "pixel {i}");
    }
}

#[test]
fn mismatched_category_name_degrades_to_poisson() {
    let case = small_case(10);
    // the pre-captured palette calls the ground "grass"
    let palette = case
        .pre_labels
        .palette()
        .iter()
        .map(|(&i, n)| (i, if n == "earth" { "grass".to_string() } else { n.clone() }))
        .collect();
    let pre = LabelMap::new(480, 240, case.pre_labels.ids().to_vec(), palette).unwrap();
    let mut inp = inputs(&case);
    inp.labels = Some((pre.clone(), case.gen_labels.clone()));
    let out = run_on(inp, &RunOptions::default()).unwrap();
    assert!(out.report.warnings.iter().any(|w| w.contains("earth")), "{:?}", out.report.warnings);
    assert!(out.report.categories.iter().all(|c| c.name != "earth"));
    let Some(Artifact::Mask(residual)) = out.artifact("5_residual") else {
        panic!("no residual mask");
    };
    let grass = category_mask(&pre, pre.id_of("grass").unwrap(), None).unwrap();
    assert_eq!(residual.and(&grass), grass);
}

#[test]
fn fallback_segmentation_runs_without_labels() {
    let case = small_case(11);
    let mut inp = inputs(&case);
    inp.labels = None;
    let opts = RunOptions {
        fallback_sky: true,
        ..RunOptions::default()
    };
    let out = run_on(inp.clone(), &opts).unwrap();
    assert!(out.report.warnings.iter().any(|w| w.contains("heuristic")));
    assert!(matches!(run_on(inp, &RunOptions::default()), Err(Error::Config(_))));
}

#[test]
fn fixed_matches_force_a_single_round() {
    let case = small_case(12);
    let t = case.transform;
    let matches: Vec<Correspondence<f64>> = (0..60)
        .map(|k| {
            let (x, y) = (7.0 * k as f64 % 480.0, 40.0 + (k * 13 % 160) as f64);
            let (u, v) = t.apply(x, y, 480.0);
            Correspondence {
                p: (x, y),
                q: (u, v),
                score: 0.0,
            }
        })
        .collect();
    let mut inp = inputs(&case);
    inp.matches = Some(matches);
    let out = run_on(inp, &RunOptions::default()).unwrap();
    assert_eq!(out.report.inliers.len(), 1);
    assert!(out.report.warnings.iter().any(|w| w.contains("single alignment round")));
    let got = out.report.transform.as_similarity().unwrap();
    assert!(got.corner_displacement(&t, 480.0, 240.0, 480.0) < 1e-6);
}

#[test]
fn planar_alternatives_complete() {
    let case = small_case(13);
    for kind in [TransformKind::Affine, TransformKind::Homography] {
        let opts = RunOptions {
            transform: kind,
            ..RunOptions::default()
        };
        let out = run_on(inputs(&case), &opts).unwrap();
        assert_eq!(out.report.matches.len(), 1);
        assert!(matches!(
            (kind, &out.report.transform),
            (TransformKind::Affine, TransformRecord::Affine { .. })
                | (TransformKind::Homography, TransformRecord::Homography { .. })
        ));
    }
}

#[test]
fn stage_failures_name_the_stage() {
    let case = small_case(14);
    let mut inp = inputs(&case);
    // nothing covered: no features to align
    inp.panorama = PanoramaInput::Image {
        image: case.panorama.clone(),
        cover: BitMask::new(480, 240),
    };
    match run_on(inp, &RunOptions::default()) {
        Err(Error::Stage { stage, .. }) => assert_eq!(stage, "3-align"),
        other => panic!("expected a stage error, got {other:?}"),
    }
}

#[test]
fn options_are_validated() {
    let bad = [
        RunOptions {
            rounds: 0,
            ..RunOptions::default()
        },
        RunOptions {
            eps: -1.0,
            ..RunOptions::default()
        },
        RunOptions {
            inpaint: InpaintParams { patch_size: 4 },
            ..RunOptions::default()
        },
    ];
    for o in bad {
        assert!(matches!(o.validate(), Err(Error::Config(_))), "{o:?}");
    }
    assert!("homography".parse::<TransformKind>().is_ok());
    assert!(matches!("projective".parse::<TransformKind>(), Err(Error::Config(_))));
}

#[test]
fn default_coverage_is_non_black() {
    let img = RasterImage::from_fn(4, 2, 3, |x, _, p: &mut [f64]| p[1] = if x < 2 { 0.0 } else { 0.1 }).unwrap();
    let m = coverage_from_image(&img);
    assert_eq!(m.count(), 4);
    assert!(!m.get(0, 0) && m.get(3, 1));
}

#[test]
fn options_round_trip_through_json() {
    let o = RunOptions {
        transform: TransformKind::Affine,
        feather: true,
        seed: 9,
        ..RunOptions::default()
    };
    let s = serde_json::to_string(&o).unwrap();
    assert_eq!(serde_json::from_str::<RunOptions>(&s).unwrap(), o);
    let partial: RunOptions = serde_json::from_str(r#"{"rounds": 2}"#).unwrap();
    assert_eq!(partial.rounds, 2);
    assert_eq!(partial.seed, RunOptions::default().seed);
}
