use std::path::Path;
use std::process::{Command, Output};

fn panofix(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_panofix")).args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path) {
    let out = panofix(&["synth", "--out", p(dir), "--width", "480", "--height", "240", "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn run_args<'a>(case: &'a Path, out: &'a Path) -> Vec<String> {
    let f = |n: &str| case.join(n).to_str().unwrap().to_string();
    vec![
        "run".into(),
        "--precap".into(),
        f("precap.png"),
        "--panorama".into(),
        f("panorama.png"),
        "--coverage".into(),
        f("coverage.png"),
        "--labels-pre".into(),
        f("labels_pre.png"),
        "--labels-gen".into(),
        f("labels_gen.png"),
        "--palette".into(),
        f("palette.txt"),
        "--out".into(),
        out.to_str().unwrap().into(),
    ]
}

fn run_with(case: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = run_args(case, out);
    args.extend(extra.iter().map(|s| s.to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    panofix(&refs)
}

#[test]
fn synth_run_score_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let (case, out) = (tmp.path().join("case"), tmp.path().join("out"));
    synth(&case);
    for f in ["precap.png", "panorama.png", "coverage.png", "labels_pre.png", "labels_gen.png", "palette.txt", "truth.png", "spec.json"] {
        assert!(case.join(f).is_file(), "synth did not write {f}");
    }
    let res = run_with(&case, &out, &["--seed", "5", "--dump"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(out.join("result.png").is_file() && out.join("5_tone.png").is_file());
    let kv = std::fs::read_to_string(out.join("report.kv")).unwrap();
    assert!(kv.contains("seed = 5"));

    let score = panofix(&[
        "score",
        "--result",
        p(&out.join("result.png")),
        "--truth",
        p(&case.join("truth.png")),
        "--precap",
        p(&case.join("precap.png")),
        "--labels",
        p(&case.join("labels_pre.png")),
        "--palette",
        p(&case.join("palette.txt")),
        "--json",
    ]);
    assert!(score.status.success(), "{}", String::from_utf8_lossy(&score.stderr));
    let m: serde_json::Value = serde_json::from_slice(&score.stdout).unwrap();
    assert!(m["improvement"].as_f64().unwrap() > 0.0);
}

#[test]
fn validation_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let (case, out) = (tmp.path().join("case"), tmp.path().join("out"));
    synth(&case);
    std::fs::remove_file(case.join("palette.txt")).unwrap();
    let res = run_with(&case, &out, &[]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("palette"));
    assert!(!out.exists());

    assert_eq!(panofix(&["run", "--precap", "x.png"]).status.code(), Some(1));
    assert_eq!(panofix(&["frobnicate"]).status.code(), Some(1));
    let res = run_with(&case, &out, &["--transform", "projective"]);
    assert_eq!(res.status.code(), Some(1));
}

#[test]
fn stage_failures_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let (case, out) = (tmp.path().join("case"), tmp.path().join("out"));
    synth(&case);
    std::fs::write(case.join("precap.png"), b"garbage").unwrap();
    let res = run_with(&case, &out, &[]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("1-load"));
}

#[test]
fn help_succeeds() {
    let out = panofix(&["--help"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("synth"));
}
