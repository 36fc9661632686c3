use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn birfr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_birfr")).args(args).output().expect("run birfr")
}

fn samples() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../samples")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn identify_bundled_sample() {
    let root = samples().join("faces");
    let probe = root.join("probe/s03/p0.pgm");
    let out = birfr(&["identify", s(&probe), "--gallery", s(&root), "--radius", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("best class: s03\n"), "{text}");

    let out = birfr(&["identify", s(&probe), "--gallery", s(&root.join("gallery")), "--radius", "1", "--format", "json"]);
    assert!(out.status.success());
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["best_class"], "s03");
    assert_eq!(doc["per_class"].as_array().unwrap().len(), 5);
}

#[test]
fn detect_bundled_band() {
    let out = birfr(&[
        "detect",
        s(&samples().join("band.pgm")),
        "--cascade",
        s(&samples().join("band_cascade.txt")),
    ]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 1);
}

#[test]
fn usage_errors_exit_one() {
    let out = birfr(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));

    let out = birfr(&["bench", "x", "--algo", "nope"]);
    assert_eq!(out.status.code(), Some(1));

    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.conf");
    fs::write(&cfg, "colour = blue\n").unwrap();
    let out = birfr(&["--config", s(&cfg), "make-synth", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));

    assert_eq!(birfr(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = birfr(&["bench", s(&tmp.path().join("missing"))]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(String::from_utf8_lossy(&out.stderr).lines().count(), 1);
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.conf");
    fs::write(&cfg, "# corpus\nclasses = 3\nseed = 4\nprobes-per-class = 1\n").unwrap();
    let a = tmp.path().join("a");
    assert!(birfr(&["--config", s(&cfg), "make-synth", s(&a)]).status.success());
    assert!(a.join("gallery/s03/g0.pgm").exists());
    assert!(!a.join("gallery/s04").exists());

    let b = tmp.path().join("b");
    assert!(birfr(&["--config", s(&cfg), "make-synth", s(&b), "--classes", "4"]).status.success());
    assert!(b.join("gallery/s04/g0.pgm").exists());
    assert_eq!(
        fs::read(a.join("gallery/s01/g0.pgm")).unwrap(),
        fs::read(b.join("gallery/s01/g0.pgm")).unwrap()
    );
}

#[test]
fn degrade_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let input = samples().join("faces/gallery/s01/g0.pgm");
    let run = |name: &str, seed: &str| {
        let out = tmp.path().join(name);
        let status = birfr(&[
            "--seed",
            seed,
            "degrade",
            s(&input),
            s(&out),
            "--tsf-radius",
            "2",
            "--tsf-mode",
            "random-sparse",
            "--relight",
        ])
        .status;
        assert!(status.success());
        fs::read(out).unwrap()
    };
    let first = run("a.pgm", "3");
    assert_eq!(first, run("b.pgm", "3"));
    assert_ne!(first, run("c.pgm", "4"));
    assert_ne!(first, fs::read(&input).unwrap());
}

#[test]
fn biefr_at_zero_strength_matches_birfr() {
    let root = samples().join("faces");
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str, extra: &[&str]| {
        let csv = tmp.path().join(name);
        let mut args = vec!["bench", s(&root), "--radius", "1", "--fer-perturb", "0.05", "--csv", s(&csv)];
        args.extend_from_slice(extra);
        assert!(birfr(&args).status.success());
        fs::read_to_string(csv).unwrap()
    };
    assert_eq!(run("a.csv", &["--algo", "birfr"]), run("b.csv", &["--algo", "biefr", "--fer-strength", "0"]));
}

#[test]
fn train_weights_writes_a_loadable_map() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("w.txt");
    let status = birfr(&["train-weights", s(&samples().join("faces")), "--grid", "4x4", "--out", s(&out)]).status;
    assert!(status.success());
    let map = birfr::lbp::BlockWeightMap::load(&out).unwrap();
    assert_eq!((map.blocks_x(), map.blocks_y()), (4, 4));

    let identify = birfr(&[
        "identify",
        s(&samples().join("faces/probe/s02/p0.pgm")),
        "--gallery",
        s(&samples().join("faces")),
        "--radius",
        "1",
        "--weights",
        s(&out),
    ]);
    assert!(identify.status.success(), "{}", String::from_utf8_lossy(&identify.stderr));
}
