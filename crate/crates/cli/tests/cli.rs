use std::path::Path;
use std::process::{Command, Output};

use ltv_core::imaging::{write_pgm, PgmDepth, ThermalFrame};

fn ltv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ltv")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = ltv(args);
    assert!(out.status.success(), "ltv {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    ltv(args).status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, frames: &str) -> String {
    let out = dir.join("data");
    ok(&["synth", "--frames", frames, "--width", "160", "--height", "128", "--seed", "3", "--out", p(&out)]);
    p(&out.join("manifest.tsv")).to_string()
}

#[test]
fn every_subcommand_has_help() {
    for sub in ["train", "detect", "eval", "bench", "augment", "folds", "inspect", "synth"] {
        let out = ok(&[sub, "--help"]);
        assert!(out.contains("Usage"), "{sub}");
    }
    ok(&["--help"]);
}

#[test]
fn exit_codes_follow_the_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.tsv");
    assert_eq!(code(&["folds", "--manifest", p(&missing), "--out", p(&dir.path().join("f"))]), 3);
    assert_eq!(code(&["inspect", "--set", "epochs=zero"]), 2);
    assert_eq!(code(&["inspect", "--set", "no_such_key=1"]), 2);

    let bad = dir.path().join("bad.ltvw");
    std::fs::write(&bad, b"not weights").unwrap();
    let m = synth(dir.path(), "2");
    let out = dir.path().join("d");
    assert_eq!(code(&["detect", "--weights", p(&bad), "--manifest", &m, "--out", p(&out)]), 2);
    // clap usage errors share the config code
    assert_eq!(code(&["detect"]), 2);
}

#[test]
fn tau_outside_the_unit_interval_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(dir.path(), "2");
    let w = dir.path().join("w");
    ok(&[
        "train", "--manifest", &m, "--set", "model=shrunk", "--set", "epochs=1", "--set", "batch_size=2", "--set",
        "resolutions=160x128", "--out", p(&w),
    ]);
    let weights = w.join("weights.ltvw");
    let out = dir.path().join("d");
    assert_eq!(code(&["detect", "--weights", p(&weights), "--manifest", &m, "--tau", "1.01", "--out", p(&out)]), 2);
}

#[test]
fn output_directory_must_be_empty_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    std::fs::create_dir(&out).unwrap();
    std::fs::write(out.join("keep.txt"), "x").unwrap();
    assert_eq!(code(&["inspect", "--out", p(&out)]), 2);
    ok(&["inspect", "--out", p(&out), "--force"]);
    assert!(out.join("inspect.txt").is_file());
    assert!(out.join("keep.txt").is_file());
}

#[test]
fn inspect_reports_the_reference_budget() {
    let text = ok(&["inspect"]);
    let params: usize = text
        .lines()
        .find_map(|l| l.strip_prefix("parameters: "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(params <= 1_600_000, "{params}");
}

#[test]
fn run_file_is_sorted_and_complete() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    ok(&["inspect", "--set", "tau=0.4", "--seed", "9", "--out", p(&out)]);
    let text = std::fs::read_to_string(out.join("run.txt")).unwrap();
    let keys: Vec<&str> = text.lines().map(|l| l.split(" = ").next().unwrap()).collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
    assert!(text.contains("tau = 0.4\n") && text.contains("seed = 9\n"), "{text}");
    assert!(text.contains("command = inspect\n"));
}

#[test]
fn eval_reproduces_hand_computed_ap() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let frame = ThermalFrame::from_normalized(100, 100, vec![0.2; 100 * 100]).unwrap();
    for id in ["a", "b"] {
        write_pgm(&root.join(format!("{id}.pgm")), &frame, PgmDepth::Eight).unwrap();
    }
    // a: child at (40,30)-(60,70); b: adult at (10,10)-(30,50)
    std::fs::write(root.join("a.txt"), "0 0.5 0.5 0.2 0.4\n").unwrap();
    std::fs::write(root.join("b.txt"), "1 0.2 0.3 0.2 0.4\n").unwrap();
    std::fs::write(root.join("m.tsv"), "a.pgm\ta.txt\nb.pgm\tb.txt\n").unwrap();
    let dets = root.join("dets");
    std::fs::create_dir(&dets).unwrap();
    let header = "class_id,score,x1,y1,x2,y2,level\n";
    // the higher-scored child detection misses, so child AP is 1/2
    std::fs::write(dets.join("a.csv"), format!("{header}0,0.9,70,70,90,95,0\n0,0.8,40,30,60,70,0\n")).unwrap();
    std::fs::write(dets.join("b.csv"), format!("{header}1,0.9,10,10,30,50,0\n")).unwrap();
    let out = root.join("e");
    ok(&["eval", "--manifest", p(&root.join("m.tsv")), "--detections", p(&dets), "--out", p(&out)]);
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.contains("ap_class0,0.500000\n"), "{summary}");
    assert!(summary.contains("ap_class1,1.000000\n"), "{summary}");
    assert!(summary.contains("map50,0.750000\n"), "{summary}");
}

#[test]
fn augment_is_reproducible_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(dir.path(), "2");
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        ok(&["augment", "--manifest", &m, "--mode", "temp_bias", "--seed", seed, "--out", p(&out)]);
        std::fs::read(out.join("frames").join("frame0000.pgm")).unwrap()
    };
    let a = run("a", "7");
    assert_eq!(a, run("b", "7"));
    assert_ne!(a, run("c", "8"));
}

#[test]
fn localisation_weight_changes_the_logged_curve() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(dir.path(), "4");
    let run = |name: &str, extra: &[&str]| {
        let out = dir.path().join(name);
        let mut args = vec![
            "train", "--manifest", &m, "--seed", "1", "--set", "model=shrunk", "--set", "epochs=3", "--set",
            "batch_size=2", "--set", "resolutions=160x128", "--out", p(&out),
        ];
        args.extend_from_slice(extra);
        ok(&args);
        let csv = std::fs::read_to_string(out.join("epochs.csv")).unwrap();
        assert!(csv.starts_with("epoch,total,obj,cls,loc,lr,seconds\n"), "{csv}");
        csv.lines().skip(1).map(|l| l.split(',').nth(4).unwrap().to_string()).collect::<Vec<_>>()
    };
    let default = run("d", &[]);
    let light = run("l", &["--set", "lambda_loc=1"]);
    assert_eq!(default.len(), 3);
    assert_ne!(default, light);
}

#[test]
fn detect_writes_paired_resolution_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("seq");
    ok(&["synth", "--sequence", "--frames", "3", "--out", p(&seq)]);
    let m = p(&seq.join("manifest.tsv")).to_string();
    // a barely trained checkpoint is enough to exercise the plumbing
    let ck = dir.path().join("ck");
    ok(&[
        "train", "--manifest", &m, "--set", "model=shrunk", "--set", "epochs=1", "--set", "batch_size=1", "--set",
        "resolutions=96x77", "--out", p(&ck),
    ]);
    let weights = ck.join("weights.ltvw");
    for res in ["640x512", "140x112"] {
        let out = dir.path().join(res);
        ok(&["detect", "--weights", p(&weights), "--manifest", &m, "--resolution", res, "--tau", "0.0", "--out", p(&out)]);
        let run = std::fs::read_to_string(out.join("run.txt")).unwrap();
        assert!(run.contains(&format!("resolution = {res}\n")), "{run}");
        assert!(run.contains("weights_sha256 = "));
    }
    let e = dir.path().join("e");
    ok(&[
        "eval", "--manifest", &m, "--detections", p(&dir.path().join("640x512")), "--paired",
        p(&dir.path().join("140x112")), "--out", p(&e),
    ]);
    let paired = std::fs::read_to_string(e.join("paired.csv")).unwrap();
    assert_eq!(paired.lines().count(), 4);
}
