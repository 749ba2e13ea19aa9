use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_transtrack")).args(args).env_remove("TRANSTRACK_CONFIG").output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn simulate(dir: &TempDir, seed: &str) -> String {
    let out = path(dir.path(), seed);
    let o = run(&["simulate", "--seed", seed, "-o", &out]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn simulate_track_eval_round_trip() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(&dir, "3");
    for f in ["gt.txt", "det.txt", "scenario.txt", "features.txt"] {
        assert!(Path::new(&sim).join(f).exists(), "missing {f}");
    }
    let gt = path(Path::new(&sim), "gt.txt");

    // ground truth tracked as if it were detections is recovered exactly
    let self_res = path(dir.path(), "self.txt");
    let o = run(&["track", "--provider", "none", "--dets", &gt, "-o", &self_res]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let kv = path(dir.path(), "report.txt");
    let o = run(&["eval", "--gt", &gt, "--results", &self_res, "--out", &kv]);
    assert_eq!(code(&o), 0);
    let report = fs::read_to_string(&kv).unwrap();
    assert!(report.lines().any(|l| l == "mota=100"), "{report}");
    assert!(report.lines().any(|l| l == "idsw=0"), "{report}");

    let res = path(dir.path(), "kalman.txt");
    let o = run(&["track", "--provider", "kalman", "--scenario", &path(Path::new(&sim), "scenario.txt"), "-o", &res]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&["eval", "--gt", &gt, "--results", &res]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("MOTA"));
}

#[test]
fn simulate_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let a = simulate(&dir, "9");
    let b = path(dir.path(), "again");
    assert_eq!(code(&run(&["simulate", "--seed", "9", "-o", &b])), 0);
    for f in ["gt.txt", "det.txt", "features.txt"] {
        assert_eq!(fs::read(Path::new(&a).join(f)).unwrap(), fs::read(Path::new(&b).join(f)).unwrap(), "{f}");
    }
}

#[test]
fn empty_detection_file_gives_empty_results() {
    let dir = TempDir::new().unwrap();
    let dets = path(dir.path(), "empty.txt");
    fs::write(&dets, "").unwrap();
    let o = run(&["track", "--provider", "none", "--dets", &dets]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).trim().is_empty());
}

#[test]
fn runtime_and_usage_errors_have_distinct_codes() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&run(&["track", "--dets", &path(dir.path(), "missing.txt")])), 1);
    let bad = path(dir.path(), "bad.txt");
    fs::write(&bad, "1,-1,1,2,x,4,0.9\n").unwrap();
    assert_eq!(code(&run(&["track", "--dets", &bad])), 1);

    assert_eq!(code(&run(&["track", "--bogus"])), 2);
    assert_eq!(code(&run(&["frobnicate"])), 2);
    assert_eq!(code(&run(&["config", "--set", "tracker.nonsense=1"])), 2);
    assert_eq!(code(&run(&["config", "--set", "tracker.min_iou=2"])), 2);
    assert_eq!(code(&run(&["track", "--provider", "toynet", "--dets", &bad])), 2);
    assert_eq!(code(&run(&["config", "--config", &path(dir.path(), "nope.conf")])), 1);
}

#[test]
fn config_file_and_overrides_layer() {
    let dir = TempDir::new().unwrap();
    let file = path(dir.path(), "run.conf");
    fs::write(&file, "[tracker]\nrebirth_k = 7\nmin_iou = 0.4\n").unwrap();
    let o = run(&["config", "--config", &file, "--set", "tracker.min_iou=0.25"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert!(text.contains("rebirth_k = 7"), "{text}");
    assert!(text.contains("min_iou = 0.25"), "{text}");

    // the printed settings load back unchanged
    let dumped = path(dir.path(), "dumped.conf");
    fs::write(&dumped, &text).unwrap();
    assert_eq!(stdout(&run(&["config", "--config", &dumped])), text);
}

#[test]
fn help_and_version_succeed() {
    let o = run(&["--help"]);
    assert_eq!(code(&o), 0);
    for sub in ["track", "eval", "simulate", "ablate", "gradcheck"] {
        assert!(stdout(&o).contains(sub), "help lacks {sub}");
    }
    assert_eq!(code(&run(&["--version"])), 0);
}

#[test]
fn gradcheck_passes_and_fails_on_tight_tolerance() {
    let o = run(&["gradcheck"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    let o = run(&["gradcheck", "--tolerance", "1e-12"]);
    assert_eq!(code(&o), 3, "{}", stdout(&o));
}

#[test]
fn ablate_check_passes() {
    let o = run(&["ablate", "--check"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("PASS")).count(), 5);
}

#[test]
fn short_training_writes_a_usable_checkpoint() {
    let dir = TempDir::new().unwrap();
    let ckpt = path(dir.path(), "net.bin");
    let history = path(dir.path(), "history.txt");
    let o = run(&["train", "--epochs", "1", "--held-out", "2", "--set", "dataset.pairs=4", "-o", &ckpt, "--history", &history]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(&history).unwrap().lines().count(), 2);

    let sim = simulate(&dir, "4");
    let o = run(&["track", "--provider", "toynet", "--checkpoint", &ckpt, "--scenario", &path(Path::new(&sim), "scenario.txt"), "--frames", "5"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}
