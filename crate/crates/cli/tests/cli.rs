//! End-to-end tests against the compiled binary: output trees, exit codes,
//! and the replay guarantees the commands advertise. A small shared cohort
//! and one finished run are built once under the cargo tmp dir.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

const PHANTOM_JSON: &str =
    r#"{"dims": [26, 26, 26], "seed": 11, "seed_radius_vox": 2.5, "edge_margin_vox": 6}"#;

const RUN_JSON: &str = r#"{
  "net": {"input_hw": 11, "conv1_filters": 4, "conv2_filters": 8, "fc1_units": 16},
  "patch": {"patch_size": 11, "sampling_halfwidth": 4},
  "hyper": {"epochs": 2, "batch": 32},
  "master_seed": 7
}
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_growthcast"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn growthcast");
    assert!(
        out.status.success(),
        "command failed: {:?}\nstderr: {}",
        cmd,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn exit_code(cmd: &mut Command) -> i32 {
    cmd.output().expect("spawn growthcast").status.code().expect("exit code")
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

struct Fixture {
    root: PathBuf,
    cohort: PathBuf,
    run: PathBuf,
    config: PathBuf,
}

/// Tiny cohort plus one finished LOOCV run (with baseline, overlays, and
/// both dumps), shared by every test that only reads it.
fn fixture() -> &'static Fixture {
    static FIX: OnceLock<Fixture> = OnceLock::new();
    FIX.get_or_init(|| {
        let root = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("cli-fixture");
        if root.exists() {
            std::fs::remove_dir_all(&root).unwrap();
        }
        std::fs::create_dir_all(&root).unwrap();
        let phantom = root.join("phantom.json");
        std::fs::write(&phantom, PHANTOM_JSON).unwrap();
        let config = root.join("run.json");
        std::fs::write(&config, RUN_JSON).unwrap();
        let cohort = root.join("cohort");
        run_ok(bin()
            .arg("gen")
            .arg("--out")
            .arg(&cohort)
            .args(["--n", "3"])
            .arg("--config")
            .arg(&phantom));
        let run = root.join("run1");
        run_ok(bin()
            .arg("loocv")
            .arg("--cohort")
            .arg(&cohort)
            .arg("--out")
            .arg(&run)
            .arg("--config")
            .arg(&config)
            .args(["--jobs", "2", "--overlays", "--dump-patches", "--dump-features"]));
        Fixture { root, cohort, run, config }
    })
}

#[test]
fn gen_same_seed_reproduces_the_cohort() {
    let fix = fixture();
    let again = fix.root.join("cohort-again");
    run_ok(bin()
        .arg("gen")
        .arg("--out")
        .arg(&again)
        .args(["--n", "3"])
        .arg("--config")
        .arg(&fix.root.join("phantom.json")));
    for rel in ["cohort.json", "case000/t1_suv.raw", "case002/clinical.json"] {
        assert_eq!(
            read(&fix.cohort.join(rel)),
            read(&again.join(rel)),
            "{rel} differs between identically seeded runs"
        );
    }
    assert_eq!(std::fs::read_dir(&again).unwrap().count(), 5, "3 cases + manifest + snapshot");
}

#[test]
fn train_net_writes_weights_history_and_snapshot() {
    let fix = fixture();
    let out = fix.root.join("net.gcnw");
    run_ok(bin()
        .arg("train-net")
        .arg("--cohort")
        .arg(&fix.cohort)
        .arg("--out")
        .arg(&out)
        .arg("--config")
        .arg(&fix.config));
    let weights = read(&out);
    assert_eq!(&weights[..4], b"GCNW");
    let history: serde_json::Value =
        serde_json::from_slice(&read(&out.with_extension("history.json"))).unwrap();
    assert_eq!(history.as_array().map(Vec::len), Some(2), "one entry per epoch");
    let snapshot = String::from_utf8(read(&out.with_extension("config.json"))).unwrap();
    assert!(snapshot.contains("\"master_seed\": 7"));
    // Same cohort and config: retraining reproduces the weights exactly.
    let again = fix.root.join("net-again.gcnw");
    run_ok(bin()
        .arg("train-net")
        .arg("--cohort")
        .arg(&fix.cohort)
        .arg("--out")
        .arg(&again)
        .arg("--config")
        .arg(&fix.config));
    assert_eq!(read(&again), weights, "weights differ between identically seeded runs");
}

#[test]
fn loocv_writes_the_full_output_tree() {
    let fix = fixture();
    let csv = String::from_utf8(read(&fix.run.join("results.csv"))).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 6, "header + 3 folds + mean + std");
    assert!(lines[0].starts_with("fold,patient,"));
    assert!(lines[0].contains("baseline_rvd"));
    assert!(lines[4].starts_with("mean,"));
    assert!(lines[5].starts_with("std,"));

    for rel in [
        "results.json",
        "results.txt",
        "timings.txt",
        "config.json",
        "artifacts/fold0.gcpl",
        "artifacts/fold2.gcpl",
        "predictions/fold1_pred.hdr",
        "predictions/fold1_pred.raw",
        "predictions/fold1_baseline.hdr",
        "patches/fold0/s0000_stable_suv.pgm",
        "features/fold2.csv",
    ] {
        assert!(fix.run.join(rel).exists(), "missing {rel}");
    }
    let overlays = std::fs::read_dir(fix.run.join("overlays")).unwrap().count();
    assert!(overlays >= 3, "expected per-slice overlays for 3 folds, found {overlays}");

    let snapshot = String::from_utf8(read(&fix.run.join("config.json"))).unwrap();
    assert!(snapshot.contains("\"master_seed\": 7"));
    assert!(snapshot.contains("\"dump_features\": true"), "snapshot reflects the flag override");

    let features = String::from_utf8(read(&fix.run.join("features/fold2.csv"))).unwrap();
    assert!(features.starts_with("deep_0,deep_1,time_interval,"));
}

#[test]
fn rerun_reproduces_reports_byte_for_byte() {
    let fix = fixture();
    let again = fix.root.join("run-again");
    run_ok(bin()
        .arg("loocv")
        .arg("--cohort")
        .arg(&fix.cohort)
        .arg("--out")
        .arg(&again)
        .arg("--config")
        .arg(&fix.config)
        .args(["--jobs", "1"]));
    for rel in ["results.json", "results.csv", "results.txt", "artifacts/fold1.gcpl"] {
        assert_eq!(read(&fix.run.join(rel)), read(&again.join(rel)), "{rel} not reproducible");
    }
}

#[test]
fn skip_baseline_removes_baseline_columns() {
    let fix = fixture();
    let out = fix.root.join("run-nobase");
    run_ok(bin()
        .arg("loocv")
        .arg("--cohort")
        .arg(&fix.cohort)
        .arg("--out")
        .arg(&out)
        .arg("--config")
        .arg(&fix.config)
        .arg("--skip-baseline"));
    let csv = String::from_utf8(read(&out.join("results.csv"))).unwrap();
    assert!(!csv.contains("baseline_"));
    assert_eq!(csv.lines().count(), 6);
    let text = String::from_utf8(read(&out.join("results.txt"))).unwrap();
    assert!(!text.contains("reaction-diffusion baseline"));
    assert!(!out.join("predictions/fold0_baseline.hdr").exists());
}

#[test]
fn predict_replays_the_run_prediction() {
    let fix = fixture();
    let out = fix.root.join("predict0");
    let stdout = run_ok(bin()
        .arg("predict")
        .arg("--artifact")
        .arg(fix.run.join("artifacts/fold0.gcpl"))
        .arg("--case")
        .arg(fix.cohort.join("case000"))
        .arg("--out")
        .arg(&out))
    .stdout;
    assert!(String::from_utf8(stdout).unwrap().contains("dice"));

    // The standalone prediction and its metrics must replay the run exactly.
    assert_eq!(
        read(&out.join("predicted.raw")),
        read(&fix.run.join("predictions/fold0_pred.raw"))
    );
    let recomputed: serde_json::Value =
        serde_json::from_slice(&read(&out.join("metrics.json"))).unwrap();
    let results: serde_json::Value =
        serde_json::from_slice(&read(&fix.run.join("results.json"))).unwrap();
    assert_eq!(recomputed["metrics"], results["folds"][0]["learned"]);
    assert!(std::fs::read_dir(out.join("overlays")).unwrap().count() > 0);
}

#[test]
fn report_renders_summary_and_overlays() {
    let fix = fixture();
    let stdout = run_ok(bin().arg("report").arg("--results").arg(&fix.run)).stdout;
    let text = String::from_utf8(stdout).unwrap();
    assert!(text.starts_with("leave-one-out cross-validation: 3 folds"));
    assert!(text.contains("per fold:"));

    let out = fix.root.join("report-overlays");
    run_ok(bin()
        .arg("report")
        .arg("--results")
        .arg(&fix.run)
        .arg("--cohort")
        .arg(&fix.cohort)
        .args(["--fold", "1", "--slice", "13"])
        .arg("--out")
        .arg(&out));
    let ppm = read(&out.join("fold1_z013.ppm"));
    assert!(ppm.starts_with(b"P6\n26 26\n255\n"), "overlay dims match the slice");
}

#[test]
fn data_errors_exit_two() {
    let fix = fixture();
    let results = fix.run.clone();
    let cohort = fix.cohort.clone();

    // Out-of-range slice and fold.
    let mut cmd = bin();
    cmd.arg("report").arg("--results").arg(&results).arg("--cohort").arg(&cohort);
    assert_eq!(exit_code(cmd.args(["--slice", "99"])), 2);
    let mut cmd = bin();
    cmd.arg("report").arg("--results").arg(&results).arg("--cohort").arg(&cohort);
    assert_eq!(exit_code(cmd.args(["--fold", "7"])), 2);

    // Missing artifact gives a descriptive error.
    let out = bin()
        .arg("predict")
        .args(["--artifact", "does-not-exist.gcpl"])
        .arg("--case")
        .arg(cohort.join("case000"))
        .args(["--out", "unused"])
        .output()
        .expect("spawn growthcast");
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does-not-exist.gcpl"));

    // loocv without any output directory.
    let mut cmd = bin();
    cmd.arg("loocv").arg("--cohort").arg(&cohort).arg("--config").arg(&fix.config);
    assert_eq!(exit_code(&mut cmd), 2);
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_eq!(exit_code(bin().args(["gen", "--out", "x", "--n", "0"])), 1);
    assert_eq!(exit_code(bin().arg("no-such-command")), 1);
    assert_eq!(exit_code(&mut bin()), 1);
    assert_eq!(exit_code(bin().arg("--help")), 0);
    assert_eq!(exit_code(bin().arg("--version")), 0);
}
