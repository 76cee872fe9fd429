//! Black-box tests of the `skillflow` binary: exit codes, artifact shapes,
//! determinism, and the seed-override environment variable.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_skillflow")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .current_dir(dir)
        .args(args)
        .env_remove("SKILLFLOW_SEED")
        .output()
        .expect("binary runs")
}

fn run_env(dir: &Path, args: &[&str], seed_env: &str) -> Output {
    Command::new(bin())
        .current_dir(dir)
        .args(args)
        .env("SKILLFLOW_SEED", seed_env)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn small_dataset(dir: &Path, seed: &str) {
    let out = run_in(
        dir,
        &[
            "gen-data",
            "--out",
            "data",
            "--skills",
            "3",
            "--per-skill",
            "4",
            "--T",
            "12",
            "--grid",
            "3",
            "--eval-fraction",
            "0.25",
            "--seed",
            seed,
        ],
    );
    assert_ok(&out);
}

#[test]
fn per_skill_zero_is_usage_error_naming_the_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(
        tmp.path(),
        &["gen-data", "--out", "data", "--per-skill", "0"],
    );
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("--per-skill"), "stderr was: {stderr}");
}

#[test]
fn unknown_flag_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(tmp.path(), &["gen-data", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_manifest_is_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(
        tmp.path(),
        &["build-bank", "--manifest", "nope/manifest.json", "--out", "bank.json"],
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn gen_data_is_byte_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    std::fs::create_dir_all(&a).unwrap();
    std::fs::create_dir_all(&b).unwrap();
    small_dataset(&a, "11");
    small_dataset(&b, "11");
    let names = std::fs::read_dir(a.join("data")).unwrap();
    let mut count = 0;
    for entry in names {
        let entry = entry.unwrap();
        let fa = std::fs::read(entry.path()).unwrap();
        let fb = std::fs::read(b.join("data").join(entry.file_name())).unwrap();
        assert_eq!(fa, fb, "{:?} differs", entry.file_name());
        count += 1;
    }
    assert_eq!(count, 13); // 12 demos + manifest
}

#[test]
fn env_seed_overrides_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    std::fs::create_dir_all(&a).unwrap();
    std::fs::create_dir_all(&b).unwrap();
    small_dataset(&a, "23");
    // Flag seed 1, env seed 23: env must win.
    let out = run_env(
        &b,
        &[
            "gen-data", "--out", "data", "--skills", "3", "--per-skill", "4", "--T", "12",
            "--grid", "3", "--eval-fraction", "0.25", "--seed", "1",
        ],
        "23",
    );
    assert_ok(&out);
    let demo = "data/demo_00_0000.json";
    let fa: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join(demo)).unwrap()).unwrap();
    let fb: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(b.join(demo)).unwrap()).unwrap();
    assert_eq!(fa["flow"], fb["flow"]);
}

fn pipeline_dir() -> (tempfile::TempDir, PathBuf) {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().to_path_buf();
    small_dataset(&dir, "31");
    assert_ok(&run_in(
        &dir,
        &["build-bank", "--manifest", "data/manifest.json", "--out", "bank.json", "--seed", "31"],
    ));
    assert_ok(&run_in(
        &dir,
        &[
            "train",
            "--manifest",
            "data/manifest.json",
            "--out-dir",
            "run",
            "--epochs",
            "2",
            "--dim",
            "8",
            "--heads",
            "2",
            "--steps",
            "6",
            "--batch",
            "4",
            "--seed",
            "31",
        ],
    ));
    (tmp, dir)
}

#[test]
fn metrics_csv_has_header_plus_one_row_per_epoch() {
    let (_tmp, dir) = pipeline_dir();
    let csv = std::fs::read_to_string(dir.join("run/metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3); // header + 2 epochs
    assert_eq!(lines[0], "epoch,l_mse,l_ce,l_con,acc");
}

#[test]
fn zero_epochs_writes_seeded_initialization() {
    let (_tmp, dir) = pipeline_dir();
    assert_ok(&run_in(
        &dir,
        &[
            "train",
            "--manifest",
            "data/manifest.json",
            "--out-dir",
            "run0",
            "--epochs",
            "0",
            "--dim",
            "8",
            "--heads",
            "2",
            "--steps",
            "6",
            "--seed",
            "77",
        ],
    ));
    let text = std::fs::read_to_string(dir.join("run0/checkpoint.json")).unwrap();
    let cp: skillflow_core::diffusion::Checkpoint = serde_json::from_str(&text).unwrap();
    let loaded = cp.into_model().unwrap();

    // Expected: the seeded init for the same config and names.
    let names: Vec<String> = loaded.skill_names.clone();
    let expected = skillflow_core::diffusion::Model::init(loaded.cfg.clone(), names, 77);
    assert_eq!(loaded, expected);

    let csv = std::fs::read_to_string(dir.join("run0/metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1); // header only
}

#[test]
fn plan_writes_three_artifacts_with_config_echo() {
    let (_tmp, dir) = pipeline_dir();
    let demo = "data/demo_01_0000.json";
    assert_ok(&run_in(
        &dir,
        &[
            "plan",
            "--demo",
            demo,
            "--bank",
            "bank.json",
            "--checkpoint",
            "run/checkpoint.json",
            "--out-dir",
            "plan",
            "--flow-from-file",
            demo,
            "--seed",
            "31",
        ],
    ));
    for name in ["flow.json", "lifted.json", "actions.json"] {
        let v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.join("plan").join(name)).unwrap())
                .unwrap();
        assert_eq!(v["seed"], 31, "{name} missing seed echo");
        assert_eq!(v["config"]["command"], "plan");
        assert!(v["version"].is_string());
    }
    let lifted: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("plan/lifted.json")).unwrap())
            .unwrap();
    // Frame 1 is the identity by construction.
    assert_eq!(lifted["transforms"][0]["R"][0], 1.0);
    assert_eq!(lifted["transforms"][0]["t"][0], 0.0);
}

#[test]
fn plan_rejects_degenerate_classifier_with_exit_5() {
    let (_tmp, dir) = pipeline_dir();
    // Zero the classifier output layer: logits become exactly equal.
    let text = std::fs::read_to_string(dir.join("run/checkpoint.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    for tensor in ["encoder.cls_out.w", "encoder.cls_out.b"] {
        let data = v["tensors"][tensor]["data"].as_array_mut().unwrap();
        for x in data.iter_mut() {
            *x = serde_json::json!(0.0);
        }
    }
    std::fs::write(dir.join("degenerate.json"), serde_json::to_string(&v).unwrap()).unwrap();

    let demo = "data/demo_00_0000.json";
    let out = run_in(
        &dir,
        &[
            "plan",
            "--demo",
            demo,
            "--bank",
            "bank.json",
            "--checkpoint",
            "degenerate.json",
            "--out-dir",
            "plan_degen",
            "--flow-from-file",
            demo,
        ],
    );
    assert_eq!(out.status.code(), Some(5));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("degenerate"), "stderr: {stderr}");
}

#[test]
fn eval_report_aggregates_match_recomputation() {
    let (_tmp, dir) = pipeline_dir();
    assert_ok(&run_in(
        &dir,
        &[
            "eval",
            "--manifest",
            "data/manifest.json",
            "--bank",
            "bank.json",
            "--out-dir",
            "eval",
            "--lambdas",
            "0,0.1",
            "--noise-grid",
            "0.5",
            "--seed",
            "31",
        ],
    ));
    let text = std::fs::read_to_string(dir.join("eval/eval_report.json")).unwrap();
    let report: skillflow_cli::report::EvalReport = serde_json::from_str(&text).unwrap();
    let recomputed = skillflow_cli::report::aggregate(&report.records);
    assert_eq!(report.aggregates, recomputed);
    assert!(dir.join("eval/error_vs_lambda.svg").exists());
    assert!(dir.join("eval/error_vs_noise.svg").exists());
    let csv = std::fs::read_to_string(dir.join("eval/eval_records.csv")).unwrap();
    assert_eq!(csv.lines().count(), report.records.len() + 1);
}

#[test]
fn noiseless_eval_is_exact_for_both_conditions() {
    let (_tmp, dir) = pipeline_dir();
    assert_ok(&run_in(
        &dir,
        &[
            "eval",
            "--manifest",
            "data/manifest.json",
            "--bank",
            "bank.json",
            "--out-dir",
            "eval0",
            "--lambdas",
            "0,0.1,1",
            "--noise-grid",
            "0",
            "--depth-noise",
            "0",
            "--seed",
            "31",
        ],
    ));
    let text = std::fs::read_to_string(dir.join("eval0/eval_report.json")).unwrap();
    let report: skillflow_cli::report::EvalReport = serde_json::from_str(&text).unwrap();
    for r in &report.records {
        assert!(
            r.trans_rmse_m <= 1e-6,
            "noiseless {} prior={} lambda={} trans RMSE {}",
            r.demo,
            r.prior,
            r.lambda,
            r.trans_rmse_m
        );
    }
}

#[test]
fn bank_from_arc_demos_satisfies_circularity() {
    // Skill 0 (Arc): the stored template waypoints must be equidistant from
    // a fitted sphere center.
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().to_path_buf();
    let out = run_in(
        &dir,
        &[
            "gen-data", "--out", "data", "--skills", "1", "--per-skill", "4", "--T", "16",
            "--grid", "3", "--seed", "5",
        ],
    );
    assert_ok(&out);
    assert_ok(&run_in(
        &dir,
        &["build-bank", "--manifest", "data/manifest.json", "--out", "bank.json", "--seed", "5"],
    ));
    let bank = skillflow_core::skillbank::load_bank(&dir.join("bank.json")).unwrap();
    let tpl = bank.template(0).unwrap();

    // Algebraic sphere fit: 2 w . c + k = |w|^2 in least squares.
    let n = tpl.waypoints.len();
    let mut a = nalgebra::DMatrix::<f64>::zeros(n, 4);
    let mut b = nalgebra::DVector::<f64>::zeros(n);
    for (i, w) in tpl.waypoints.iter().enumerate() {
        a[(i, 0)] = 2.0 * w.x;
        a[(i, 1)] = 2.0 * w.y;
        a[(i, 2)] = 2.0 * w.z;
        a[(i, 3)] = 1.0;
        b[i] = w.norm_squared();
    }
    let sol = (a.transpose() * &a)
        .cholesky()
        .unwrap()
        .solve(&(a.transpose() * b));
    let center = nalgebra::Vector3::new(sol[0], sol[1], sol[2]);
    let r2 = sol[3] + center.norm_squared();
    let radius = r2.sqrt();
    for w in &tpl.waypoints {
        assert!(
            ((w - center).norm() - radius).abs() < 1e-9,
            "waypoint off the fitted circle by {}",
            ((w - center).norm() - radius).abs()
        );
    }
}

#[test]
fn bank_round_trips_through_load_and_save() {
    let (_tmp, dir) = pipeline_dir();
    let bank = skillflow_core::skillbank::load_bank(&dir.join("bank.json")).unwrap();
    skillflow_core::skillbank::save_bank(&bank, &dir.join("bank2.json"), {
        // Re-attach the original echo so the bytes can match.
        let v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.join("bank.json")).unwrap())
                .unwrap();
        let mut extra = serde_json::Map::new();
        for key in ["tool_version", "seed", "config"] {
            extra.insert(key.into(), v[key].clone());
        }
        extra
    })
    .unwrap();
    // Key order inside the format is struct-defined, so bytes must match.
    assert_eq!(
        std::fs::read(dir.join("bank.json")).unwrap(),
        std::fs::read(dir.join("bank2.json")).unwrap()
    );
}
