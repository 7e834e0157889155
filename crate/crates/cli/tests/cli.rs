//! End-to-end tests of the `cemreg` binary.

use std::path::Path;
use std::process::{Command, Output};

use cemreg_core::dataio::{load_checkpoint, read_dataset};
use cemreg_core::harness::{read_jsonl_report, Aggregates};

fn cemreg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cemreg"))
        .args(args)
        .output()
        .expect("running cemreg")
}

fn ok(args: &[&str]) -> String {
    let out = cemreg(args);
    assert!(
        out.status.success(),
        "cemreg {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn keys_lists_every_key() {
    let out = ok(&["keys"]);
    for (key, _, _) in cemreg_core::config::KEYS {
        assert!(out.contains(key), "{key} missing");
    }
}

#[test]
fn unknown_key_is_a_usage_error_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("ds");
    let out = cemreg(&["synth", "--out", p(&out_dir), "--cem.bogus", "3"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cem.bogus"));
    assert!(!out_dir.exists());
}

#[test]
fn bad_value_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let out = cemreg(&[
        "synth",
        "--out",
        p(&dir.path().join("ds")),
        "--cem.elites",
        "many",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cem.elites"));
}

#[test]
fn config_file_errors_name_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# comment\ncem.iterations = 4\nmodel.widht = 3\n").unwrap();
    let out = cemreg(&[
        "--config",
        p(&cfg),
        "synth",
        "--out",
        p(&dir.path().join("ds")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("model.widht") && err.contains(":3"), "{err}");
}

#[test]
fn zero_pairs_give_an_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds");
    ok(&[
        "synth",
        "--out",
        p(&ds),
        "--pairs",
        "0",
        "--data.test_pairs",
        "0",
    ]);
    let data = read_dataset(&ds).unwrap();
    assert!(data.train.is_empty() && data.test.is_empty());
}

#[test]
fn default_synth_follows_the_protocol() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds");
    ok(&[
        "synth",
        "--out",
        p(&ds),
        "--pairs",
        "3",
        "--data.test_pairs",
        "2",
    ]);
    let data = read_dataset(&ds).unwrap();
    assert_eq!((data.train.len(), data.test.len()), (3, 2));
    for entry in data.train.iter().chain(&data.test) {
        assert_eq!(entry.pair.source.len(), 784);
        let gt = entry.pair.ground_truth.unwrap().to_array();
        assert!(
            gt[..3]
                .iter()
                .all(|e| (0.0..=45f64.to_radians()).contains(e)),
            "{gt:?}"
        );
        assert!(gt[3..].iter().all(|t| t.abs() <= 0.5), "{gt:?}");
        let max_norm = entry
            .pair
            .source
            .points()
            .iter()
            .map(|q| q.norm())
            .fold(0.0, f64::max);
        assert!((max_norm - 1.0).abs() <= 1e-9);
    }
}

#[test]
fn zero_epochs_write_the_initialized_model() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds");
    let ckpt = dir.path().join("m.ckpt");
    ok(&[
        "synth",
        "--out",
        p(&ds),
        "--pairs",
        "2",
        "--data.points",
        "64",
    ]);
    ok(&[
        "train",
        "--data",
        p(&ds),
        "--out",
        p(&ckpt),
        "--epochs",
        "0",
        "--model.latent_dim",
        "16",
    ]);
    let loaded = load_checkpoint(&ckpt, Some(16)).unwrap();
    assert!(loaded.metadata.loss_history.is_empty());
    let fresh = cemreg_core::latentmodel::DynamicModel::new(
        cemreg_core::latentmodel::ModelConfig {
            latent_dim: 16,
            num_points: 64,
            ..Default::default()
        },
        7,
    )
    .unwrap();
    for ((na, ta), (nb, tb)) in loaded
        .model
        .named_tensors()
        .iter()
        .zip(fresh.named_tensors())
    {
        assert_eq!(na, &nb);
        assert_eq!(*ta, tb);
    }
}

#[test]
fn overfitting_four_pairs_drives_the_loss_down() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds");
    let ckpt = dir.path().join("m.ckpt");
    ok(&[
        "synth",
        "--out",
        p(&ds),
        "--pairs",
        "4",
        "--data.test_pairs",
        "0",
        "--data.points",
        "128",
    ]);
    ok(&[
        "train",
        "--data",
        p(&ds),
        "--out",
        p(&ckpt),
        "--pairs",
        "4",
        "--epochs",
        "200",
    ]);
    let history = load_checkpoint(&ckpt, None).unwrap().metadata.loss_history;
    assert_eq!(history.len(), 200);
    let first = history[0].total();
    let last = history[199].total();
    assert!(last < 0.1 * first, "total loss {first} -> {last}");
    let csv = std::fs::read_to_string(dir.path().join("m.ckpt.loss.csv")).unwrap();
    assert!(csv.contains("# train.epochs = 200"));
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 201);
}

#[test]
fn latent_dim_mismatch_is_explicit() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds");
    let ckpt = dir.path().join("m.ckpt");
    ok(&[
        "synth",
        "--out",
        p(&ds),
        "--pairs",
        "1",
        "--data.test_pairs",
        "1",
        "--data.points",
        "64",
    ]);
    ok(&[
        "train",
        "--data",
        p(&ds),
        "--out",
        p(&ckpt),
        "--epochs",
        "0",
        "--model.latent_dim",
        "16",
    ]);
    let report = dir.path().join("r.jsonl");
    let out = cemreg(&[
        "bench",
        "--data",
        p(&ds),
        "--checkpoint",
        p(&ckpt),
        "--out",
        p(&report),
        "--bench.method",
        "latent-cem",
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("16") && err.contains("128"), "{err}");
    assert!(!report.exists());
}

#[test]
fn latent_oracle_without_checkpoint_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds");
    ok(&[
        "synth",
        "--out",
        p(&ds),
        "--pairs",
        "0",
        "--data.test_pairs",
        "1",
        "--data.points",
        "64",
    ]);
    let src = ds.join("test").join(
        std::fs::read_dir(ds.join("test"))
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .find(|n| n.to_string_lossy().contains(".src."))
            .unwrap(),
    );
    let out = cemreg(&["register", "--source", p(&src), "--target", p(&src)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoint"));
}

#[test]
fn registering_identical_files_returns_identity() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds");
    ok(&[
        "synth",
        "--out",
        p(&ds),
        "--pairs",
        "0",
        "--data.test_pairs",
        "1",
        "--data.points",
        "300",
    ]);
    let src = std::fs::read_dir(ds.join("test"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|n| n.to_string_lossy().contains(".src."))
        .unwrap();
    let aligned = dir.path().join("aligned.xyz");
    let json = dir.path().join("result.json");
    let stdout = ok(&[
        "register",
        "--source",
        p(&src),
        "--target",
        p(&src),
        "--cem.oracle",
        "chamfer",
        "--threads",
        "1",
        "--emit-aligned",
        p(&aligned),
        "--out",
        p(&json),
    ]);
    let values: Vec<f64> = stdout
        .split_whitespace()
        .skip(1)
        .step_by(2)
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(values.len(), 6);
    assert!(
        values[..3].iter().all(|e| e.to_degrees().abs() <= 0.5),
        "{values:?}"
    );
    assert!(values[3..].iter().all(|t| t.abs() <= 0.01), "{values:?}");
    let text = std::fs::read_to_string(&aligned).unwrap();
    assert!(text.starts_with('#'));
    let result: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(result["method"], "chamfer-cem");
}

fn bench_mae(extra: &[&str]) -> f64 {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds");
    let mut synth = vec![
        "synth",
        "--out",
        p(&ds),
        "--pairs",
        "0",
        "--data.test_pairs",
        "5",
        "--data.points",
        "400",
    ];
    synth.extend_from_slice(extra);
    ok(&synth);
    let report = dir.path().join("r.jsonl");
    let mut bench = vec![
        "bench",
        "--data",
        p(&ds),
        "--out",
        p(&report),
        "--threads",
        "1",
    ];
    bench.extend_from_slice(extra);
    ok(&bench);
    let parsed = read_jsonl_report(&report).unwrap();
    let again = Aggregates::from_records(&parsed.records);
    assert_eq!(again.mae_r_deg, parsed.aggregates.mae_r_deg);
    assert!(parsed.aggregates.mae_r_deg <= parsed.aggregates.rmse_r_deg);
    parsed.aggregates.mae_r_deg.unwrap()
}

#[test]
fn chamfer_bench_on_identity_pairs() {
    let mae = bench_mae(&[
        "--data.max_rot_deg",
        "0",
        "--data.max_trans",
        "0",
        "--bench.method",
        "chamfer-cem",
        "--cem.candidates",
        "300",
    ]);
    assert!(mae < 0.5, "MAE(R) {mae}");
}

#[test]
fn icp_bench_on_small_rotations() {
    let mae = bench_mae(&[
        "--data.max_rot_deg",
        "5",
        "--data.max_trans",
        "0.05",
        "--bench.method",
        "icp",
    ]);
    assert!(mae < 0.1, "MAE(R) {mae}");
}

#[test]
fn csv_and_text_reports_follow_the_extension() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds");
    ok(&[
        "synth",
        "--out",
        p(&ds),
        "--pairs",
        "0",
        "--data.test_pairs",
        "2",
        "--data.points",
        "100",
    ]);
    for (name, first) in [("r.csv", "# data.seed = 1"), ("r.txt", "# method: icp")] {
        let path = dir.path().join(name);
        ok(&[
            "bench",
            "--data",
            p(&ds),
            "--out",
            p(&path),
            "--bench.method",
            "icp",
        ]);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next(), Some(first), "{name}");
    }
}
