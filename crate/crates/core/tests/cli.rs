use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::Value;

use lplab::harness::config::{ExperimentConfig, ExperimentKind};
use lplab::harness::report::{read_report, Manifest, MANIFEST_FILE};
use lplab::norms::digest_hex;

fn lp_lab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lp-lab"))
}

fn configs() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn bundled_configs_parse_and_match_their_kind() {
    for kind in ExperimentKind::ALL {
        let cfg = ExperimentConfig::load(&configs().join(format!("{}.json", kind.name()))).unwrap();
        assert_eq!(cfg.kind, Some(kind));
        cfg.check_kind(kind).unwrap();
    }
}

#[test]
fn run_writes_manifest_with_matching_digests() {
    let out = tempfile::tempdir().unwrap();
    let cfg = out.path().join("weighted.json");
    fs::write(
        &cfg,
        r#"{"kind": "weighted", "grid": {"log_res": [7]}, "corpus": {"recipe": "mixed", "count": 1},
            "weights": [{"kind": "power", "a": 0.25}], "exponents": [1.0]}"#,
    )
    .unwrap();
    let dir = out.path().join("run");
    let status = lp_lab()
        .args(["run", "--kind", "weighted", "--seed", "4", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!((manifest.kind, manifest.seed), (ExperimentKind::Weighted, 4));
    for entry in &manifest.files {
        let bytes = fs::read(dir.join(&entry.name)).unwrap();
        assert_eq!(bytes.len(), entry.bytes);
        assert_eq!(digest_hex(&bytes), entry.sha256);
    }
    let report = read_report(&dir).unwrap();
    assert_eq!(report.records.len(), report.summary.records);
    assert_eq!(report.records.len(), 2);
}

#[test]
fn run_rejects_a_config_for_another_kind() {
    let out = tempfile::tempdir().unwrap();
    let status = lp_lab()
        .args(["run", "--kind", "sparse", "--config"])
        .arg(configs().join("main.json"))
        .arg("--out")
        .arg(out.path())
        .output()
        .unwrap();
    assert!(!status.status.success());
    assert!(String::from_utf8_lossy(&status.stderr).contains("error"));
}

#[test]
fn verify_invariants_prints_one_pass_line_per_check() {
    let out = lp_lab().arg("verify-invariants").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 10);
    assert!(text.lines().all(|l| l.starts_with("PASS ")), "{text}");
}

#[test]
fn corpus_is_reproducible_and_writes_samples() {
    let run = |dir: &Path| {
        let out = lp_lab()
            .args(["corpus", "--recipe", "smooth", "--seed", "11", "--count", "3", "--log-res", "6,5", "--out"])
            .arg(dir)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let text = run(a.path());
    assert_eq!(text, run(b.path()));
    let lines: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    for (i, line) in lines.iter().enumerate() {
        let bytes = fs::read(a.path().join(format!("fixture-{i:03}.bin"))).unwrap();
        assert_eq!(line["sha256"], Value::String(digest_hex(&bytes)));
        assert!(line["max_frequency"].as_i64().unwrap() <= 8);
    }
    assert_eq!(fs::read(a.path().join("corpus.json")).unwrap(), fs::read(b.path().join("corpus.json")).unwrap());
}

#[test]
fn unknown_recipe_is_a_usage_error() {
    let out = lp_lab().args(["corpus", "--recipe", "nonsense"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
