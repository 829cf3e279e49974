use std::path::Path;
use std::process::{Command, Output};

use msign::cli::{summary, Report, Results, REPORT_FILE, SEED_ENV, SUMMARY_FILE};
use tempfile::TempDir;

fn msign(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_msign"));
    cmd.args(args).env_remove(SEED_ENV).env_remove("MSIGN_SELFCHECK_FAULT");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("config.json");
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

const SMALL_P2P: &str = r#"{
  "scenario": "fl-p2p",
  "k": 2,
  "runs": 2,
  "seed": 5,
  "dataset": { "num_classes": 4, "dim": 16, "n_per_class": 100 },
  "replay_size": 64,
  "p2p": { "schedule": [0, 1, 0] }
}"#;

fn run_small(env: &[(&str, &str)]) -> (Output, TempDir, Report) {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), SMALL_P2P);
    let out = tmp.path().join("out");
    let o = msign(&["run", &config, "--out", out.to_str().unwrap()], env);
    let report: Report = serde_json::from_slice(&std::fs::read(out.join(REPORT_FILE)).unwrap()).unwrap();
    (o, tmp, report)
}

#[test]
fn malformed_configs_exit_2_and_write_nothing() {
    let cases = [
        ("{ \"scenario\": \"fl-p2p\", ", "line"),
        (r#"{ "scenario": "fl-p2p", "rounds": 3 }"#, "rounds"),
        (r#"{ "scenario": "fl-p2p", "k": "four" }"#, "k"),
        (r#"{ "scenario": "fl-p2p", "k": 0 }"#, "k"),
        (r#"{ "scenario": "nonsense" }"#, "scenario"),
    ];
    for (body, mentions) in cases {
        let tmp = TempDir::new().unwrap();
        let config = write_config(tmp.path(), body);
        let out = tmp.path().join("out");
        let o = msign(&["run", &config, "--out", out.to_str().unwrap()], &[]);
        assert_eq!(o.status.code(), Some(2), "{body}");
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains(mentions), "{body}: {err}");
        assert!(!out.exists(), "{body}: outputs written");
    }
    let o = msign(&["run", "/nonexistent/config.json"], &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn schema_describes_the_config() {
    let o = msign(&["schema"], &[]);
    assert!(o.status.success());
    let schema: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let props = schema["properties"].as_object().unwrap();
    for field in ["scenario", "k", "seed", "runs", "fl", "p2p", "output_dir"] {
        assert!(props.contains_key(field), "{field}");
    }
    assert_eq!(schema["additionalProperties"], serde_json::Value::Bool(false));
}

#[test]
fn selfcheck_passes_and_fails_under_fault_injection() {
    let ok = msign(&["selfcheck"], &[]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stdout));
    let bad = msign(&["selfcheck"], &[("MSIGN_SELFCHECK_FAULT", "1")]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL merkle-round-trips"));
}

#[test]
fn run_writes_a_report_and_its_summary() {
    let (o, tmp, report) = run_small(&[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(report.passed());
    assert_eq!(report.config.seed, 5);
    let Results::FlP2p(runs) = &report.results else {
        panic!("wrong scenario in report");
    };
    assert_eq!(runs.len(), 2);
    assert!(runs.iter().all(|r| r.proofs.iter().all(|p| p.verdict.accepted)));

    let mut expected = Vec::new();
    summary(&report.results).write_csv(&mut expected).unwrap();
    let written = std::fs::read(tmp.path().join("out").join(SUMMARY_FILE)).unwrap();
    assert_eq!(written, expected);

    // Same seed, same results.
    let (_, _, again) = run_small(&[]);
    assert_eq!(again.results, report.results);
}

#[test]
fn seed_from_the_environment_overrides_the_file() {
    let (o, _, report) = run_small(&[(SEED_ENV, "77")]);
    assert!(o.status.success());
    assert_eq!(report.config.seed, 77);
    let (_, _, base) = run_small(&[]);
    assert_ne!(report.results, base.results);

    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), SMALL_P2P);
    let o = msign(
        &["run", &config, "--out", tmp.path().join("out").to_str().unwrap()],
        &[(SEED_ENV, "x")],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(!tmp.path().join("out").exists());
}
