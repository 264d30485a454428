use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"{
  "seed": 2,
  "dataset": { "source": "synthetic" },
  "regressor": {
    "folds": 3,
    "grid": [{ "tree_count": 40, "max_depth": 3, "learning_rate": 0.1, "min_samples_leaf": 5, "subsample_fraction": 1.0, "seed": 2 }]
  },
  "surrogate": { "k_range": [1, 2], "iterations": 300, "warmup": 100, "planning_draws": 8 },
  "intervention": { "features": ["X1", "X2", "X3"] },
  "plan": { "cell_sigma": 0.5, "iterations": 2000, "baseline_count": 3 },
  "instances": { "limit": 2 },
  "output": "run"
}"#;

fn actionpath(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_actionpath"))
        .args(args)
        .env_remove("ACTIONPATH_CONFIG")
        .env_remove("ACTIONPATH_BUNDLE")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.json");
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&actionpath(&["--help"])), 0);
    assert_eq!(code(&actionpath(&["--version"])), 0);
    assert_eq!(code(&actionpath(&["plan", "--help"])), 0);
}

#[test]
fn bad_arguments_exit_one() {
    assert_eq!(code(&actionpath(&[])), 1);
    assert_eq!(code(&actionpath(&["fly"])), 1);
    assert_eq!(code(&actionpath(&["plan"])), 1);
    assert_eq!(code(&actionpath(&["plan", "--config", "x.json", "--direction", "up"])), 1);
    assert_eq!(code(&actionpath(&["plan", "--config", "x.json", "--L", "many"])), 1);
}

#[test]
fn bad_configs_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("absent.json");
    assert_eq!(code(&actionpath(&["fit", "--config", missing.to_str().unwrap()])), 1);
    let cfg = write_config(tmp.path(), &SMALL.replace("\"seed\": 2,", "\"seed\": 2, \"extra\": true,"));
    let o = actionpath(&["fit", "--config", &cfg]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("extra"));
    let cfg = write_config(tmp.path(), SMALL);
    assert_eq!(code(&actionpath(&["plan", "--config", &cfg, "--cell-sigma", "0"])), 1);
}

#[test]
fn plan_without_a_bundle_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let o = actionpath(&["plan", "--config", &cfg]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn full_run_writes_the_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("elsewhere");
    let out_s = out.to_str().unwrap();
    for stage in ["synth", "fit", "plan", "report"] {
        let o = actionpath(&[stage, "--config", &cfg, "--out", out_s, "--seed", "4"]);
        assert_eq!(code(&o), 0, "{stage}: {}", String::from_utf8_lossy(&o.stderr));
        if stage == "plan" {
            let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
            assert_eq!(v["planned"], 2);
        }
    }
    for f in ["bundle.json", "regressor.json", "surrogate.json", "plan_summary.json", "ledger.jsonl", "report/summary.md"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    assert!(!tmp.path().join("run").exists());
}
