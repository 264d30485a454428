use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use actionpath::data::{load_csv, load_schema};
use actionpath::pipeline::{
    cmd_fit, cmd_plan, cmd_report, cmd_synth, read_json, InstanceFilter, Ladder, Ledger,
    ModelBundle, Overrides, PipelineError, PlanSummary, Projection, RunConfig, LEDGER_FILE,
};
use actionpath::planner::{Direction, PlanResult};

const SMALL: &str = r#"{
  "seed": 3,
  "dataset": { "source": "synthetic" },
  "regressor": {
    "folds": 3,
    "grid": [{ "tree_count": 60, "max_depth": 3, "learning_rate": 0.1, "min_samples_leaf": 5, "subsample_fraction": 1.0, "seed": 3 }]
  },
  "surrogate": { "k_range": [1, 2], "iterations": 300, "warmup": 100, "planning_draws": 16 },
  "intervention": { "features": ["X1", "X2", "X3"] },
  "plan": { "cell_sigma": 0.5, "iterations": 3000, "baseline_count": 5 },
  "instances": { "limit": 5 },
  "output": "run"
}"#;

fn small_config(dir: &Path) -> RunConfig {
    RunConfig::from_json(SMALL, dir).unwrap()
}

fn full_run(config: &RunConfig) {
    cmd_synth(config).unwrap();
    cmd_fit(config).unwrap();
    cmd_plan(config).unwrap();
    cmd_report(config).unwrap();
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn repeated_runs_are_byte_identical_apart_from_the_ledger() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    full_run(&small_config(a.path()));
    full_run(&small_config(b.path()));
    let mut fa = files(&a.path().join("run"));
    let mut fb = files(&b.path().join("run"));
    assert!(fa.remove(Path::new(LEDGER_FILE)).is_some());
    assert!(fb.remove(Path::new(LEDGER_FILE)).is_some());
    assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>());
    for (k, v) in &fa {
        assert!(fb[k] == *v, "{} differs", k.display());
    }
    assert!(fa.len() > 10);
}

#[test]
fn ledger_artifacts_exist_and_load() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    full_run(&cfg);
    let dir = cfg.output_dir().unwrap();
    let entries = Ledger::new(&dir).entries().unwrap();
    let stages: Vec<&str> = entries.iter().map(|e| e.stage.as_str()).collect();
    assert_eq!(stages, ["synth", "fit", "plan", "report"]);
    for e in &entries {
        assert!(e.wall_seconds >= 0.0 && !e.finished_at.is_empty());
        for a in &e.artifacts {
            let p = dir.join(a);
            assert!(p.is_file(), "{a} listed by {} is missing", e.stage);
            let name = p.file_name().unwrap().to_str().unwrap();
            if a.starts_with("plans/") {
                read_json::<PlanResult>(&p).unwrap();
            } else if a.ends_with(".svg") {
                roxmltree::Document::parse(&std::fs::read_to_string(&p).unwrap())
                    .unwrap_or_else(|err| panic!("{a}: {err}"));
            } else if name == "plan_summary.json" {
                read_json::<PlanSummary>(&p).unwrap();
            } else if name == "ladders.json" {
                read_json::<Vec<Ladder>>(&p).unwrap();
            } else if name == "projections.json" {
                read_json::<Vec<Projection>>(&p).unwrap();
            } else if name.ends_with(".schema.json") {
                load_schema(&p).unwrap();
            } else if name.ends_with(".csv") {
                let schema = load_schema(&dir.join("synthetic.schema.json")).unwrap();
                assert_eq!(load_csv(&p, &schema).unwrap().len(), 600);
            } else if name.ends_with(".json") {
                read_json::<serde_json::Value>(&p).unwrap();
            }
        }
    }
    let bundle = ModelBundle::load(&dir).unwrap();
    bundle.validate().unwrap();
    assert_eq!(bundle.meta.test_instances.len(), 120);
    assert_eq!(bundle.meta.config, cfg.portable());

    let summary: PlanSummary = read_json(&dir.join("plan_summary.json")).unwrap();
    assert_eq!(summary.count, 5);
    assert!(summary.planned.iter().all(|r| r.score >= -1e-9));
    let ladders: Vec<Ladder> = read_json(&dir.join("report/ladders.json")).unwrap();
    for (l, row) in ladders.iter().zip(&summary.planned) {
        assert_eq!(l.rows.len(), row.moves);
    }
}

#[test]
fn empty_selection_fails_before_planning() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config(tmp.path());
    cmd_synth(&cfg).unwrap();
    cmd_fit(&cfg).unwrap();
    cfg.instances = InstanceFilter::parse("response>=1e9").unwrap();
    let err = cmd_plan(&cfg).unwrap_err();
    assert!(matches!(err, PipelineError::EmptySelection));
    assert_eq!(err.exit_code(), 1);
    assert!(!cfg.output_dir().unwrap().join("plans").exists());
}

#[test]
fn report_requires_a_plan() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let err = cmd_report(&cfg).unwrap_err();
    assert!(matches!(err, PipelineError::Artifact(_)), "{err}");
    assert_eq!(err.exit_code(), 2);
    cmd_fit(&cfg).unwrap();
    assert!(matches!(cmd_report(&cfg).unwrap_err(), PipelineError::Artifact(_)));
}

#[test]
fn overrides_reach_the_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config(tmp.path());
    let out = tmp.path().join("elsewhere");
    cfg.apply(&Overrides {
        seed: Some(8),
        iterations: Some(500),
        cell_sigma: Some(0.7),
        direction: Some(Direction::Maximize),
        output: Some(out.clone()),
    })
    .unwrap();
    cmd_fit(&cfg).unwrap();
    cmd_plan(&cfg).unwrap();
    let bundle = ModelBundle::load(&out).unwrap();
    assert_eq!(bundle.meta.config.seed, 8);
    assert_eq!(bundle.meta.config.plan.iterations, 500);
    assert_eq!(bundle.meta.config.output, None);
    let summary: PlanSummary = read_json(&out.join("plan_summary.json")).unwrap();
    let plan: PlanResult = read_json(&out.join(&summary.planned[0].file)).unwrap();
    assert_eq!(plan.config.cell_sigma, 0.7);
    assert_eq!(plan.config.direction, Direction::Maximize);
    assert_eq!(plan.config.settings.iterations, 500);
    assert_eq!(plan.config.settings.seed, 8);
    for r in &summary.planned {
        assert!(r.end_prediction >= r.start_prediction);
    }
}

#[test]
fn bad_configs_are_validation_errors() {
    let tmp = tempfile::tempdir().unwrap();
    for text in [
        SMALL.replace("\"seed\": 3,", "\"seed\": 3, \"colour\": 1,"),
        SMALL.replace("\"warmup\": 100", "\"warmup\": 300"),
        SMALL.replace("\"cell_sigma\": 0.5", "\"cell_sigma\": -1"),
        SMALL.replace("\"k_range\": [1, 2]", "\"k_range\": []"),
    ] {
        let err = RunConfig::from_json(&text, tmp.path()).unwrap_err();
        assert_eq!(err.exit_code(), 1, "{err}");
    }
}
