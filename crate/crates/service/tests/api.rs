use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use actionpath::pipeline::{
    cmd_fit, cmd_plan, fill_and_standardize, plan_file_name, raw_instance, RunConfig, PLANS_DIR,
};
use actionpath_service::{router, AppState, Loaded};

const CONFIG: &str = r#"{
  "seed": 5,
  "dataset": { "source": "synthetic" },
  "regressor": {
    "folds": 3,
    "grid": [{ "tree_count": 60, "max_depth": 3, "learning_rate": 0.1, "min_samples_leaf": 5, "subsample_fraction": 1.0, "seed": 5 }]
  },
  "surrogate": { "k_range": [2], "iterations": 400, "warmup": 100, "planning_draws": 16 },
  "intervention": { "features": ["X1", "X2", "X3"] },
  "plan": { "cell_sigma": 0.5, "baseline_count": 5 },
  "instances": { "limit": 3 },
  "output": "run"
}"#;

/// Fitted once per test binary; the directory lives for the whole process.
fn run_dir() -> &'static PathBuf {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let tmp = Box::leak(Box::new(tempfile::tempdir().unwrap()));
        let cfg = RunConfig::from_json(CONFIG, tmp.path()).unwrap();
        cmd_fit(&cfg).unwrap();
        cmd_plan(&cfg).unwrap();
        cfg.output_dir().unwrap()
    })
}

fn app() -> Router {
    router(AppState::with_bundle(Loaded::from_dir(run_dir()).unwrap(), 50_000, 2))
}

async fn send(app: Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn get(app: Router, uri: &str) -> (StatusCode, Value) {
    let (s, b) = send(app, Request::get(uri).body(Body::empty()).unwrap()).await;
    (s, serde_json::from_slice(&b).unwrap())
}

fn post_req(uri: &str, body: &Value) -> Request<Body> {
    Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

async fn post(app: Router, uri: &str, body: Value) -> (StatusCode, Vec<u8>) {
    send(app, post_req(uri, &body)).await
}

fn json_of(b: &[u8]) -> Value {
    serde_json::from_slice(b).unwrap()
}

fn first_id() -> String {
    Loaded::from_dir(run_dir()).unwrap().bundle.meta.test_instances[0].id.clone()
}

fn training_mean() -> serde_json::Map<String, Value> {
    let loaded = Loaded::from_dir(run_dir()).unwrap();
    loaded
        .bundle
        .meta
        .axes
        .iter()
        .map(|a| (a.name.clone(), json!(a.mean)))
        .collect()
}

#[tokio::test]
async fn health_is_unavailable_until_the_bundle_loads() {
    let state = AppState::new(50_000, 1);
    let (s, body) = get(router(state.clone()), "/v1/health").await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(body["code"], "not_loaded");
    let (s, _) = get(router(state.clone()), "/v1/instances").await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);

    state.install(Loaded::from_dir(run_dir()).unwrap());
    let (s, body) = get(router(state), "/v1/health").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body["status"], "ok");
    assert_eq!(body["bundle"]["components"], 2);
    assert_eq!(body["bundle"]["id"].as_str().unwrap().len(), 16);
}

#[tokio::test]
async fn failed_load_is_reported() {
    let state = AppState::new(50_000, 1);
    state.fail("no bundle.json".into());
    let (s, body) = get(router(state), "/v1/health").await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(body["code"], "load_failed");
    assert_eq!(body["detail"]["error"], "no bundle.json");
}

#[tokio::test]
async fn unknown_paths_are_json_404s() {
    let (s, body) = get(app(), "/v2/nothing").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "not_found");
}

#[tokio::test]
async fn bundle_exposes_schema_and_defaults() {
    let (s, body) = get(app(), "/v1/bundle").await;
    assert_eq!(s, StatusCode::OK);
    let names: Vec<&str> = body["features"].as_array().unwrap().iter().map(|f| f["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["X1", "X2", "X3"]);
    assert_eq!(body["response"], "Y");
    assert_eq!(body["defaults"]["L"], 20_000);
    assert_eq!(body["defaults"]["cell_sigma"], 0.5);
    assert_eq!(body["max_L"], 50_000);
}

#[tokio::test]
async fn instances_filter() {
    let (s, body) = get(app(), "/v1/instances").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body["count"], 120);
    let first = &body["instances"][0];
    assert!(first["features"]["X1"].is_number());
    assert!(first["prediction"].is_number());

    let max = body["instances"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["response"].as_f64().unwrap())
        .fold(f64::NEG_INFINITY, f64::max);
    let (s, body) = get(app(), &format!("/v1/instances?filter=response%3E%3D{}", max + 1.0)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body["count"], 0);

    let (s, body) = get(app(), "/v1/instances?filter=height%3E3").await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(body["code"], "invalid_request");
}

#[tokio::test]
async fn plan_matches_the_cli_artifact_byte_for_byte() {
    let dir = run_dir();
    let entries: Vec<_> = std::fs::read_dir(dir.join(PLANS_DIR)).unwrap().collect();
    assert_eq!(entries.len(), 3);
    let (_, list) = get(app(), "/v1/instances").await;
    for inst in list["instances"].as_array().unwrap().iter().take(3) {
        let id = inst["id"].as_str().unwrap();
        let expected = std::fs::read(dir.join(PLANS_DIR).join(plan_file_name(id))).unwrap();
        let (s, body) = post(app(), "/v1/plan", json!({ "instance_id": id })).await;
        assert_eq!(s, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
        assert!(body == expected, "plan for {id} differs from the CLI file");
        let (_, again) = post(app(), "/v1/plan", json!({ "instance_id": id })).await;
        assert_eq!(body, again);
        assert_eq!(json_of(&body)["config"]["settings"]["iterations"], 20_000);
    }
}

#[tokio::test]
async fn plan_errors_map_to_statuses() {
    let (s, body) = post(app(), "/v1/plan", json!({ "instance_id": "nobody" })).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(json_of(&body)["code"], "unknown_instance");

    let mut features = training_mean();
    features.insert("X2".into(), Value::Null);
    let (s, body) = post(app(), "/v1/plan", json!({ "features": features })).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let body = json_of(&body);
    assert_eq!(body["code"], "missing_intervention");
    assert_eq!(body["detail"]["feature"], "X2");

    let (s, body) = post(app(), "/v1/plan", json!({ "instance_id": first_id(), "L": 50_001 })).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(json_of(&body)["detail"]["max_L"], 50_000);

    let (s, _) = post(app(), "/v1/plan", json!({ "instance_id": first_id(), "features": training_mean() })).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = post(app(), "/v1/plan", json!({ "instance_id": first_id(), "colour": 1 })).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = post(app(), "/v1/plan", json!({ "features": training_mean(), "cell_sigma": -1.0 })).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn raw_feature_plans_run() {
    let (s, body) = post(app(), "/v1/plan", json!({ "features": training_mean(), "L": 2000 })).await;
    assert_eq!(s, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
    let plan = json_of(&body);
    assert_eq!(plan["config"]["settings"]["iterations"], 2000);
    assert!(plan["score"].as_f64().unwrap() >= -1e-9);
}

#[tokio::test]
async fn density_batch_matches_the_model() {
    let loaded = Loaded::from_dir(run_dir()).unwrap();
    let bundle = &loaded.bundle;
    let mean = training_mean();

    let (s, body) = post(app(), "/v1/density", json!({ "x": mean })).await;
    assert_eq!(s, StatusCode::OK);
    let body = json_of(&body);
    assert!(body["log_density"].as_f64().unwrap().is_finite());
    assert_eq!(body["y"], body["prediction"]);

    // walk outward from the largest training X1
    let x1 = &bundle.meta.axes[0];
    let top = x1.mean + x1.std * x1.train_max;
    let points: Vec<Value> = (0..6)
        .map(|i| {
            let mut x = mean.clone();
            x.insert("X1".into(), json!(top + i as f64 * x1.std));
            json!({ "x": x, "y": 0.0 })
        })
        .collect();
    let (s, body) = post(app(), "/v1/density", json!({ "points": points })).await;
    assert_eq!(s, StatusCode::OK);
    let results = json_of(&body)["results"].as_array().unwrap().clone();
    assert_eq!(results.len(), 6);
    let mut last = f64::INFINITY;
    for (p, r) in points.iter().zip(&results) {
        let map = p["x"].as_object().unwrap().clone().into_iter().collect();
        let rec = raw_instance(bundle, &map).unwrap();
        let (x, xd) = fill_and_standardize(bundle, &rec).unwrap();
        let direct = bundle.surrogate.node_log_density(&x, &xd, 0.0).unwrap();
        let got = r["log_density"].as_f64().unwrap();
        assert_eq!(got, direct);
        assert!(got < last, "density rose away from the data: {got} after {last}");
        last = got;
    }

    let mut partial = mean.clone();
    partial.remove("X3");
    let (s, body) = post(app(), "/v1/density", json!({ "x": partial })).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(json_of(&body)["detail"]["missing"], json!(["X3"]));
    let (s, _) = post(app(), "/v1/density", json!({ "x": mean, "points": [] })).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn dropped_requests_cancel_their_search() {
    let state = AppState::with_bundle(Loaded::from_dir(run_dir()).unwrap(), usize::MAX, 2);
    let app = router(state.clone());
    let req = post_req("/v1/plan", &json!({ "instance_id": first_id(), "cell_sigma": 0.01, "L": 50_000_000 }));
    let task = tokio::spawn(app.oneshot(req));

    let started = Instant::now();
    while state.active_searches() == 0 {
        assert!(started.elapsed() < Duration::from_secs(20), "search never started");
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    tokio::time::sleep(Duration::from_millis(300)).await;
    assert_eq!(state.active_searches(), 1);
    task.abort();

    let aborted = Instant::now();
    while state.active_searches() > 0 {
        assert!(aborted.elapsed() < Duration::from_secs(5), "search kept running after the client left");
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
}
