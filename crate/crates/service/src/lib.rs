//! HTTP JSON API over a fitted model bundle.
//!
//! Endpoints:
//!
//! | method | path | body |
//! |---|---|---|
//! | GET | `/v1/health` | build and bundle identifiers; 503 until the bundle is loaded |
//! | GET | `/v1/bundle` | feature schema, axis statistics and planning defaults |
//! | GET | `/v1/instances?filter=response>=150` | test instances in real units |
//! | POST | `/v1/plan` | a plan, byte-identical to the CLI's `plans/<id>.json` |
//! | POST | `/v1/density` | surrogate log density and regressor prediction |
//!
//! Errors are `{code, message, detail}`.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Query, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tokio::sync::Semaphore;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use actionpath::data::{ColumnRole, DataError};
use actionpath::pipeline::{
    fill_and_standardize, plan_instance, raw_instance, InstanceFilter, InstanceRecord,
    InstanceSource, ModelBundle, PipelineError, PlanRequest, BUNDLE_FILE, REGRESSOR_FILE,
    SURROGATE_FILE,
};
use actionpath::planner::{Constraints, Direction, PlanError, PlanSettings};

pub const DEFAULT_MAX_ITERATIONS: usize = 50_000;
pub const MAX_DENSITY_POINTS: usize = 20_000;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    pub bundle_dir: PathBuf,
    /// Plan requests above this search budget are rejected.
    pub max_iterations: usize,
    /// Concurrent searches; further requests wait for a slot.
    pub workers: usize,
    /// Allowed CORS origins; any origin when empty.
    pub cors_origins: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("server: {0}")]
    Server(std::io::Error),
    #[error("invalid CORS origin `{0}`")]
    Cors(String),
}

pub struct Loaded {
    pub bundle: ModelBundle,
    /// First 16 hex digits of the SHA-256 over the three artifact files.
    pub id: String,
}

impl Loaded {
    pub fn from_dir(dir: &Path) -> Result<Self, PipelineError> {
        let bundle = ModelBundle::load(dir)?;
        let mut h = Sha256::new();
        for f in [BUNDLE_FILE, REGRESSOR_FILE, SURROGATE_FILE] {
            h.update(std::fs::read(dir.join(f))?);
        }
        Ok(Self {
            bundle,
            id: hex::encode(&h.finalize()[..8]),
        })
    }
}

struct Inner {
    loaded: OnceLock<Loaded>,
    load_error: OnceLock<String>,
    permits: Arc<Semaphore>,
    max_iterations: usize,
    active: AtomicUsize,
}

/// Shared, read-only after load.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    pub fn new(max_iterations: usize, workers: usize) -> Self {
        Self {
            inner: Arc::new(Inner {
                loaded: OnceLock::new(),
                load_error: OnceLock::new(),
                permits: Arc::new(Semaphore::new(workers.max(1))),
                max_iterations,
                active: AtomicUsize::new(0),
            }),
        }
    }

    pub fn with_bundle(loaded: Loaded, max_iterations: usize, workers: usize) -> Self {
        let s = Self::new(max_iterations, workers);
        s.install(loaded);
        s
    }

    /// Ignored if a bundle is already installed.
    pub fn install(&self, loaded: Loaded) {
        let _ = self.inner.loaded.set(loaded);
    }

    pub fn fail(&self, message: String) {
        let _ = self.inner.load_error.set(message);
    }

    pub fn loaded(&self) -> Option<&Loaded> {
        self.inner.loaded.get()
    }

    /// Searches currently running on the blocking pool.
    pub fn active_searches(&self) -> usize {
        self.inner.active.load(Ordering::SeqCst)
    }

    fn require(&self) -> Result<&Loaded, ApiError> {
        self.loaded().ok_or_else(|| self.not_loaded())
    }

    fn not_loaded(&self) -> ApiError {
        match self.inner.load_error.get() {
            Some(e) => ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "load_failed", "model bundle failed to load")
                .with_detail(json!({ "error": e })),
            None => ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "not_loaded", "model bundle is still loading"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub detail: Value,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            detail: Value::Null,
        }
    }

    fn with_detail(mut self, detail: Value) -> Self {
        self.detail = detail;
        self
    }

    fn invalid(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_request", message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let msg = e.to_string();
        match e {
            PipelineError::UnknownInstance(id) => {
                ApiError::new(StatusCode::NOT_FOUND, "unknown_instance", msg).with_detail(json!({ "instance_id": id }))
            }
            PipelineError::Plan(PlanError::MissingIntervention(f)) => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "missing_intervention", msg)
                    .with_detail(json!({ "feature": f }))
            }
            PipelineError::Plan(PlanError::Cancelled) => {
                ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "cancelled", msg)
            }
            PipelineError::Plan(PlanError::Invalid(_) | PlanError::OutOfGrid(_))
            | PipelineError::Config(_)
            | PipelineError::Data(DataError::Schema(_)) => ApiError::invalid(msg),
            _ => ApiError::internal(msg),
        }
    }
}

fn json_body<T>(body: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    body.map(|Json(b)| b).map_err(|e| ApiError::invalid(e.body_text()))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/bundle", get(bundle_info))
        .route("/v1/instances", get(instances))
        .route("/v1/plan", post(plan))
        .route("/v1/density", post(density))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .with_state(state)
}

pub fn cors_layer(origins: &[String]) -> Result<CorsLayer, ServiceError> {
    let layer = CorsLayer::new()
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    if origins.is_empty() {
        return Ok(layer.allow_origin(Any));
    }
    let values = origins
        .iter()
        .map(|o| HeaderValue::from_str(o).map_err(|_| ServiceError::Cors(o.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(layer.allow_origin(AllowOrigin::list(values)))
}

/// Binds, starts answering immediately (health is 503 until the bundle
/// loads), and serves until Ctrl-C.
pub async fn serve(cfg: ServiceConfig) -> Result<(), ServiceError> {
    let state = AppState::new(cfg.max_iterations, cfg.workers);
    let app = router(state.clone()).layer(cors_layer(&cfg.cors_origins)?);
    let listener = tokio::net::TcpListener::bind(cfg.bind)
        .await
        .map_err(|source| ServiceError::Bind { addr: cfg.bind, source })?;
    let dir = cfg.bundle_dir.clone();
    let loader = state.clone();
    tokio::task::spawn_blocking(move || match Loaded::from_dir(&dir) {
        Ok(l) => {
            tracing::info!(bundle = %l.id, "bundle loaded");
            loader.install(l);
        }
        Err(e) => {
            tracing::error!(error = %e, "bundle load failed");
            loader.fail(e.to_string());
        }
    });
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(ServiceError::Server)
}

async fn health(State(state): State<AppState>) -> Result<Json<Value>, ApiError> {
    let l = state.require()?;
    let s = &l.bundle.surrogate;
    Ok(Json(json!({
        "status": "ok",
        "build": { "name": env!("CARGO_PKG_NAME"), "version": env!("CARGO_PKG_VERSION") },
        "bundle": {
            "id": l.id,
            "components": s.k(),
            "density_mode": s.density_mode,
            "test_instances": l.bundle.meta.test_instances.len(),
        },
    })))
}

async fn bundle_info(State(state): State<AppState>) -> Result<Json<Value>, ApiError> {
    let l = state.require()?;
    let m = &l.bundle.meta;
    let features: Vec<Value> = m
        .schema
        .columns()
        .iter()
        .filter(|c| c.role == ColumnRole::Feature)
        .map(|c| json!({ "name": c.name, "kind": c.kind, "levels": c.levels }))
        .collect();
    Ok(Json(json!({
        "id": l.id,
        "features": features,
        "response": m.schema.columns()[m.schema.response_index()].name,
        "axes": m.axes,
        "intervention": m.intervention,
        "metrics": l.bundle.regressor.metrics,
        "importance": l.bundle.regressor.importance,
        "defaults": {
            "cell_sigma": m.config.plan.cell_sigma,
            "L": m.config.plan.iterations,
            "direction": m.config.plan.direction,
            "seed": m.config.seed,
            "baseline_count": m.config.plan.baseline_count,
            "weight_floor": m.config.plan.weight_floor,
            "constraints": m.config.plan.constraints,
        },
        "max_L": state.inner.max_iterations,
    })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstancesQuery {
    pub filter: Option<String>,
}

/// Feature values in real units keyed by name, in schema order. Discrete
/// values are level labels.
fn real_features(bundle: &ModelBundle, rec: &InstanceRecord) -> IndexMap<String, Value> {
    let layout = bundle.layout();
    let mut out = IndexMap::new();
    for c in bundle.meta.schema.columns().iter().filter(|c| c.role == ColumnRole::Feature) {
        let v = if let Some(j) = layout.continuous_index(&c.name) {
            rec.continuous[j].map_or(Value::Null, |x| json!(x))
        } else if let Some(j) = layout.discrete.iter().position(|n| *n == c.name) {
            rec.discrete[j].map_or(Value::Null, |l| json!(c.levels[l]))
        } else {
            continue;
        };
        out.insert(c.name.clone(), v);
    }
    out
}

async fn instances(
    State(state): State<AppState>,
    query: Result<Query<InstancesQuery>, QueryRejection>,
) -> Result<Json<Value>, ApiError> {
    let l = state.require()?;
    let Query(q) = query.map_err(|e| ApiError::invalid(e.body_text()))?;
    let filter = match q.filter.as_deref() {
        None | Some("") => InstanceFilter::default(),
        Some(f) => InstanceFilter::parse(f)?,
    };
    let b = &l.bundle;
    let rows: Vec<Value> = b
        .meta
        .test_instances
        .iter()
        .filter(|r| filter.accepts(&r.id, r.response))
        .take(filter.limit.unwrap_or(usize::MAX))
        .map(|r| {
            json!({
                "id": r.id,
                "features": real_features(b, r),
                "response": r.response,
                "prediction": r.prediction,
            })
        })
        .collect();
    Ok(Json(json!({ "count": rows.len(), "instances": rows })))
}

/// Omitted fields take the bundle's run configuration.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanBody {
    pub instance_id: Option<String>,
    /// Raw feature values in real units, instead of `instance_id`.
    pub features: Option<IndexMap<String, Value>>,
    pub intervention: Option<Vec<String>>,
    pub cell_sigma: Option<f64>,
    #[serde(rename = "L", alias = "iterations")]
    pub iterations: Option<usize>,
    pub direction: Option<Direction>,
    pub constraints: Option<Constraints>,
    pub seed: Option<u64>,
    pub baseline_count: Option<usize>,
    pub weight_floor: Option<bool>,
}

impl PlanBody {
    pub fn into_request(self, bundle: &ModelBundle, max_iterations: usize) -> Result<PlanRequest, ApiError> {
        let c = &bundle.meta.config;
        let instance = match (self.instance_id, self.features) {
            (Some(id), None) => InstanceSource::Id(id),
            (None, Some(f)) => InstanceSource::Raw(raw_instance(bundle, &f)?),
            _ => return Err(ApiError::invalid("give exactly one of `instance_id` and `features`")),
        };
        let iterations = self.iterations.unwrap_or(c.plan.iterations);
        if iterations > max_iterations {
            return Err(ApiError::invalid(format!("L = {iterations} exceeds the limit of {max_iterations}"))
                .with_detail(json!({ "max_L": max_iterations })));
        }
        Ok(PlanRequest {
            instance,
            intervention: self.intervention.unwrap_or_else(|| bundle.meta.intervention.clone()),
            cell_sigma: self.cell_sigma.unwrap_or(c.plan.cell_sigma),
            direction: self.direction.unwrap_or(c.plan.direction),
            settings: PlanSettings {
                iterations,
                constraints: self.constraints.unwrap_or_else(|| c.plan.constraints.clone()),
                seed: self.seed.unwrap_or(c.seed),
                baseline_count: self.baseline_count.unwrap_or(c.plan.baseline_count),
                weight_floor: self.weight_floor.unwrap_or(c.plan.weight_floor),
            },
        })
    }
}

/// Raises the flag when the request future is dropped, which is what
/// happens when the client disconnects mid-search.
struct CancelOnDrop(Arc<AtomicBool>);

impl Drop for CancelOnDrop {
    fn drop(&mut self) {
        self.0.store(true, Ordering::SeqCst);
    }
}

struct ActiveGuard(Arc<Inner>);

impl Drop for ActiveGuard {
    fn drop(&mut self) {
        self.0.active.fetch_sub(1, Ordering::SeqCst);
    }
}

async fn run_blocking<T, F>(state: &AppState, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Loaded) -> Result<T, ApiError> + Send + 'static,
{
    let permit = state
        .inner
        .permits
        .clone()
        .acquire_owned()
        .await
        .map_err(|_| ApiError::internal("worker pool closed"))?;
    let inner = state.inner.clone();
    tokio::task::spawn_blocking(move || {
        let _permit = permit;
        inner.active.fetch_add(1, Ordering::SeqCst);
        let _active = ActiveGuard(inner.clone());
        f(inner.loaded.get().expect("checked before dispatch"))
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))?
}

async fn plan(State(state): State<AppState>, body: Result<Json<PlanBody>, JsonRejection>) -> Result<Response, ApiError> {
    let l = state.require()?;
    let req = json_body(body)?.into_request(&l.bundle, state.inner.max_iterations)?;
    let flag = Arc::new(AtomicBool::new(false));
    let _guard = CancelOnDrop(flag.clone());
    let result = run_blocking(&state, move |l| Ok(plan_instance(&l.bundle, &req, Some(&flag))?)).await?;
    Ok(([(header::CONTENT_TYPE, "application/json")], result.to_json()).into_response())
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityPoint {
    /// Every model feature in real units.
    pub x: IndexMap<String, Value>,
    /// Response value; the regressor prediction when absent.
    pub y: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityBody {
    pub x: Option<IndexMap<String, Value>>,
    pub y: Option<f64>,
    /// Batch form; exclusive with `x`/`y`.
    pub points: Option<Vec<DensityPoint>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DensityValue {
    pub log_density: f64,
    pub prediction: f64,
    pub y: f64,
}

pub fn density_at(bundle: &ModelBundle, p: &DensityPoint) -> Result<DensityValue, ApiError> {
    let layout = bundle.layout();
    let missing: Vec<&String> = layout
        .feature_names
        .iter()
        .filter(|n| p.x.get(*n).is_none_or(Value::is_null))
        .collect();
    if !missing.is_empty() {
        return Err(ApiError::invalid(format!(
            "expected {} features, missing {}",
            layout.feature_names.len(),
            missing.len()
        ))
        .with_detail(json!({ "missing": missing })));
    }
    let rec = raw_instance(bundle, &p.x)?;
    let (x, xd) = fill_and_standardize(bundle, &rec)?;
    let y = p.y.unwrap_or(rec.prediction);
    if !y.is_finite() {
        return Err(ApiError::invalid("y must be finite"));
    }
    let log_density = bundle
        .surrogate
        .node_log_density(&x, &xd, y)
        .map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(DensityValue {
        log_density,
        prediction: rec.prediction,
        y,
    })
}

async fn density(
    State(state): State<AppState>,
    body: Result<Json<DensityBody>, JsonRejection>,
) -> Result<Json<Value>, ApiError> {
    state.require()?;
    let b = json_body(body)?;
    match (b.x, b.points) {
        (Some(x), None) => {
            let p = DensityPoint { x, y: b.y };
            let v = run_blocking(&state, move |l| density_at(&l.bundle, &p)).await?;
            Ok(Json(json!(v)))
        }
        (None, Some(points)) if b.y.is_none() => {
            if points.len() > MAX_DENSITY_POINTS {
                return Err(ApiError::invalid(format!("at most {MAX_DENSITY_POINTS} points per request")));
            }
            let vals = run_blocking(&state, move |l| {
                points.iter().map(|p| density_at(&l.bundle, p)).collect::<Result<Vec<_>, _>>()
            })
            .await?;
            Ok(Json(json!({ "results": vals })))
        }
        _ => Err(ApiError::invalid("give either `x` (with optional `y`) or `points`")),
    }
}
