//! HTTP API over the engine.
//!
//! | method | path | body / query | response |
//! |---|---|---|---|
//! | POST | `/api/scenario/solve` | scenario config | equilibrium report |
//! | GET | `/api/scenario/curves` | `preset`, optional `seed`, `samples` | curve arrays |
//! | POST | `/api/scenario/compare` | `{ "base": .., "variant": .. }` | comparison |
//! | POST | `/api/scenario/maxdebt` | scenario config | `202` with a job id |
//! | GET | `/api/jobs/{id}` | | job status, result when done |
//! | GET | `/api/presets` | | preset names and configs |
//!
//! Invalid configs get `400` with the offending field. A scenario without an
//! equilibrium is a normal `200` report carrying the verdict. Responses that
//! needed paths carry `x-ensemble-cache: hit|miss`.

use std::collections::HashMap;
use std::num::NonZeroUsize;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use lru::LruCache;
use serde::{Deserialize, Serialize};

use eqcredit_core::equilibrium::{max_sustainable_debt, restructure_compare, solve_scenario, Curves};
use eqcredit_core::scenario::EnsembleKey;
use eqcredit_core::{build_ensemble, presets, Error, PathEnsemble, Scenario, ScenarioConfig};

pub const CACHE_HEADER: &str = "x-ensemble-cache";
pub const DEFAULT_CACHE_CAPACITY: usize = 16;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ApiError {
    pub error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug)]
pub struct Failure {
    pub status: StatusCode,
    pub body: ApiError,
}

impl Failure {
    fn new(status: StatusCode, msg: impl Into<String>) -> Self {
        Self { status, body: ApiError { error: msg.into(), field: None, reason: None } }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig { field, reason } => Self {
                status: StatusCode::BAD_REQUEST,
                body: ApiError { error: "invalid config".into(), field: Some(field), reason: Some(reason) },
            },
            other => Self::new(StatusCode::INTERNAL_SERVER_ERROR, other.to_string()),
        }
    }
}

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

fn prefixed(e: Error, prefix: &str) -> Error {
    match e {
        Error::InvalidConfig { field, reason } => Error::InvalidConfig { field: format!("{prefix}.{field}"), reason },
        other => other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JobStatus {
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Job {
    pub id: u64,
    pub kind: String,
    pub status: JobStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ApiError>,
}

/// Shared state: the ensemble cache and the job table.
pub struct AppState {
    cache: Mutex<LruCache<EnsembleKey, Arc<PathEnsemble>>>,
    jobs: Mutex<HashMap<u64, Job>>,
    next_job: AtomicU64,
}

impl AppState {
    pub fn new(cache_capacity: usize) -> Arc<Self> {
        let cap = NonZeroUsize::new(cache_capacity.max(1)).expect("nonzero");
        Arc::new(Self { cache: Mutex::new(LruCache::new(cap)), jobs: Mutex::new(HashMap::new()), next_job: AtomicU64::new(1) })
    }

    /// Scenario for `config`, reusing a cached ensemble. The flag is `true`
    /// on a cache hit.
    pub fn scenario(&self, config: &ScenarioConfig) -> Result<(Scenario, bool), Error> {
        let key = config.ensemble_key();
        let cached = self.cache.lock().expect("cache lock").get(&key).cloned();
        if let Some(ens) = cached {
            return Ok((Scenario::with_ensemble(config, ens)?, true));
        }
        config.validate()?;
        let ens = Arc::new(build_ensemble(&config.plan, config.sim.n, config.horizon(), config.sim.seed)?);
        self.cache.lock().expect("cache lock").put(key, ens.clone());
        Ok((Scenario::with_ensemble(config, ens)?, false))
    }

    pub fn cached_ensembles(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }

    fn new_job(&self, kind: &str) -> u64 {
        let id = self.next_job.fetch_add(1, Ordering::Relaxed);
        let job = Job { id, kind: kind.into(), status: JobStatus::Running, result: None, error: None };
        self.jobs.lock().expect("jobs lock").insert(id, job);
        id
    }

    fn finish_job(&self, id: u64, outcome: Result<serde_json::Value, Failure>) {
        let mut jobs = self.jobs.lock().expect("jobs lock");
        if let Some(job) = jobs.get_mut(&id) {
            match outcome {
                Ok(v) => {
                    job.status = JobStatus::Done;
                    job.result = Some(v);
                }
                Err(f) => {
                    job.status = JobStatus::Failed;
                    job.error = Some(f.body);
                }
            }
        }
    }

    pub fn job(&self, id: u64) -> Option<Job> {
        self.jobs.lock().expect("jobs lock").get(&id).cloned()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/scenario/solve", post(solve))
        .route("/api/scenario/curves", get(curves))
        .route("/api/scenario/compare", post(compare))
        .route("/api/scenario/maxdebt", post(maxdebt))
        .route("/api/jobs/{id}", get(job))
        .route("/api/presets", get(list_presets))
        .with_state(state)
}

fn parse_config(body: &str) -> Result<ScenarioConfig, Failure> {
    Ok(ScenarioConfig::from_json(body)?)
}

fn with_cache_header(mut resp: Response, hit: bool) -> Response {
    resp.headers_mut().insert(CACHE_HEADER, HeaderValue::from_static(if hit { "hit" } else { "miss" }));
    resp
}

async fn blocking<T, F>(f: F) -> Result<T, Failure>
where
    F: FnOnce() -> Result<T, Failure> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| Failure::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

async fn solve(State(state): State<Arc<AppState>>, body: String) -> Result<Response, Failure> {
    let cfg = parse_config(&body)?;
    let (report, hit) = blocking(move || {
        let (scenario, hit) = state.scenario(&cfg)?;
        Ok((solve_scenario(&scenario)?, hit))
    })
    .await?;
    Ok(with_cache_header(Json(report).into_response(), hit))
}

#[derive(Debug, Deserialize)]
pub struct CurvesQuery {
    pub preset: String,
    pub seed: Option<u64>,
    pub samples: Option<usize>,
}

async fn curves(State(state): State<Arc<AppState>>, Query(q): Query<CurvesQuery>) -> Result<Response, Failure> {
    let Some(mut cfg) = presets::by_name(&q.preset) else {
        return Err(Failure::new(StatusCode::NOT_FOUND, format!("unknown preset `{}`", q.preset)));
    };
    if let Some(s) = q.seed {
        cfg = cfg.with_seed(s);
    }
    if let Some(n) = q.samples {
        cfg = cfg.with_samples(n);
    }
    cfg.validate()?;
    let (curves, hit) = blocking(move || {
        let (scenario, hit) = state.scenario(&cfg)?;
        let (pd, ret) = scenario.evaluator().curves(&cfg.solver.curve_grid())?;
        Ok((Curves::from_parts(pd, ret), hit))
    })
    .await?;
    Ok(with_cache_header(Json(curves).into_response(), hit))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CompareBody {
    base: serde_json::Value,
    variant: serde_json::Value,
}

async fn compare(State(state): State<Arc<AppState>>, body: String) -> Result<Response, Failure> {
    let req: CompareBody = serde_json::from_str(&body).map_err(|e| Error::config("body", e.to_string()))?;
    let base = ScenarioConfig::from_json(&req.base.to_string()).map_err(|e| prefixed(e, "base"))?;
    let variant = ScenarioConfig::from_json(&req.variant.to_string()).map_err(|e| prefixed(e, "variant"))?;
    let (cmp, hit) = blocking(move || {
        let (b, hit) = state.scenario(&base)?;
        let (v, _) = state.scenario(&variant)?;
        Ok((restructure_compare(&b, &v)?, hit))
    })
    .await?;
    Ok(with_cache_header(Json(cmp).into_response(), hit))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct JobTicket {
    pub id: u64,
    pub status_url: String,
}

async fn maxdebt(State(state): State<Arc<AppState>>, body: String) -> Result<Response, Failure> {
    let cfg = parse_config(&body)?;
    let id = state.new_job("maxdebt");
    let worker = state.clone();
    tokio::task::spawn_blocking(move || {
        let outcome = worker
            .scenario(&cfg)
            .and_then(|(s, _)| max_sustainable_debt(&s))
            .map_err(Failure::from)
            .and_then(|r| {
                serde_json::to_value(r).map_err(|e| Failure::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))
            });
        worker.finish_job(id, outcome);
    });
    let ticket = JobTicket { id, status_url: format!("/api/jobs/{id}") };
    Ok((StatusCode::ACCEPTED, Json(ticket)).into_response())
}

async fn job(State(state): State<Arc<AppState>>, Path(id): Path<u64>) -> Result<Json<Job>, Failure> {
    state.job(id).map(Json).ok_or_else(|| Failure::new(StatusCode::NOT_FOUND, format!("no job {id}")))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PresetEntry {
    pub name: String,
    pub config: ScenarioConfig,
}

async fn list_presets() -> Json<Vec<PresetEntry>> {
    Json(
        presets::NAMES
            .iter()
            .map(|n| PresetEntry { name: n.to_string(), config: presets::by_name(n).expect("known preset") })
            .collect(),
    )
}
