//! JSON HTTP API over a loaded, immutable [`Engine`].

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{Query, Request, State};
use axum::http::{HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use catrag_core::{Engine, Error, QueryConfig, RetrievalMode};
use serde_json::{json, Map, Value};
use tokio::sync::Semaphore;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

pub const DEFAULT_NEIGHBOR_LIMIT: usize = 20;
pub const MAX_NEIGHBOR_LIMIT: usize = 200;

#[derive(Clone)]
pub struct AppState {
    engine: Arc<Engine>,
    queries: Arc<Semaphore>,
}

impl AppState {
    pub fn new(engine: Arc<Engine>, max_concurrent_queries: usize) -> Self {
        Self {
            engine,
            queries: Arc::new(Semaphore::new(max_concurrent_queries)),
        }
    }
}

/// Error with its HTTP status; renders as `{"error":{"code","message"}}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    evidence: Option<Value>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            evidence: None,
        }
    }

    fn bad_field(field: &str, why: &str) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", format!("field {field:?}: {why}"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({"error": {"code": self.code, "message": self.message}});
        if let Some(ev) = self.evidence {
            body["evidence"] = ev;
        }
        (self.status, Json(body)).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e {
            Error::EmptyQuery | Error::EmptyText => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "empty_query", e.to_string()),
            Error::InvalidConfig(m) => Self::new(StatusCode::BAD_REQUEST, "bad_request", m),
            Error::GenerationUnavailable { message, evidence } => Self {
                status: StatusCode::SERVICE_UNAVAILABLE,
                code: "generation_unavailable",
                message,
                evidence: evidence.and_then(|ev| serde_json::to_value(*ev).ok()),
            },
            Error::ProviderUnavailable(m) => Self::new(StatusCode::SERVICE_UNAVAILABLE, "provider_unavailable", m),
            other => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", other.to_string()),
        }
    }
}

pub fn router(state: AppState, cors_origin: Option<&str>) -> Router {
    let origin = match cors_origin {
        None | Some("*") => AllowOrigin::from(Any),
        Some(o) => match HeaderValue::from_str(o) {
            Ok(v) => AllowOrigin::exact(v),
            Err(_) => AllowOrigin::from(Any),
        },
    };
    let cors = CorsLayer::new()
        .allow_origin(origin)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers(Any);
    Router::new()
        .route("/api/health", get(health))
        .route("/api/categories", get(categories))
        .route("/api/classify", post(classify))
        .route("/api/query", post(query))
        .route("/api/graph/stats", get(graph_stats))
        .route("/api/graph/neighbors", get(neighbors))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .method_not_allowed_fallback(|| async {
            ApiError::new(StatusCode::METHOD_NOT_ALLOWED, "method_not_allowed", "method not allowed")
        })
        .layer(middleware::from_fn(access_log))
        .layer(cors)
        .with_state(state)
}

async fn access_log(req: Request, next: Next) -> Response {
    let started = Instant::now();
    let (method, path) = (req.method().clone(), req.uri().path().to_string());
    let resp = next.run(req).await;
    log::info!(
        target: "catrag::access",
        "{}",
        json!({
            "method": method.as_str(),
            "path": path,
            "status": resp.status().as_u16(),
            "elapsed_ms": started.elapsed().as_secs_f64() * 1e3,
        })
    );
    resp
}

async fn health(State(s): State<AppState>) -> Json<Value> {
    Json(json!({
        "status": "ok",
        "graph": s.engine.graph.stats(),
        "vstore": {"count": s.engine.vstore.len(), "dim": s.engine.vstore.dim()},
    }))
}

async fn categories(State(s): State<AppState>) -> Json<Value> {
    let counts: BTreeMap<String, usize> = s.engine.graph.categories().into_iter().collect();
    let list: Vec<Value> = s
        .engine
        .router
        .labels()
        .iter()
        .map(|l| json!({"id": l.id, "name": l.name, "chunks": counts.get(&l.name).copied().unwrap_or(0)}))
        .collect();
    Json(json!({ "categories": list }))
}

fn parse_object(body: &Bytes) -> Result<Map<String, Value>, ApiError> {
    match serde_json::from_slice::<Value>(body) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(ApiError::new(StatusCode::BAD_REQUEST, "bad_request", "body must be a JSON object")),
        Err(e) => Err(ApiError::new(StatusCode::BAD_REQUEST, "bad_request", format!("malformed JSON: {e}"))),
    }
}

fn required_str<'a>(m: &'a Map<String, Value>, field: &str) -> Result<&'a str, ApiError> {
    match m.get(field) {
        Some(Value::String(s)) => Ok(s),
        Some(_) => Err(ApiError::bad_field(field, "must be a string")),
        None => Err(ApiError::bad_field(field, "is required")),
    }
}

fn optional_count(m: &Map<String, Value>, field: &str) -> Result<Option<usize>, ApiError> {
    match m.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => match v.as_u64() {
            Some(n) if (1..=1000).contains(&n) => Ok(Some(n as usize)),
            _ => Err(ApiError::bad_field(field, "must be an integer between 1 and 1000")),
        },
    }
}

async fn classify(State(s): State<AppState>, body: Bytes) -> Result<Json<Value>, ApiError> {
    let m = parse_object(&body)?;
    let text = required_str(&m, "text")?;
    if text.trim().is_empty() {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "empty_text", "text is empty"));
    }
    let norm = s.engine.normalizer.normalize(text);
    let p = s.engine.router.predict(if norm.is_empty() { text } else { &norm });
    let distribution: BTreeMap<&str, f64> = s
        .engine
        .router
        .labels()
        .iter()
        .zip(&p.distribution)
        .map(|(l, &prob)| (l.name.as_str(), prob))
        .collect();
    Ok(Json(json!({
        "label": p.label.name,
        "confidence": p.confidence,
        "low_signal": p.low_signal,
        "distribution": distribution,
    })))
}

/// Parses the query body into the question and a per-request config.
pub fn parse_query_request(body: &Bytes, defaults: &QueryConfig) -> Result<(String, QueryConfig), ApiError> {
    let m = parse_object(body)?;
    let q = required_str(&m, "query")?.to_string();
    let mut cfg = *defaults;
    if let Some(k) = optional_count(&m, "k_vec")? {
        cfg.k_vec = k;
    }
    if let Some(k) = optional_count(&m, "k_graph")? {
        cfg.k_graph = k;
    }
    match m.get("sim_threshold") {
        None | Some(Value::Null) => {}
        Some(v) => match v.as_f64() {
            Some(t) if (0.0..=1.0).contains(&t) => cfg.sim_threshold = t,
            _ => return Err(ApiError::bad_field("sim_threshold", "must be a number in [0, 1]")),
        },
    }
    match m.get("mode") {
        None | Some(Value::Null) => {}
        Some(Value::String(s)) => {
            cfg.mode = s
                .parse::<RetrievalMode>()
                .map_err(|_| ApiError::bad_field("mode", "must be \"catrag\" or \"rag\""))?
        }
        Some(_) => return Err(ApiError::bad_field("mode", "must be \"catrag\" or \"rag\"")),
    }
    if q.trim().is_empty() {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "empty_query", "query is empty"));
    }
    Ok((q, cfg))
}

async fn query(State(s): State<AppState>, body: Bytes) -> Result<Json<Value>, ApiError> {
    let (q, cfg) = parse_query_request(&body, &s.engine.defaults)?;
    let _permit = s.queries.clone().try_acquire_owned().map_err(|_| {
        ApiError::new(StatusCode::TOO_MANY_REQUESTS, "too_many_requests", "concurrent query limit reached")
    })?;
    let engine = s.engine.clone();
    let outcome = tokio::task::spawn_blocking(move || engine.query(&q, &cfg))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
    let (status, timings, label) = match &outcome {
        Ok(r) => ("ok", Some(r.timings), r.label.as_ref().map(|l| l.name.clone())),
        Err(Error::GenerationUnavailable { evidence, .. }) => (
            "degraded",
            evidence.as_ref().map(|e| e.timings),
            evidence.as_ref().and_then(|e| e.label.as_ref().map(|l| l.name.clone())),
        ),
        Err(_) => ("error", None, None),
    };
    log::info!(
        target: "catrag::query",
        "{}",
        json!({"mode": cfg.mode, "label": label, "status": status, "timings": timings})
    );
    let result = outcome?;
    Ok(Json(serde_json::to_value(result).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?))
}

async fn graph_stats(State(s): State<AppState>) -> Json<Value> {
    Json(json!(s.engine.graph.stats()))
}

async fn neighbors(
    State(s): State<AppState>,
    Query(params): Query<BTreeMap<String, String>>,
) -> Result<Json<Value>, ApiError> {
    let entity = params
        .get("entity")
        .map(|e| e.trim())
        .filter(|e| !e.is_empty())
        .ok_or_else(|| ApiError::bad_field("entity", "is required"))?;
    let limit = match params.get("limit") {
        None => DEFAULT_NEIGHBOR_LIMIT,
        Some(l) => match l.parse::<usize>() {
            Ok(n) if (1..=MAX_NEIGHBOR_LIMIT).contains(&n) => n,
            _ => return Err(ApiError::bad_field("limit", "must be an integer between 1 and 200")),
        },
    };
    let canonical = catrag_core::ner::canonicalize(entity);
    let relations = s.engine.graph.neighbors(&canonical, limit);
    Ok(Json(json!({
        "entity": canonical,
        "known": s.engine.graph.entity(&canonical).is_some(),
        "relations": relations,
    })))
}

/// Binds and serves until ctrl-c.
pub async fn serve(state: AppState, bind: &str, port: u16, cors_origin: Option<&str>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind((bind, port)).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state, cors_origin))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
