mod common;

use std::sync::Arc;
use std::time::Duration;

use axum::body::{to_bytes, Body, Bytes};
use axum::http::{Request, StatusCode};
use axum::Router;
use catrag_cli::server::{parse_query_request, router, AppState};
use catrag_core::llm::{AssembledContext, GenProvider, RelationTriplet};
use catrag_core::ner::Entity;
use catrag_core::{Engine, Error, QueryConfig, RetrievalMode};
use serde_json::{json, Value};
use tower::ServiceExt;

fn app(engine: Engine, cap: usize) -> (Router, Arc<Engine>) {
    let engine = Arc::new(engine);
    (router(AppState::new(engine.clone(), cap), None), engine)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

struct Failing;

impl GenProvider for Failing {
    fn extract_relations(&self, _: &str, _: &str, _: &[Entity]) -> catrag_core::Result<Vec<RelationTriplet>> {
        Ok(Vec::new())
    }

    fn generate(&self, _: &str, _: &AssembledContext) -> catrag_core::Result<String> {
        Err(Error::ProviderUnavailable("generator down".into()))
    }
}

struct Slow;

impl GenProvider for Slow {
    fn extract_relations(&self, _: &str, _: &str, _: &[Entity]) -> catrag_core::Result<Vec<RelationTriplet>> {
        Ok(Vec::new())
    }

    fn generate(&self, _: &str, _: &AssembledContext) -> catrag_core::Result<String> {
        std::thread::sleep(Duration::from_millis(300));
        Ok("slow answer".into())
    }
}

#[tokio::test]
async fn health_reports_graph_and_store() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(common::tiny_engine(dir.path()), 4);
    let (status, body) = call(&app, "GET", "/api/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
    assert_eq!(body["graph"]["chunks"], 2);
    assert_eq!(body["graph"]["related_to"], 3);
    assert_eq!(body["vstore"]["count"], 2);
}

#[tokio::test]
async fn categories_list_router_labels_with_chunk_counts() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(common::tiny_engine(dir.path()), 4);
    let (status, body) = call(&app, "GET", "/api/categories", None).await;
    assert_eq!(status, StatusCode::OK);
    let cats = body["categories"].as_array().unwrap();
    let names: Vec<&str> = cats.iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["Academic", "Finance", "StudentAffairs"]);
    assert_eq!(cats[0]["chunks"], 0);
    assert_eq!(cats[1]["chunks"], 1);
    assert_eq!(cats[2]["chunks"], 1);
}

#[tokio::test]
async fn classify_returns_a_distribution() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(common::tiny_engine(dir.path()), 4);
    let (status, body) = call(&app, "POST", "/api/classify", Some(json!({"text": "tuition fee refund"}))).await;
    assert_eq!(status, StatusCode::OK);
    let dist = body["distribution"].as_object().unwrap();
    assert_eq!(dist.len(), 3);
    let total: f64 = dist.values().map(|v| v.as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-6);
    assert!(dist.contains_key(body["label"].as_str().unwrap()));

    let (status, body) = call(&app, "POST", "/api/classify", Some(json!({"text": "  "}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["code"], "empty_text");
}

#[tokio::test]
async fn empty_query_is_422() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(common::tiny_engine(dir.path()), 4);
    let (status, body) = call(&app, "POST", "/api/query", Some(json!({"query": "   "}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["code"], "empty_query");
}

#[tokio::test]
async fn bad_fields_are_400_and_named() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(common::tiny_engine(dir.path()), 4);
    for (body, field) in [
        (json!({"query": "tuition", "k_vec": 0}), "k_vec"),
        (json!({"query": "tuition", "k_graph": "five"}), "k_graph"),
        (json!({"query": "tuition", "sim_threshold": 1.1}), "sim_threshold"),
        (json!({"query": "tuition", "mode": "hybrid"}), "mode"),
        (json!({"k_vec": 3}), "query"),
    ] {
        let (status, resp) = call(&app, "POST", "/api/query", Some(body)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{field}");
        let msg = resp["error"]["message"].as_str().unwrap();
        assert!(msg.contains(&format!("{field:?}")), "{msg} should name {field}");
    }
    let req = Request::builder()
        .method("POST")
        .uri("/api/query")
        .body(Body::from("{not json"))
        .unwrap();
    assert_eq!(app.clone().oneshot(req).await.unwrap().status(), StatusCode::BAD_REQUEST);
}

#[test]
fn request_parsing_applies_overrides() {
    let body = Bytes::from(r#"{"query":"q","k_vec":3,"k_graph":7,"sim_threshold":0.25,"mode":"rag"}"#);
    let (q, cfg) = parse_query_request(&body, &QueryConfig::default()).unwrap();
    assert_eq!(q, "q");
    assert_eq!((cfg.k_vec, cfg.k_graph, cfg.mode), (3, 7, RetrievalMode::Rag));
    assert_eq!(cfg.sim_threshold, 0.25);
    let (_, cfg) = parse_query_request(&Bytes::from(r#"{"query":"q"}"#), &QueryConfig::default()).unwrap();
    assert_eq!(cfg, QueryConfig::default());
}

#[tokio::test]
async fn rag_mode_has_no_graph_evidence() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(common::tiny_engine(dir.path()), 4);
    let (status, body) = call(
        &app,
        "POST",
        "/api/query",
        Some(json!({"query": "When is tuition due?", "mode": "rag", "sim_threshold": 0.0})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["mode"], "rag");
    assert_eq!(body["graph_hits"], json!([]));
    assert_eq!(body["entities"], json!([]));
    assert_eq!(body["relations"], json!([]));
    assert_eq!(body["vec_hits"].as_array().unwrap().len(), 2);

    let (status, body) = call(
        &app,
        "POST",
        "/api/query",
        Some(json!({"query": "When is tuition due?", "mode": "catrag", "sim_threshold": 0.0})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["mode"], "catrag");
    assert!(body["label"]["name"].is_string());
}

#[tokio::test]
async fn neighbors_return_exact_triplets() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(common::tiny_engine(dir.path()), 4);
    let (status, body) = call(&app, "GET", "/api/graph/neighbors?entity=%20Tuition%20", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["entity"], "tuition");
    assert_eq!(body["known"], true);
    let rel = common::tiny_relations();
    assert_eq!(body["relations"], json!([rel[1], rel[0]]));

    let (_, body) = call(&app, "GET", "/api/graph/neighbors?entity=tuition&limit=1", None).await;
    assert_eq!(body["relations"], json!([rel[1]]));

    let (_, body) = call(&app, "GET", "/api/graph/neighbors?entity=midnight", None).await;
    assert_eq!(body["relations"], json!([rel[2]]));

    let (_, body) = call(&app, "GET", "/api/graph/neighbors?entity=library", None).await;
    assert_eq!(body["known"], false);
    assert_eq!(body["relations"], json!([]));

    let (status, body) = call(&app, "GET", "/api/graph/neighbors?entity=tuition&limit=201", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"]["message"].as_str().unwrap().contains("\"limit\""));
    let (status, _) = call(&app, "GET", "/api/graph/neighbors", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn graph_stats_match_the_graph() {
    let dir = tempfile::tempdir().unwrap();
    let (app, engine) = app(common::tiny_engine(dir.path()), 4);
    let (status, body) = call(&app, "GET", "/api/graph/stats", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, serde_json::to_value(engine.graph.stats()).unwrap());
    assert_eq!(body["mentions"], 5);
}

#[tokio::test]
async fn generation_failure_is_503_with_evidence() {
    let dir = tempfile::tempdir().unwrap();
    let mut engine = common::tiny_engine(dir.path());
    engine.generator = Box::new(Failing);
    let (app, _) = app(engine, 4);
    let (status, body) = call(&app, "POST", "/api/query", Some(json!({"query": "When is tuition due?"}))).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(body["error"]["code"], "generation_unavailable");
    assert_eq!(body["evidence"]["vec_hits"].as_array().unwrap().len(), 2);
    assert_eq!(body["evidence"]["answer"], "");
}

#[tokio::test]
async fn zero_capacity_rejects_with_429() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(common::tiny_engine(dir.path()), 0);
    let (status, body) = call(&app, "POST", "/api/query", Some(json!({"query": "tuition"}))).await;
    assert_eq!(status, StatusCode::TOO_MANY_REQUESTS);
    assert_eq!(body["error"]["code"], "too_many_requests");
    // non-query endpoints are not capped
    let (status, _) = call(&app, "GET", "/api/health", None).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn queries_beyond_the_cap_get_429() {
    let dir = tempfile::tempdir().unwrap();
    let mut engine = common::tiny_engine(dir.path());
    engine.generator = Box::new(Slow);
    let (app, _) = app(engine, 1);
    let calls = (0..4).map(|_| call(&app, "POST", "/api/query", Some(json!({"query": "tuition"}))));
    let statuses: Vec<StatusCode> = futures_join(calls).await;
    assert_eq!(statuses.iter().filter(|s| **s == StatusCode::OK).count(), 1, "{statuses:?}");
    assert_eq!(statuses.iter().filter(|s| **s == StatusCode::TOO_MANY_REQUESTS).count(), 3);
    // the permit is released once the slow query finishes
    let (status, body) = call(&app, "POST", "/api/query", Some(json!({"query": "tuition"}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["answer"], "slow answer");
}

/// Polls every call on one task so they race for the permit.
async fn futures_join<F>(calls: impl Iterator<Item = F>) -> Vec<StatusCode>
where
    F: std::future::Future<Output = (StatusCode, Value)>,
{
    let mut set = Vec::new();
    for c in calls {
        set.push(Box::pin(c));
    }
    let mut out = vec![None; set.len()];
    std::future::poll_fn(|cx| {
        for (i, f) in set.iter_mut().enumerate() {
            if out[i].is_none() {
                if let std::task::Poll::Ready((s, _)) = f.as_mut().poll(cx) {
                    out[i] = Some(s);
                }
            }
        }
        if out.iter().all(Option::is_some) {
            std::task::Poll::Ready(())
        } else {
            std::task::Poll::Pending
        }
    })
    .await;
    out.into_iter().map(Option::unwrap).collect()
}

#[tokio::test]
async fn unknown_routes_are_json_404_and_wrong_methods_405() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app(common::tiny_engine(dir.path()), 4);
    let (status, body) = call(&app, "GET", "/api/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"]["code"], "not_found");
    let (status, body) = call(&app, "GET", "/api/query", None).await;
    assert_eq!(status, StatusCode::METHOD_NOT_ALLOWED);
    assert_eq!(body["error"]["code"], "method_not_allowed");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn query_storm_leaves_the_index_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let (app, engine) = app(common::tiny_engine(dir.path()), 64);
    let before = (engine.graph.to_jsonl(), engine.vstore.to_jsonl());
    let mut handles = Vec::new();
    for i in 0..40 {
        let app = app.clone();
        let mode = if i % 2 == 0 { "catrag" } else { "rag" };
        handles.push(tokio::spawn(async move {
            call(&app, "POST", "/api/query", Some(json!({"query": format!("tuition question {i}"), "mode": mode}))).await.0
        }));
    }
    for h in handles {
        assert_eq!(h.await.unwrap(), StatusCode::OK);
    }
    assert_eq!((engine.graph.to_jsonl(), engine.vstore.to_jsonl()), before);
}
