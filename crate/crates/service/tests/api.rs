use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use pbos_service::{router, Store};
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let v = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or(Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, v)
}

fn memory_app() -> Router {
    router(Arc::new(Store::in_memory()))
}

fn central() -> Value {
    json!({"mu": 0.0, "n_scale": 10.0, "var_param": 1.0, "v_scale": 10.0})
}

fn flat() -> Value {
    json!({"mu": 0.0, "n_scale": 1.0, "var_param": 20.0, "v_scale": 1.0})
}

/// Ten values with mean 0.5 and sum of squared deviations 9.
fn reaching_batch() -> Vec<f64> {
    let k = 0.9f64.sqrt();
    (0..5).flat_map(|_| [0.5 - k, 0.5 + k]).collect()
}

/// Deterministic pseudo-normal noise.
fn noise(n: usize, seed: u64) -> Vec<f64> {
    let mut s = seed;
    (0..n)
        .map(|_| {
            let mut acc = 0.0;
            for _ in 0..12 {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                acc += (s >> 11) as f64 / (1u64 << 53) as f64;
            }
            acc - 6.0
        })
        .collect()
}

async fn create(app: &Router, config: Value, prior: Value, seed: u64) -> String {
    let (st, v) = call(app, "POST", "/sessions", Some(json!({"config": config, "prior": prior, "seed": seed}))).await;
    assert_eq!(st, StatusCode::CREATED, "{v}");
    v["id"].as_str().unwrap().to_string()
}

fn small_config(extra: Value) -> Value {
    let mut c = json!({"cil_thres": 0.3, "tl": 0.5, "n_min": 4, "n_max": 20, "rehearsal": {"m": 30, "sizes": (1..=20).collect::<Vec<_>>(), "coverage": 0.95}});
    for (k, v) in extra.as_object().unwrap() {
        c[k] = v.clone();
    }
    c
}

#[tokio::test]
async fn health() {
    let (st, _) = call(&memory_app(), "GET", "/healthz", None).await;
    assert_eq!(st, StatusCode::OK);
}

#[tokio::test]
async fn invalid_configs_are_rejected() {
    let app = memory_app();
    for (config, field) in [
        (json!({"cil_thres": 1.0, "tl": 0.5, "n_min": 30, "n_max": 20}), "n_min"),
        (json!({"cil_thres": 1.0, "tl": 1.5, "n_min": 5, "n_max": 20}), "tl"),
    ] {
        let (st, v) = call(&app, "POST", "/sessions", Some(json!({"config": config, "prior": central()}))).await;
        assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY, "{v}");
        assert!(v["field"].as_str().unwrap().contains(field), "{v}");
    }
    let bad_prior = json!({"mu": 0.0, "n_scale": -1.0, "var_param": 1.0, "v_scale": 1.0});
    let (st, _) = call(&app, "POST", "/sessions", Some(json!({"config": small_config(json!({})), "prior": bad_prior}))).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    let (st, _) = call(&app, "POST", "/sessions", Some(json!({"config": small_config(json!({})), "prior": central(), "bogus": 1}))).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    let (st, v) = call(&app, "GET", "/sessions", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v.as_array().unwrap().len(), 0);
}

#[tokio::test]
async fn target_reached_then_conflict() {
    let app = memory_app();
    let id = create(&app, json!({"cil_thres": 1.0, "tl": 0.0, "n_min": 10, "n_max": 50, "batch": 10}), central(), 1).await;
    let (st, v) = call(&app, "POST", &format!("/sessions/{id}/observations"), Some(json!({"values": reaching_batch()}))).await;
    assert_eq!(st, StatusCode::OK, "{v}");
    assert_eq!(v["decision"]["kind"]["kind"], "stop_target_reached");
    assert_eq!(v["decision"]["i"], 10);
    assert!((v["decision"]["t_i"].as_f64().unwrap() - 0.9387).abs() < 1e-4);
    assert_eq!(v["accepted"], 10);
    assert_eq!(v["session"]["running"], false);

    let (st, v) = call(&app, "POST", &format!("/sessions/{id}/observations"), Some(json!({"values": [0.1]}))).await;
    assert_eq!(st, StatusCode::CONFLICT, "{v}");
    let (_, v) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(v["i"], 10);
}

#[tokio::test]
async fn bad_observations_leave_state_unchanged() {
    let app = memory_app();
    let id = create(&app, small_config(json!({})), flat(), 3).await;
    let (_, before) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    for body in [json!({"values": []}), json!({"values": "x"}), json!({"vals": [1.0]})] {
        let (st, _) = call(&app, "POST", &format!("/sessions/{id}/observations"), Some(body)).await;
        assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    }
    let (st, _) = call(&app, "POST", "/sessions/nope/observations", Some(json!({"values": [1.0]}))).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    let (_, after) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(before["state_hash"], after["state_hash"]);
}

#[tokio::test]
async fn one_request_equals_separate_requests() {
    let app = memory_app();
    let values = noise(6, 11);
    let cfg = small_config(json!({"tl": 0.0}));
    let a = create(&app, cfg.clone(), flat(), 7).await;
    let b = create(&app, cfg, flat(), 7).await;
    let (_, whole) = call(&app, "POST", &format!("/sessions/{a}/observations"), Some(json!({"values": values}))).await;
    assert_eq!(whole["decisions"].as_array().unwrap().len(), 6);
    let mut last = Value::Null;
    for x in &values {
        let (st, v) = call(&app, "POST", &format!("/sessions/{b}/observations"), Some(json!({"values": [x]}))).await;
        assert_eq!(st, StatusCode::OK);
        last = v;
    }
    assert_eq!(whole["session"]["state_hash"], last["session"]["state_hash"]);
    assert_eq!(whole["decision"], last["decision"]);
    assert_eq!(whole["session"]["steps"], last["session"]["steps"]);
    assert_eq!(last["session"]["steps"].as_array().unwrap().len(), 6);
}

#[tokio::test]
async fn what_if_does_not_mutate() {
    let app = memory_app();
    let id = create(&app, small_config(json!({"cil_thres": 0.01})), flat(), 5).await;
    let (st, v) = call(&app, "POST", &format!("/sessions/{id}/what-if"), Some(json!({"tl": 0.1}))).await;
    assert_eq!(st, StatusCode::CONFLICT, "before n_min: {v}");
    assert!(v["message"].as_str().unwrap().contains("n_min"));

    let (_, v) = call(&app, "POST", &format!("/sessions/{id}/observations"), Some(json!({"values": noise(4, 3)}))).await;
    let hash = v["session"]["state_hash"].clone();

    let (st, d) = call(&app, "POST", &format!("/sessions/{id}/what-if"), Some(json!({"tl": 0.0}))).await;
    assert_eq!(st, StatusCode::OK, "{d}");
    let (_, again) = call(&app, "POST", &format!("/sessions/{id}/what-if"), Some(json!({"tl": 0.0}))).await;
    assert_eq!(d, again);
    assert_eq!(d["kind"]["kind"], "continue");
    let (_, d) = call(&app, "POST", &format!("/sessions/{id}/what-if"), Some(json!({"cil_thres": "inf"}))).await;
    assert_eq!(d["kind"]["kind"], "continue");
    assert_eq!(d["diagnostics"]["success_prob"], 1.0);
    let (st, _) = call(&app, "POST", &format!("/sessions/{id}/what-if"), Some(json!({"tl": 2.0}))).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);

    let (_, after) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(after["state_hash"], hash);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_requests_serialise_per_session() {
    let app = memory_app();
    let mut cfg = small_config(json!({"tl": 0.0, "cil_thres": 1e-6}));
    cfg["n_max"] = json!(200);
    cfg["rehearsal"] = json!({"m": 2, "sizes": (1..=200).collect::<Vec<_>>(), "coverage": 0.95});
    let id = create(&app, cfg, flat(), 1).await;
    let tasks: Vec<_> = noise(100, 99)
        .into_iter()
        .map(|x| {
            let app = app.clone();
            let uri = format!("/sessions/{id}/observations");
            tokio::spawn(async move { call(&app, "POST", &uri, Some(json!({"values": [x]}))).await })
        })
        .collect();
    let mut seen = Vec::new();
    for t in tasks {
        let (st, v) = t.await.unwrap();
        assert_eq!(st, StatusCode::OK, "{v}");
        seen.push(v["decision"]["i"].as_u64().unwrap());
    }
    seen.sort_unstable();
    assert_eq!(seen, (1..=100).collect::<Vec<u64>>());
    let (_, v) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(v["i"], 100);
    assert_eq!(v["events"], 101);
}

#[tokio::test]
async fn replay_restores_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let (id, hash, view) = {
        let app = router(Arc::new(Store::open(dir.path()).unwrap()));
        let id = create(&app, small_config(json!({"batch": 2, "tl": 0.0})), flat(), 21).await;
        call(&app, "POST", &format!("/sessions/{id}/observations"), Some(json!({"values": noise(5, 1)}))).await;
        let (_, v) = call(&app, "POST", &format!("/sessions/{id}/observations"), Some(json!({"values": noise(3, 2)}))).await;
        let (_, view) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
        (id, v["session"]["state_hash"].clone(), view)
    };
    let app = router(Arc::new(Store::open(dir.path()).unwrap()));
    let (st, replayed) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(replayed["state_hash"], hash);
    assert_eq!(replayed, view);

    // A tampered log refuses to load.
    let path = dir.path().join("sessions").join(format!("{id}.ndjson"));
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut ev: Value = serde_json::from_str(&lines[1]).unwrap();
    ev["values"][0] = json!(123.0);
    lines[1] = ev.to_string();
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    assert!(Store::open(dir.path()).is_err());
}
