use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::routing::post;
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use vistrace_core::synth::{build_trace, write_fixtures, ModelShape, SampleText};
use vistrace_core::{encode_trace, Category};
use vistrace_server::{router, AppState, Config};

struct Harness {
    app: Router,
    _dir: tempfile::TempDir,
}

fn harness(extractor_url: Option<String>) -> Harness {
    let dir = tempfile::tempdir().unwrap();
    write_fixtures(dir.path()).unwrap();
    let config = Config {
        data_dir: Some(dir.path().to_path_buf()),
        extractor_url,
        extractor_timeout: Duration::from_millis(300),
        max_upload_bytes: 4 << 20,
        ..Config::default()
    };
    Harness {
        app: router(Arc::new(AppState::new(config))),
        _dir: dir,
    }
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, body)
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    let (status, body) = send(app, Request::get(uri).body(Body::empty()).unwrap()).await;
    let value =
        serde_json::from_slice(&body).unwrap_or_else(|_| panic!("{uri}: not json: {}", String::from_utf8_lossy(&body)));
    (status, value)
}

async fn post_json(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    let req = Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let (status, body) = send(app, req).await;
    (status, serde_json::from_slice(&body).unwrap())
}

fn error_of(v: &Value) -> &str {
    v["error"].as_str().unwrap_or_else(|| panic!("no error field in {v}"))
}

#[tokio::test]
async fn samples_are_listed_by_id() {
    let h = harness(None);
    let (status, v) = get(&h.app, "/api/samples").await;
    assert_eq!(status, StatusCode::OK);
    let samples = v.as_array().unwrap();
    assert_eq!(samples.len(), 15);
    let ids: Vec<&str> = samples.iter().map(|s| s["id"].as_str().unwrap()).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
    let squad = samples.iter().find(|s| s["id"] == "squad_01").unwrap();
    assert_eq!(squad["task"], "squad");
    assert_eq!(squad["answer_preview"], "Carolingian-based cultures");
    assert!(squad["question"].as_str().unwrap().starts_with("What did the Normans"));
    assert!(samples
        .iter()
        .all(|s| ["squad", "hotpot", "babi"].contains(&s["task"].as_str().unwrap())));
}

#[tokio::test]
async fn layer_view_contract() {
    let h = harness(None);
    let (status, v) = get(&h.app, "/api/traces/squad_01/layers/10").await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["trace_id"], "squad_01");
    assert_eq!(v["layer"], 10);
    assert_eq!(v["phase"], 4);
    assert_eq!(v["aligned"], true);
    let tokens = v["tokens"].as_array().unwrap();
    let (_, summary) = get(&h.app, "/api/traces/squad_01").await;
    assert_eq!(tokens.len(), summary["num_tokens"].as_u64().unwrap() as usize);
    let answers = tokens.iter().filter(|t| t["category"] == "answer").count();
    assert_eq!(answers, 4);
    assert!(tokens.iter().any(|t| t["category"] == "supporting_fact"));
    for key in ["question_fact_distance", "answer_separation", "cluster_distinctness"] {
        assert!(v["metrics"][key].is_number(), "{key}");
    }

    let (_, plain) = get(&h.app, "/api/traces/squad_01/layers/10?align=false&special=false").await;
    assert_eq!(plain["aligned"], false);
    let plain_tokens = plain["tokens"].as_array().unwrap();
    assert_eq!(plain_tokens.len(), tokens.len() - 3);
    assert!(plain_tokens
        .iter()
        .all(|t| !t["text"].as_str().unwrap().starts_with('[')));
}

#[tokio::test]
async fn repeated_layer_requests_are_byte_identical() {
    let h = harness(None);
    let uri = "/api/traces/babi_task02/layers/7";
    let (_, a) = send(&h.app, Request::get(uri).body(Body::empty()).unwrap()).await;
    let (_, b) = send(&h.app, Request::get(uri).body(Body::empty()).unwrap()).await;
    assert_eq!(a, b);
}

#[tokio::test]
async fn alignment_keeps_metrics_and_distances() {
    let h = harness(None);
    let (_, raw) = get(&h.app, "/api/traces/squad_02/layers/6?align=false").await;
    let (_, aligned) = get(&h.app, "/api/traces/squad_02/layers/6").await;
    assert_eq!(raw["metrics"], aligned["metrics"]);
    let pts = |v: &Value| -> Vec<(f64, f64)> {
        v["tokens"]
            .as_array()
            .unwrap()
            .iter()
            .map(|t| (t["x"].as_f64().unwrap(), t["y"].as_f64().unwrap()))
            .collect()
    };
    let (a, b) = (pts(&raw), pts(&aligned));
    let d = |p: (f64, f64), q: (f64, f64)| (p.0 - q.0).hypot(p.1 - q.1);
    for i in 0..a.len() {
        for j in (i + 1)..a.len() {
            assert!((d(a[i], a[j]) - d(b[i], b[j])).abs() < 1e-9);
        }
    }
}

#[tokio::test]
async fn errors_are_structured() {
    let h = harness(None);
    let (status, v) = get(&h.app, "/api/traces/nope/layers/0").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(error_of(&v).contains("unknown trace"));

    let (status, v) = get(&h.app, "/api/traces/squad_01/layers/13").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(error_of(&v).contains("out of range"));

    let (status, v) = get(&h.app, "/api/traces/squad_01/layers/abc").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    error_of(&v);

    let (status, v) = get(&h.app, "/api/traces/squad_01/layers/0?align=maybe").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    error_of(&v);

    let (status, v) = get(&h.app, "/api/traces/..%2Fsecret/metrics").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    error_of(&v);

    let (status, v) = get(&h.app, "/api/nothing").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    error_of(&v);
}

#[tokio::test]
async fn metric_series_covers_every_layer() {
    let h = harness(None);
    let (status, v) = get(&h.app, "/api/traces/hotpot_01/metrics").await;
    assert_eq!(status, StatusCode::OK);
    let series = v.as_array().unwrap();
    assert_eq!(series.len(), 25);
    let phases: Vec<u64> = series.iter().map(|m| m["phase"].as_u64().unwrap()).collect();
    assert!(phases.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(phases.first(), Some(&1));
    assert_eq!(phases.last(), Some(&4));
}

#[tokio::test]
async fn uploads_are_stored_and_validated() {
    let h = harness(None);
    let sample = SampleText {
        question: "Who wrote it?".into(),
        context: "It was written by Ann. Bob read it.".into(),
        answer: "Ann".into(),
    };
    let bytes = encode_trace(&build_trace(&sample, &ModelShape::tiny(4, 16), 3).unwrap()).unwrap();
    let req = Request::post("/api/traces").body(Body::from(bytes.clone())).unwrap();
    let (status, body) = send(&h.app, req).await;
    assert_eq!(status, StatusCode::OK);
    let id = serde_json::from_slice::<Value>(&body).unwrap()["trace_id"]
        .as_str()
        .unwrap()
        .to_string();
    let (status, v) = get(&h.app, &format!("/api/traces/{id}/layers/4")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["phase"], 4);

    let req = Request::post("/api/traces")
        .body(Body::from(bytes[..bytes.len() - 8].to_vec()))
        .unwrap();
    let (status, body) = send(&h.app, req).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(String::from_utf8_lossy(&body).contains("payload length mismatch"));

    let req = Request::post("/api/traces")
        .body(Body::from(vec![0u8; 5 << 20]))
        .unwrap();
    let (status, body) = send(&h.app, req).await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE);
    assert!(serde_json::from_slice::<Value>(&body).unwrap()["error"].is_string());
}

#[tokio::test]
async fn predict_without_extractor_is_unavailable() {
    let h = harness(None);
    let (status, v) = post_json(
        &h.app,
        "/api/predict",
        json!({"question": "Q?", "context": "C.", "task": "squad"}),
    )
    .await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(error_of(&v), "no extractor configured");
}

#[tokio::test]
async fn predict_validates_input() {
    let h = harness(None);
    for body in [
        json!({"question": "", "context": "C.", "task": "squad"}),
        json!({"question": "Q?", "context": "  ", "task": "squad"}),
        json!({"question": "Q?", "context": "C.", "task": "xyz"}),
        json!({"context": "C."}),
    ] {
        let (status, v) = post_json(&h.app, "/api/predict", body.clone()).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
        error_of(&v);
    }
}

#[tokio::test]
async fn index_page_is_served() {
    let h = harness(None);
    let (status, body) = send(&h.app, Request::get("/").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    assert!(String::from_utf8_lossy(&body).contains("/api/samples"));
}

/// Minimal stand-in for the extractor service.
async fn mock_extractor(mode: &'static str) -> String {
    let app = Router::new().route(
        "/extract",
        post(move |axum::Json(req): axum::Json<Value>| async move {
            use axum::response::IntoResponse;
            match mode {
                "slow" => {
                    tokio::time::sleep(Duration::from_secs(5)).await;
                    StatusCode::OK.into_response()
                }
                "broken" => (
                    StatusCode::INTERNAL_SERVER_ERROR,
                    axum::Json(json!({"error": "model load failure"})),
                )
                    .into_response(),
                _ => {
                    let sample = SampleText {
                        question: req["question"].as_str().unwrap().into(),
                        context: req["context"].as_str().unwrap().into(),
                        answer: "kitchen".into(),
                    };
                    let mut trace = build_trace(&sample, &ModelShape::tiny(4, 16), 1).unwrap();
                    trace.manifest.gold_answer_text = None;
                    trace.manifest.question_text = None;
                    trace.manifest.context_text = None;
                    let bytes = encode_trace(&trace).unwrap();
                    ([("x-answer-json", r#"{"text":"kitchen"}"#)], bytes).into_response()
                }
            }
        }),
    );
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    format!("http://{addr}")
}

#[tokio::test]
async fn predict_through_extractor_marks_supporting_fact() {
    let h = harness(Some(mock_extractor("ok").await));
    let context = "Mary went to the garden. John went to the kitchen. Sandra slept.";
    let (status, v) = post_json(
        &h.app,
        "/api/predict",
        json!({"question": "Where is John?", "context": context, "answer": "kitchen", "task": "babi"}),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["answer"], "kitchen");
    assert_eq!(v["extractor_answer"]["text"], "kitchen");
    let id = v["trace_id"].as_str().unwrap();

    let (_, view) = get(&h.app, &format!("/api/traces/{id}/layers/2")).await;
    let facts: Vec<&str> = view["tokens"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|t| t["category"] == Category::SupportingFact.as_str())
        .map(|t| t["text"].as_str().unwrap())
        .collect();
    assert_eq!(facts, ["John", "went", "to", "the", "."]);
    let (_, summary) = get(&h.app, &format!("/api/traces/{id}")).await;
    assert_eq!(summary["supporting_fact_char_span"], json!([25, 50]));
}

#[tokio::test]
async fn extractor_failures_map_to_gateway_errors() {
    let h = harness(Some(mock_extractor("broken").await));
    let (status, v) = post_json(
        &h.app,
        "/api/predict",
        json!({"question": "Q?", "context": "C.", "task": "squad"}),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_GATEWAY);
    assert!(error_of(&v).contains("model load failure"));

    let h = harness(Some(mock_extractor("slow").await));
    let (status, v) = post_json(
        &h.app,
        "/api/predict",
        json!({"question": "Q?", "context": "C.", "task": "squad"}),
    )
    .await;
    assert_eq!(status, StatusCode::GATEWAY_TIMEOUT);
    error_of(&v);

    let h = harness(Some("http://127.0.0.1:9".into()));
    let (status, v) = post_json(
        &h.app,
        "/api/predict",
        json!({"question": "Q?", "context": "C.", "task": "squad"}),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_GATEWAY);
    error_of(&v);
}
