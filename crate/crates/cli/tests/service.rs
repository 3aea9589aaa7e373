use std::path::Path;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use steerseg_cli::commands::{SampleRecord, SAMPLES_FILE};
use steerseg_cli::service::{replay_store, router, AppState, Verdict, VerdictSink};
use tower::ServiceExt;

fn samples_dir(dir: &Path, n: usize) {
    let samples: Vec<SampleRecord> = (0..n)
        .map(|i| SampleRecord {
            id: format!("s{i:05}"),
            media: format!("media/{i:05}.png"),
            expression: "the red circle".into(),
            reasoning: "The red circle is on the left.".into(),
            attributes: vec!["red".into(), "left".into()],
        })
        .collect();
    std::fs::create_dir_all(dir.join("media")).unwrap();
    std::fs::write(dir.join("media/00000.png"), b"not really a png").unwrap();
    std::fs::write(dir.join(SAMPLES_FILE), serde_json::to_string(&samples).unwrap()).unwrap();
}

async fn call(state: &AppState, method: &str, uri: &str, body: Option<&str>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn json_call(state: &AppState, method: &str, uri: &str, body: Option<&str>) -> (StatusCode, Value) {
    let (s, b) = call(state, method, uri, body).await;
    (s, serde_json::from_slice(&b).unwrap())
}

async fn verdict(state: &AppState, id: &str, v: &str) -> StatusCode {
    let body = json!({ "verdict": v }).to_string();
    call(state, "POST", &format!("/api/samples/{id}/verdict"), Some(&body)).await.0
}

#[tokio::test]
async fn percent_true_over_labeled() {
    let dir = tempfile::tempdir().unwrap();
    samples_dir(dir.path(), 132);
    let st = AppState::open(dir.path(), &dir.path().join("store.jsonl")).unwrap();
    for i in 0..132 {
        let v = if i < 115 { "true" } else { "false" };
        assert_eq!(verdict(&st, &format!("s{i:05}"), v).await, StatusCode::OK);
    }
    let (s, stats) = json_call(&st, "GET", "/api/stats", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(stats["percent_true"], json!(87.1));
    assert_eq!(stats["labeled"], json!(132));
    assert_eq!(stats["progress"], json!(1.0));
}

#[tokio::test]
async fn skips_are_progress_but_not_labels() {
    let dir = tempfile::tempdir().unwrap();
    samples_dir(dir.path(), 4);
    let st = AppState::open(dir.path(), &dir.path().join("store.jsonl")).unwrap();
    verdict(&st, "s00000", "true").await;
    verdict(&st, "s00001", "skip").await;
    let s = st.stats().await;
    assert_eq!((s.true_count, s.skip_count, s.labeled, s.unlabeled), (1, 1, 1, 2));
    assert_eq!(s.percent_true, 100.0);
    assert_eq!(s.progress, 0.5);
}

#[tokio::test]
async fn store_replay_restores_state() {
    let dir = tempfile::tempdir().unwrap();
    samples_dir(dir.path(), 12);
    let store = dir.path().join("store.jsonl");
    let st = AppState::open(dir.path(), &store).unwrap();
    for i in 0..10 {
        let v = ["true", "false", "skip"][i % 3];
        verdict(&st, &format!("s{i:05}"), v).await;
    }
    verdict(&st, "s00000", "false").await;
    let before = st.stats().await;
    let (_, listing) = json_call(&st, "GET", "/api/samples", None).await;
    drop(st);

    let reopened = AppState::open(dir.path(), &store).unwrap();
    assert_eq!(reopened.stats().await, before);
    assert_eq!(json_call(&reopened, "GET", "/api/samples", None).await.1, listing);
    assert_eq!(replay_store(&store).unwrap()["s00000"].verdict, Verdict::False);
    assert_eq!(before.false_count, 4);
}

#[tokio::test]
async fn sample_detail_and_media() {
    let dir = tempfile::tempdir().unwrap();
    samples_dir(dir.path(), 2);
    let st = AppState::open(dir.path(), &dir.path().join("store.jsonl")).unwrap();
    let (s, d) = json_call(&st, "GET", "/api/samples/s00000", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(d["verdict"], json!("unlabeled"));
    assert_eq!(d["attributes"], json!(["red", "left"]));
    let (s, bytes) = call(&st, "GET", d["media"].as_str().unwrap(), None).await;
    assert_eq!((s, bytes.as_slice()), (StatusCode::OK, b"not really a png".as_slice()));
    assert_eq!(call(&st, "GET", "/media/../samples.json", None).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn bad_requests_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    samples_dir(dir.path(), 2);
    let st = AppState::open(dir.path(), &dir.path().join("store.jsonl")).unwrap();
    assert_eq!(verdict(&st, "s99999", "true").await, StatusCode::NOT_FOUND);
    assert_eq!(call(&st, "GET", "/api/samples/s99999", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(verdict(&st, "s00000", "maybe").await, StatusCode::BAD_REQUEST);
    assert_eq!(verdict(&st, "s00000", "unlabeled").await, StatusCode::BAD_REQUEST);
    for body in ["", "{}", "{\"verdict\":\"true\",\"x\":1}", "not json"] {
        let (s, _) = call(&st, "POST", "/api/samples/s00000/verdict", Some(body)).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{body}");
    }
    assert_eq!(st.stats().await.unlabeled, 2);
}

struct FailingSink;

impl VerdictSink for FailingSink {
    fn append(&mut self, _: &[u8]) -> std::io::Result<()> {
        Err(std::io::Error::other("disk full"))
    }
}

#[tokio::test]
async fn failed_store_write_leaves_state_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    samples_dir(dir.path(), 2);
    let st = AppState::with_sink(dir.path(), &dir.path().join("store.jsonl"), Box::new(FailingSink)).unwrap();
    let before = st.stats().await;
    assert_eq!(verdict(&st, "s00000", "true").await, StatusCode::INTERNAL_SERVER_ERROR);
    assert_eq!(st.stats().await, before);
    let (_, d) = json_call(&st, "GET", "/api/samples/s00000", None).await;
    assert_eq!(d["verdict"], json!("unlabeled"));
}

#[test]
fn duplicate_ids_rejected() {
    let dir = tempfile::tempdir().unwrap();
    samples_dir(dir.path(), 1);
    let text = std::fs::read_to_string(dir.path().join(SAMPLES_FILE)).unwrap();
    let mut v: Vec<Value> = serde_json::from_str(&text).unwrap();
    v.push(v[0].clone());
    std::fs::write(dir.path().join(SAMPLES_FILE), serde_json::to_string(&v).unwrap()).unwrap();
    assert!(AppState::open(dir.path(), &dir.path().join("store.jsonl")).is_err());
}
