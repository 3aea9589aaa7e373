//! Diagnostic annotation service: samples, verdicts and summary statistics.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Component, Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;

use crate::commands::{SampleRecord, SAMPLES_FILE};
use crate::error::{input, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    True,
    False,
    Skip,
    Unlabeled,
}

/// One line of the verdict store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictLine {
    pub id: String,
    pub verdict: Verdict,
    pub timestamp: u64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Mark {
    verdict: Option<Verdict>,
    timestamp: Option<u64>,
}

impl Mark {
    fn verdict(&self) -> Verdict {
        self.verdict.unwrap_or(Verdict::Unlabeled)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub total: usize,
    pub true_count: usize,
    pub false_count: usize,
    pub skip_count: usize,
    pub unlabeled: usize,
    /// True and false verdicts; skips are not labels.
    pub labeled: usize,
    /// Percent true among labeled, rounded to one decimal.
    pub percent_true: f64,
    /// Fraction of samples with any verdict, skips included.
    pub progress: f64,
}

/// Durable destination for verdict lines.
pub trait VerdictSink: Send {
    /// Appends one complete line; returns only once it is durable.
    fn append(&mut self, line: &[u8]) -> std::io::Result<()>;
}

impl VerdictSink for File {
    fn append(&mut self, line: &[u8]) -> std::io::Result<()> {
        self.write_all(line)?;
        self.sync_data()
    }
}

struct Inner {
    samples: Vec<SampleRecord>,
    index: BTreeMap<String, usize>,
    marks: Vec<Mark>,
    store: Box<dyn VerdictSink>,
    store_path: PathBuf,
}

/// Shared service state; verdict writes are serialized through its lock.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Mutex<Inner>>,
    samples_dir: PathBuf,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Replays a store file; later lines override earlier ones.
pub fn replay_store(path: &Path) -> CliResult<BTreeMap<String, VerdictLine>> {
    let mut out = BTreeMap::new();
    let f = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
        Err(e) => return Err(input(path, e)),
    };
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| input(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<VerdictLine>(&line) {
            Ok(v) => {
                out.insert(v.id.clone(), v);
            }
            Err(e) => log::warn!("{}: skipping malformed line {}: {e}", path.display(), n + 1),
        }
    }
    Ok(out)
}

impl AppState {
    /// Loads samples, replays the store and appends new verdicts to it.
    pub fn open(samples_dir: &Path, store_path: &Path) -> CliResult<Self> {
        let store = OpenOptions::new()
            .create(true)
            .append(true)
            .open(store_path)
            .map_err(|e| input(store_path, e))?;
        Self::with_sink(samples_dir, store_path, Box::new(store))
    }

    /// Like [`AppState::open`] but writes new verdicts to `sink`.
    pub fn with_sink(samples_dir: &Path, store_path: &Path, sink: Box<dyn VerdictSink>) -> CliResult<Self> {
        let spath = samples_dir.join(SAMPLES_FILE);
        let text = std::fs::read_to_string(&spath).map_err(|e| input(&spath, e))?;
        let samples: Vec<SampleRecord> = serde_json::from_str(&text).map_err(|e| input(&spath, e))?;
        let mut index = BTreeMap::new();
        for (i, s) in samples.iter().enumerate() {
            if index.insert(s.id.clone(), i).is_some() {
                return Err(input(&spath, format!("duplicate sample id {:?}", s.id)));
            }
        }
        let mut marks = vec![Mark::default(); samples.len()];
        for (id, v) in replay_store(store_path)? {
            match index.get(&id) {
                Some(&i) if v.verdict != Verdict::Unlabeled => {
                    marks[i] = Mark {
                        verdict: Some(v.verdict),
                        timestamp: Some(v.timestamp),
                    }
                }
                _ => log::warn!("store entry for unknown sample {id:?} ignored"),
            }
        }
        Ok(AppState {
            inner: Arc::new(Mutex::new(Inner {
                samples,
                index,
                marks,
                store: sink,
                store_path: store_path.to_path_buf(),
            })),
            samples_dir: samples_dir.to_path_buf(),
        })
    }

    pub async fn stats(&self) -> Stats {
        stats_of(&self.inner.lock().await.marks)
    }
}

fn stats_of(marks: &[Mark]) -> Stats {
    let count = |v: Verdict| marks.iter().filter(|m| m.verdict() == v).count();
    let (t, f, s) = (count(Verdict::True), count(Verdict::False), count(Verdict::Skip));
    let labeled = t + f;
    let percent_true = if labeled == 0 {
        0.0
    } else {
        (1000.0 * t as f64 / labeled as f64).round() / 10.0
    };
    Stats {
        total: marks.len(),
        true_count: t,
        false_count: f,
        skip_count: s,
        unlabeled: marks.len() - t - f - s,
        labeled,
        percent_true,
        progress: if marks.is_empty() {
            0.0
        } else {
            (t + f + s) as f64 / marks.len() as f64
        },
    }
}

#[derive(Debug, Serialize)]
struct SampleSummary<'a> {
    id: &'a str,
    verdict: Verdict,
    timestamp: Option<u64>,
}

#[derive(Debug, Serialize)]
struct SampleDetail<'a> {
    id: &'a str,
    media: String,
    expression: &'a str,
    reasoning: &'a str,
    attributes: &'a [String],
    verdict: Verdict,
    timestamp: Option<u64>,
}

fn error(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(serde_json::json!({ "error": msg.into() }))).into_response()
}

async fn list_samples(State(st): State<AppState>) -> Response {
    let g = st.inner.lock().await;
    let out: Vec<_> = g
        .samples
        .iter()
        .zip(&g.marks)
        .map(|(s, m)| SampleSummary {
            id: &s.id,
            verdict: m.verdict(),
            timestamp: m.timestamp,
        })
        .collect();
    Json(out).into_response()
}

async fn get_sample(State(st): State<AppState>, UrlPath(id): UrlPath<String>) -> Response {
    let g = st.inner.lock().await;
    let Some(&i) = g.index.get(&id) else {
        return error(StatusCode::NOT_FOUND, format!("unknown sample {id:?}"));
    };
    let (s, m) = (&g.samples[i], g.marks[i]);
    Json(SampleDetail {
        id: &s.id,
        media: format!("/media/{}", s.media),
        expression: &s.expression,
        reasoning: &s.reasoning,
        attributes: &s.attributes,
        verdict: m.verdict(),
        timestamp: m.timestamp,
    })
    .into_response()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VerdictBody {
    verdict: String,
}

async fn post_verdict(State(st): State<AppState>, UrlPath(id): UrlPath<String>, body: Bytes) -> Response {
    let verdict = match serde_json::from_slice::<VerdictBody>(&body).map(|b| b.verdict) {
        Ok(v) if v == "true" => Verdict::True,
        Ok(v) if v == "false" => Verdict::False,
        Ok(v) if v == "skip" => Verdict::Skip,
        _ => return error(StatusCode::BAD_REQUEST, r#"body must be {"verdict": "true"|"false"|"skip"}"#),
    };
    let mut g = st.inner.lock().await;
    let Some(&i) = g.index.get(&id) else {
        return error(StatusCode::NOT_FOUND, format!("unknown sample {id:?}"));
    };
    let line = VerdictLine {
        id,
        verdict,
        timestamp: now(),
    };
    let mut text = serde_json::to_string(&line).expect("verdict lines serialize");
    text.push('\n');
    if let Err(e) = g.store.append(text.as_bytes()) {
        log::error!("{}: {e}", g.store_path.display());
        return error(StatusCode::INTERNAL_SERVER_ERROR, "verdict store write failed");
    }
    g.marks[i] = Mark {
        verdict: Some(verdict),
        timestamp: Some(line.timestamp),
    };
    Json(stats_of(&g.marks)).into_response()
}

async fn get_stats(State(st): State<AppState>) -> Response {
    Json(st.stats().await).into_response()
}

fn content_type(p: &Path) -> &'static str {
    match p.extension().and_then(|e| e.to_str()) {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("gif") => "image/gif",
        Some("html") => "text/html; charset=utf-8",
        Some("js") => "text/javascript",
        Some("css") => "text/css",
        _ => "application/octet-stream",
    }
}

async fn get_media(State(st): State<AppState>, UrlPath(rel): UrlPath<String>) -> Response {
    let rel = PathBuf::from(rel);
    if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
        return error(StatusCode::NOT_FOUND, "no such media");
    }
    let path = st.samples_dir.join(&rel);
    match tokio::fs::read(&path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response(),
        Err(_) => error(StatusCode::NOT_FOUND, "no such media"),
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/samples", get(list_samples))
        .route("/api/samples/{id}", get(get_sample))
        .route("/api/samples/{id}/verdict", post(post_verdict))
        .route("/api/stats", get(get_stats))
        .route("/media/{*path}", get(get_media))
        .with_state(state)
}
