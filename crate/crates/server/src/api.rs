//! Route handlers. Every error leaves as `{"error": "..."}` with a matching status.

use std::io::Read;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::{BytesRejection, JsonRejection, PathRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

use vistrace_core::analysis::AnalysisError;
use vistrace_core::trace::{decode_header, decode_manifest, HEADER_LEN};
use vistrace_core::{
    decode_trace, find_supporting_sentence, HiddenStateTrace, LayerView, Segment, TraceAnalysis, TraceManifest,
};

use crate::extractor::{self, ExtractRequest, ExtractorError};
use crate::store::{read_support_sidecar, Session};
use crate::AppState;

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: &self.message })).into_response()
    }
}

impl From<AnalysisError> for ApiError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::LayerOutOfRange { .. } | AnalysisError::TooFewTokens(_) => Self::bad_request(e.to_string()),
            other => Self::internal(other.to_string()),
        }
    }
}

impl From<PathRejection> for ApiError {
    fn from(e: PathRejection) -> Self {
        Self::bad_request(e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        Self::bad_request(e.body_text())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::bad_request(e.body_text())
    }
}

impl From<BytesRejection> for ApiError {
    fn from(e: BytesRejection) -> Self {
        Self::new(e.status(), e.body_text())
    }
}

pub type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Squad,
    Hotpot,
    Babi,
    Custom,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Squad => "squad",
            Task::Hotpot => "hotpot",
            Task::Babi => "babi",
            Task::Custom => "custom",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "squad" => Some(Task::Squad),
            "hotpot" | "hotpotqa" => Some(Task::Hotpot),
            "babi" => Some(Task::Babi),
            "custom" => Some(Task::Custom),
            _ => None,
        }
    }

    /// From the manifest's task field, else the id prefix, else custom.
    fn infer(manifest: &TraceManifest, id: &str) -> Self {
        manifest
            .task
            .as_deref()
            .and_then(Task::parse)
            .or_else(|| id.split(['_', '-']).next().and_then(Task::parse))
            .unwrap_or(Task::Custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleDescriptor {
    pub id: String,
    pub task: Task,
    pub question: String,
    pub answer_preview: String,
}

fn question_of(manifest: &TraceManifest) -> String {
    manifest.question_text.clone().unwrap_or_else(|| {
        manifest
            .tokens
            .iter()
            .filter(|t| t.segment == Segment::Question)
            .map(|t| t.text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    })
}

fn descriptor(id: String, manifest: &TraceManifest) -> SampleDescriptor {
    SampleDescriptor {
        task: Task::infer(manifest, &id),
        question: question_of(manifest),
        answer_preview: manifest
            .prediction
            .as_ref()
            .map(|p| p.answer_text.clone())
            .or_else(|| manifest.gold_answer_text.clone())
            .unwrap_or_default(),
        id,
    }
}

fn read_manifest_prefix(path: &std::path::Path) -> std::io::Result<Vec<u8>> {
    let mut file = std::fs::File::open(path)?;
    let mut buf = vec![0u8; HEADER_LEN];
    file.read_exact(&mut buf)?;
    let n = decode_header(&buf).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
    let mut manifest = Vec::new();
    file.take(n as u64).read_to_end(&mut manifest)?;
    buf.extend(manifest);
    Ok(buf)
}

fn valid_fixture_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 128 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

/// Descriptors for every readable `.vbtr` file in the data directory, sorted by id.
pub fn scan_samples(dir: &std::path::Path) -> std::io::Result<Vec<SampleDescriptor>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some(vistrace_core::trace::FILE_EXTENSION) {
            continue;
        }
        let Some(id) = path.file_stem().and_then(|s| s.to_str()).map(str::to_string) else {
            continue;
        };
        if !valid_fixture_id(&id) {
            continue;
        }
        match read_manifest_prefix(&path).map(|b| decode_manifest(&b)) {
            Ok(Ok(manifest)) => out.push(descriptor(id, &manifest)),
            Ok(Err(e)) => tracing::warn!("skipping fixture {}: {e}", path.display()),
            Err(e) => tracing::warn!("skipping fixture {}: {e}", path.display()),
        }
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

pub async fn list_samples(State(state): State<Arc<AppState>>) -> ApiResult<Json<Vec<SampleDescriptor>>> {
    let Some(dir) = state.config.data_dir.clone() else {
        return Ok(Json(vec![]));
    };
    let samples = tokio::task::spawn_blocking(move || scan_samples(&dir))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(|e| ApiError::internal(format!("cannot read data directory: {e}")))?;
    Ok(Json(samples))
}

fn fixture_path(state: &AppState, id: &str) -> Option<PathBuf> {
    let dir = state.config.data_dir.as_ref()?;
    valid_fixture_id(id).then(|| dir.join(format!("{id}.{}", vistrace_core::trace::FILE_EXTENSION)))
}

/// Looks up a stored trace, loading bundled fixtures on first use.
async fn session(state: &Arc<AppState>, id: &str) -> ApiResult<Arc<Session>> {
    if let Some(s) = state.store.get(id) {
        return Ok(s);
    }
    let unknown = || ApiError::not_found(format!("unknown trace: {id}"));
    let path = fixture_path(state, id).ok_or_else(unknown)?;
    if !path.is_file() {
        return Err(unknown());
    }
    let st = state.clone();
    let key = id.to_string();
    tokio::task::spawn_blocking(move || {
        let bytes = std::fs::read(&path).map_err(|e| ApiError::internal(format!("cannot read fixture: {e}")))?;
        let trace = decode_trace(&bytes).map_err(|e| ApiError::internal(format!("invalid fixture {key}: {e}")))?;
        let analysis = TraceAnalysis::new(trace, read_support_sidecar(&path));
        Ok(st.store.insert(key, st.new_session(analysis)))
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))?
}

fn trace_from_upload(bytes: &[u8]) -> ApiResult<HiddenStateTrace> {
    decode_trace(bytes).map_err(|e| ApiError::bad_request(e.to_string()))
}

#[derive(Serialize)]
pub struct TraceCreated {
    pub trace_id: String,
}

pub async fn upload_trace(
    State(state): State<Arc<AppState>>,
    body: Result<Bytes, BytesRejection>,
) -> ApiResult<Json<TraceCreated>> {
    let body = body?;
    if body.len() > state.config.max_upload_bytes {
        return Err(ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            "upload exceeds size limit",
        ));
    }
    let st = state.clone();
    let id = tokio::task::spawn_blocking(move || {
        let trace = trace_from_upload(&body)?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        st.store
            .insert(id.clone(), st.new_session(TraceAnalysis::new(trace, None)));
        Ok::<_, ApiError>(id)
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(TraceCreated { trace_id: id }))
}

#[derive(Serialize)]
pub struct TraceSummary {
    pub trace_id: String,
    pub task: Task,
    pub model_name: String,
    pub num_layers: usize,
    pub hidden_size: usize,
    pub stored_layers: usize,
    pub includes_embedding_layer: bool,
    pub num_tokens: usize,
    pub question: String,
    pub context: Option<String>,
    pub answer_text: Option<String>,
    pub gold_answer_text: Option<String>,
    pub supporting_fact_char_span: Option<(usize, usize)>,
}

pub async fn get_trace(
    State(state): State<Arc<AppState>>,
    path: Result<Path<String>, PathRejection>,
) -> ApiResult<Json<TraceSummary>> {
    let Path(id) = path?;
    let session = session(&state, &id).await?;
    let m = &session.analysis().trace().manifest;
    Ok(Json(TraceSummary {
        task: Task::infer(m, &id),
        trace_id: id,
        model_name: m.model_name.clone(),
        num_layers: m.num_layers,
        hidden_size: m.hidden_size,
        stored_layers: m.stored_layers,
        includes_embedding_layer: m.includes_embedding_layer,
        num_tokens: m.num_tokens,
        question: question_of(m),
        context: m.context_text.clone(),
        answer_text: m.prediction.as_ref().map(|p| p.answer_text.clone()),
        gold_answer_text: m.gold_answer_text.clone(),
        supporting_fact_char_span: session.analysis().categories().supporting_fact_char_span,
    }))
}

#[derive(Serialize)]
pub struct LayerViewPayload {
    pub trace_id: String,
    #[serde(flatten)]
    pub view: LayerView,
}

#[derive(Debug, Deserialize)]
pub struct LayerQuery {
    #[serde(default = "default_true")]
    pub align: bool,
    #[serde(default = "default_true")]
    pub special: bool,
}

fn default_true() -> bool {
    true
}

pub async fn get_layer_view(
    State(state): State<Arc<AppState>>,
    path: Result<Path<(String, usize)>, PathRejection>,
    query: Result<Query<LayerQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let Path((id, layer)) = path?;
    let Query(q) = query?;
    let session = session(&state, &id).await?;
    let stored = session.analysis().stored_layers();
    if layer >= stored {
        return Err(ApiError::bad_request(format!(
            "layer index out of range: {layer} not in 0..{stored}"
        )));
    }
    let body = tokio::task::spawn_blocking(move || session.layer_view_json(&id, layer, q.align, q.special))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(([(header::CONTENT_TYPE, "application/json")], body.as_ref().clone()).into_response())
}

pub async fn get_metric_series(
    State(state): State<Arc<AppState>>,
    path: Result<Path<String>, PathRejection>,
) -> ApiResult<Response> {
    let Path(id) = path?;
    let session = session(&state, &id).await?;
    let series = tokio::task::spawn_blocking(move || session.metric_series())
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(series.as_ref().clone()).into_response())
}

#[derive(Debug, Deserialize)]
pub struct PredictRequest {
    pub question: String,
    pub context: String,
    #[serde(default)]
    pub answer: Option<String>,
    #[serde(default = "default_task")]
    pub task: Task,
}

fn default_task() -> Task {
    Task::Custom
}

#[derive(Debug, Serialize)]
pub struct PredictResponse {
    pub trace_id: String,
    pub answer: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extractor_answer: Option<serde_json::Value>,
}

impl From<ExtractorError> for ApiError {
    fn from(e: ExtractorError) -> Self {
        let status = match e {
            ExtractorError::Timeout(_) => StatusCode::GATEWAY_TIMEOUT,
            _ => StatusCode::BAD_GATEWAY,
        };
        Self::new(status, e.to_string())
    }
}

pub async fn predict(
    State(state): State<Arc<AppState>>,
    body: Result<Json<PredictRequest>, JsonRejection>,
) -> ApiResult<Json<PredictResponse>> {
    let Json(req) = body?;
    if req.question.trim().is_empty() {
        return Err(ApiError::bad_request("question must not be empty"));
    }
    if req.context.trim().is_empty() {
        return Err(ApiError::bad_request("context must not be empty"));
    }
    let Some(base) = state.config.extractor_url.clone() else {
        return Err(ApiError::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "no extractor configured",
        ));
    };
    let extracted = extractor::extract(
        &state.http,
        &base,
        state.config.extractor_timeout,
        &ExtractRequest {
            question: &req.question,
            context: &req.context,
            task: req.task.as_str(),
        },
    )
    .await?;

    let st = state.clone();
    let (trace_id, answer) = tokio::task::spawn_blocking(move || {
        let mut trace = decode_trace(&extracted.trace_bytes).map_err(|e| {
            ApiError::new(
                StatusCode::BAD_GATEWAY,
                format!("extractor returned an invalid trace: {e}"),
            )
        })?;
        let gold = req.answer.filter(|a| !a.trim().is_empty());
        let m = &mut trace.manifest;
        m.question_text.get_or_insert_with(|| req.question.clone());
        m.context_text.get_or_insert_with(|| req.context.clone());
        m.task.get_or_insert_with(|| req.task.as_str().to_string());
        if gold.is_some() {
            m.gold_answer_text = gold.clone();
        }
        let span = gold.as_deref().and_then(|g| find_supporting_sentence(&req.context, g));
        let answer = m.prediction.as_ref().map(|p| p.answer_text.clone());
        let id = uuid::Uuid::new_v4().simple().to_string();
        st.store
            .insert(id.clone(), st.new_session(TraceAnalysis::new(trace, span)));
        Ok::<_, ApiError>((id, answer))
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))??;

    Ok(Json(PredictResponse {
        trace_id,
        answer,
        extractor_answer: extracted.answer_json,
    }))
}

pub async fn not_found() -> ApiError {
    ApiError::not_found("no such endpoint")
}

pub const FALLBACK_INDEX: &str = r#"<!doctype html>
<html lang="en">
<head><meta charset="utf-8"><title>vistrace</title></head>
<body>
<h1>vistrace</h1>
<p>No UI bundle configured (set <code>VISTRACE_STATIC_DIR</code>). The JSON API is available:</p>
<ul>
<li><code>GET /api/samples</code></li>
<li><code>POST /api/traces</code></li>
<li><code>GET /api/traces/{id}</code></li>
<li><code>GET /api/traces/{id}/layers/{k}?align=true&amp;special=true</code></li>
<li><code>GET /api/traces/{id}/metrics</code></li>
<li><code>POST /api/predict</code></li>
</ul>
</body>
</html>
"#;

pub async fn fallback_index() -> axum::response::Html<&'static str> {
    axum::response::Html(FALLBACK_INDEX)
}
