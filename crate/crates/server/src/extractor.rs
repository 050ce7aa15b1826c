//! Client for the model-running extractor service.
//!
//! `POST {base}/extract` with `{"question", "context", "task"}`; a successful
//! response carries the `.vbtr` bytes as body and, optionally, the predicted
//! answer as JSON in the `X-Answer-JSON` header.

use std::time::Duration;

use serde::Serialize;
use thiserror::Error;

pub const ANSWER_HEADER: &str = "x-answer-json";

#[derive(Debug, Error)]
pub enum ExtractorError {
    #[error("extractor timed out after {0:?}")]
    Timeout(Duration),
    #[error("extractor unreachable: {0}")]
    Unreachable(String),
    #[error("extractor error ({status}): {message}")]
    Upstream { status: u16, message: String },
}

#[derive(Debug, Serialize)]
pub struct ExtractRequest<'a> {
    pub question: &'a str,
    pub context: &'a str,
    pub task: &'a str,
}

pub struct Extracted {
    pub trace_bytes: Vec<u8>,
    pub answer_json: Option<serde_json::Value>,
}

fn upstream_message(body: &[u8]) -> String {
    serde_json::from_slice::<serde_json::Value>(body)
        .ok()
        .and_then(|v| v.get("error").and_then(|e| e.as_str()).map(str::to_string))
        .unwrap_or_else(|| String::from_utf8_lossy(body).trim().to_string())
}

pub async fn extract(
    client: &reqwest::Client,
    base_url: &str,
    timeout: Duration,
    request: &ExtractRequest<'_>,
) -> Result<Extracted, ExtractorError> {
    let body = serde_json::to_vec(request).expect("request serializes");
    let classify = |e: reqwest::Error| {
        if e.is_timeout() {
            ExtractorError::Timeout(timeout)
        } else {
            ExtractorError::Unreachable(e.to_string())
        }
    };
    let response = client
        .post(format!("{base_url}/extract"))
        .header(reqwest::header::CONTENT_TYPE, "application/json")
        .timeout(timeout)
        .body(body)
        .send()
        .await
        .map_err(classify)?;
    let status = response.status();
    let answer_json = response
        .headers()
        .get(ANSWER_HEADER)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| serde_json::from_str(v).ok());
    let bytes = response.bytes().await.map_err(classify)?;
    if !status.is_success() {
        return Err(ExtractorError::Upstream {
            status: status.as_u16(),
            message: upstream_message(&bytes),
        });
    }
    Ok(Extracted {
        trace_bytes: bytes.to_vec(),
        answer_json,
    })
}
