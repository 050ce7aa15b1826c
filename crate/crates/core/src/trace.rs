//! Hidden-state trace types and the `.vbtr` container format.
//!
//! A container is laid out as:
//!
//! ```text
//! 0..4      b"VBTR"
//! 4         version (u8, currently 1)
//! 5..9      manifest length N (u32 little-endian)
//! 9..9+N    UTF-8 JSON manifest
//! 9+N..     stored_layers matrices of num_tokens x hidden_size f32, little-endian,
//!           row-major (token-major), layer 0 first
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Matrix;

pub const MAGIC: &[u8; 4] = b"VBTR";
pub const FORMAT_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 9;
/// Sequence length limit of BERT-style encoders.
pub const MAX_TOKENS: usize = 512;
pub const FILE_EXTENSION: &str = "vbtr";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TraceError {
    #[error("not a trace file")]
    NotATraceFile,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),
    #[error("truncated manifest: header declares {declared} bytes but only {available} remain")]
    TruncatedManifest { declared: usize, available: usize },
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("payload length mismatch: expected {expected} bytes, found {actual}")]
    PayloadLengthMismatch { expected: String, actual: usize },
    #[error("non-finite hidden state at layer {layer}, token {token}, dim {dim}")]
    NonFinite { layer: usize, token: usize, dim: usize },
    #[error("empty token list")]
    EmptyTokens,
    #[error("too many tokens: {0} exceeds the {MAX_TOKENS} token limit")]
    TooManyTokens(usize),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

fn invariant(msg: impl Into<String>) -> TraceError {
    TraceError::Invariant(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    Question,
    Context,
    Special,
}

/// One input token as stored in the manifest.
///
/// Offsets are in chars. Question tokens index into the question text and
/// context tokens into the context text; special tokens carry no offsets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub text: String,
    #[serde(default)]
    pub char_start: Option<usize>,
    #[serde(default)]
    pub char_end: Option<usize>,
    pub segment: Segment,
}

impl TokenRecord {
    pub fn special(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            char_start: None,
            char_end: None,
            segment: Segment::Special,
        }
    }

    pub fn span(text: impl Into<String>, segment: Segment, char_start: usize, char_end: usize) -> Self {
        Self {
            text: text.into(),
            char_start: Some(char_start),
            char_end: Some(char_end),
            segment,
        }
    }

    pub fn char_range(&self) -> Option<(usize, usize)> {
        self.char_start.zip(self.char_end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub answer_start_token: usize,
    pub answer_end_token: usize,
    pub answer_text: String,
}

impl Prediction {
    pub fn contains(&self, token: usize) -> bool {
        (self.answer_start_token..=self.answer_end_token).contains(&token)
    }

    pub fn token_count(&self) -> usize {
        self.answer_end_token - self.answer_start_token + 1
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    #[default]
    #[serde(rename = "f32le")]
    F32Le,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceManifest {
    pub model_name: String,
    /// Encoder blocks in the model (12 for base, 24 for large).
    pub num_layers: usize,
    pub hidden_size: usize,
    pub stored_layers: usize,
    /// When set, matrix 0 is the embedding output and block k sits at index k.
    pub includes_embedding_layer: bool,
    pub num_tokens: usize,
    pub tokens: Vec<TokenRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<Prediction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_answer_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context_text: Option<String>,
    /// Dataset the sample came from (`squad`, `hotpot`, `babi`, `custom`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    #[serde(default)]
    pub dtype: Dtype,
}

impl TraceManifest {
    /// Encoder block number for a stored layer index (0 = embedding output).
    pub fn block_of(&self, stored_index: usize) -> usize {
        if self.includes_embedding_layer {
            stored_index
        } else {
            stored_index + 1
        }
    }

    /// Payload size in bytes implied by the manifest alone, `None` on overflow.
    pub fn payload_len(&self) -> Option<usize> {
        self.stored_layers
            .checked_mul(self.num_tokens)?
            .checked_mul(self.hidden_size)?
            .checked_mul(4)
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        if self.num_tokens == 0 || self.tokens.is_empty() {
            return Err(TraceError::EmptyTokens);
        }
        if self.num_tokens > MAX_TOKENS {
            return Err(TraceError::TooManyTokens(self.num_tokens));
        }
        if self.tokens.len() != self.num_tokens {
            return Err(invariant(format!(
                "token table has {} entries but num_tokens is {}",
                self.tokens.len(),
                self.num_tokens
            )));
        }
        if self.num_layers == 0 {
            return Err(invariant("num_layers must be positive"));
        }
        if self.hidden_size == 0 {
            return Err(invariant("hidden_size must be positive"));
        }
        let expected_stored = self.num_layers.checked_add(usize::from(self.includes_embedding_layer));
        if expected_stored != Some(self.stored_layers) {
            return Err(invariant(format!(
                "stored_layers is {} but num_layers is {} (embedding layer: {})",
                self.stored_layers, self.num_layers, self.includes_embedding_layer
            )));
        }
        for (i, tok) in self.tokens.iter().enumerate() {
            match (tok.segment, tok.char_start, tok.char_end) {
                (Segment::Special, None, None) => {}
                (Segment::Special, _, _) => {
                    return Err(invariant(format!("special token {i} must not carry char offsets")))
                }
                (_, Some(start), Some(end)) if start < end => {}
                (_, Some(_), Some(_)) => return Err(invariant(format!("token {i} has char_start >= char_end"))),
                _ => return Err(invariant(format!("non-special token {i} must carry both char offsets"))),
            }
        }
        if let Some(p) = &self.prediction {
            if p.answer_start_token > p.answer_end_token || p.answer_end_token >= self.num_tokens {
                return Err(invariant(format!(
                    "prediction span {}..={} is outside 0..{}",
                    p.answer_start_token, p.answer_end_token, self.num_tokens
                )));
            }
            if let Some(i) =
                (p.answer_start_token..=p.answer_end_token).find(|&i| self.tokens[i].segment == Segment::Special)
            {
                return Err(invariant(format!("prediction span covers special token {i}")));
            }
        }
        Ok(())
    }
}

/// One QA forward pass: manifest plus one `num_tokens x hidden_size` matrix per stored layer.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStateTrace {
    pub manifest: TraceManifest,
    pub layers: Vec<Matrix<f32>>,
}

impl HiddenStateTrace {
    pub fn new(manifest: TraceManifest, layers: Vec<Matrix<f32>>) -> Result<Self, TraceError> {
        let trace = Self { manifest, layers };
        trace.validate()?;
        Ok(trace)
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        let m = &self.manifest;
        m.validate()?;
        if self.layers.len() != m.stored_layers {
            return Err(invariant(format!(
                "trace holds {} layer matrices but stored_layers is {}",
                self.layers.len(),
                m.stored_layers
            )));
        }
        for (layer, mat) in self.layers.iter().enumerate() {
            if mat.rows() != m.num_tokens || mat.cols() != m.hidden_size {
                return Err(invariant(format!(
                    "layer {layer} has shape {}x{}, expected {}x{}",
                    mat.rows(),
                    mat.cols(),
                    m.num_tokens,
                    m.hidden_size
                )));
            }
            check_finite(layer, mat)?;
        }
        Ok(())
    }

    pub fn num_tokens(&self) -> usize {
        self.manifest.num_tokens
    }

    pub fn stored_layers(&self) -> usize {
        self.manifest.stored_layers
    }
}

fn check_finite(layer: usize, mat: &Matrix<f32>) -> Result<(), TraceError> {
    match mat.as_slice().iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(pos) => Err(TraceError::NonFinite {
            layer,
            token: pos / mat.cols(),
            dim: pos % mat.cols(),
        }),
    }
}

pub fn encode_trace(trace: &HiddenStateTrace) -> Result<Vec<u8>, TraceError> {
    trace.validate()?;
    let manifest = serde_json::to_vec(&trace.manifest).map_err(|e| TraceError::InvalidManifest(e.to_string()))?;
    let manifest_len =
        u32::try_from(manifest.len()).map_err(|_| TraceError::InvalidManifest("manifest exceeds 4 GiB".into()))?;
    let payload_len = trace
        .manifest
        .payload_len()
        .ok_or_else(|| invariant("payload size overflows"))?;

    let mut out = Vec::with_capacity(HEADER_LEN + manifest.len() + payload_len);
    out.extend_from_slice(MAGIC);
    out.push(FORMAT_VERSION);
    out.extend_from_slice(&manifest_len.to_le_bytes());
    out.extend_from_slice(&manifest);
    for layer in &trace.layers {
        for v in layer.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Checks magic and version and returns the declared manifest length.
pub fn decode_header(bytes: &[u8]) -> Result<usize, TraceError> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(TraceError::NotATraceFile);
    }
    if bytes[4] != FORMAT_VERSION {
        return Err(TraceError::UnsupportedVersion(bytes[4]));
    }
    Ok(u32::from_le_bytes([bytes[5], bytes[6], bytes[7], bytes[8]]) as usize)
}

fn split_manifest(bytes: &[u8]) -> Result<(TraceManifest, &[u8]), TraceError> {
    let declared = decode_header(bytes)?;
    let rest = &bytes[HEADER_LEN..];
    if declared > rest.len() {
        return Err(TraceError::TruncatedManifest {
            declared,
            available: rest.len(),
        });
    }
    let (manifest_bytes, payload) = rest.split_at(declared);
    let manifest: TraceManifest =
        serde_json::from_slice(manifest_bytes).map_err(|e| TraceError::InvalidManifest(e.to_string()))?;
    manifest.validate()?;
    Ok((manifest, payload))
}

/// Parses and validates only the manifest; `bytes` may stop right after it.
pub fn decode_manifest(bytes: &[u8]) -> Result<TraceManifest, TraceError> {
    split_manifest(bytes).map(|(m, _)| m)
}

pub fn decode_trace(bytes: &[u8]) -> Result<HiddenStateTrace, TraceError> {
    let (manifest, payload) = split_manifest(bytes)?;

    let expected = manifest.payload_len();
    if expected != Some(payload.len()) {
        return Err(TraceError::PayloadLengthMismatch {
            expected: expected.map_or_else(|| "an unrepresentable size".into(), |n| n.to_string()),
            actual: payload.len(),
        });
    }

    let layer_bytes = manifest.num_tokens * manifest.hidden_size * 4;
    let layers = payload
        .chunks_exact(layer_bytes)
        .map(|chunk| {
            let data = chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            Matrix::from_vec(manifest.num_tokens, manifest.hidden_size, data)
        })
        .collect::<Vec<_>>();
    for (i, layer) in layers.iter().enumerate() {
        check_finite(i, layer)?;
    }
    HiddenStateTrace::new(manifest, layers)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_token_trace() -> HiddenStateTrace {
        let manifest = TraceManifest {
            model_name: "tiny".into(),
            num_layers: 1,
            hidden_size: 4,
            stored_layers: 1,
            includes_embedding_layer: false,
            num_tokens: 1,
            tokens: vec![TokenRecord::span("hi", Segment::Question, 0, 2)],
            prediction: None,
            gold_answer_text: None,
            question_text: None,
            context_text: None,
            task: None,
            dtype: Dtype::F32Le,
        };
        let layer = Matrix::from_vec(1, 4, vec![1.0, 2.0, 3.0, 4.0]);
        HiddenStateTrace::new(manifest, vec![layer]).unwrap()
    }

    #[test]
    fn single_token_file_size() {
        let trace = one_token_trace();
        let json = serde_json::to_vec(&trace.manifest).unwrap();
        let bytes = encode_trace(&trace).unwrap();
        assert_eq!(bytes.len(), 4 + 1 + 4 + json.len() + 16);
        assert_eq!(&bytes[..4], b"VBTR");
        assert_eq!(bytes[4], 1);
        assert_eq!(&bytes[bytes.len() - 4..], &4.0f32.to_le_bytes());
        assert_eq!(decode_trace(&bytes).unwrap(), trace);
    }

    #[test]
    fn empty_token_list_rejected() {
        let mut trace = one_token_trace();
        trace.manifest.num_tokens = 0;
        trace.manifest.tokens.clear();
        trace.layers = vec![Matrix::from_vec(0, 4, vec![])];
        let err = encode_trace(&trace).unwrap_err();
        assert_eq!(err.to_string(), "empty token list");
    }

    #[test]
    fn truncated_payload() {
        let bytes = encode_trace(&one_token_trace()).unwrap();
        let err = decode_trace(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(err.to_string().starts_with("payload length mismatch"), "{err}");
    }

    #[test]
    fn nan_payload() {
        let mut bytes = encode_trace(&one_token_trace()).unwrap();
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        let err = decode_trace(&bytes).unwrap_err();
        assert!(err.to_string().starts_with("non-finite hidden state"), "{err}");
    }

    #[test]
    fn manifest_only_prefix() {
        let trace = one_token_trace();
        let bytes = encode_trace(&trace).unwrap();
        let n = decode_header(&bytes).unwrap();
        assert_eq!(decode_manifest(&bytes[..HEADER_LEN + n]).unwrap(), trace.manifest);
    }

    #[test]
    fn header_errors() {
        assert_eq!(decode_trace(b"").unwrap_err(), TraceError::NotATraceFile);
        assert_eq!(decode_trace(b"PK\x03\x04....").unwrap_err(), TraceError::NotATraceFile);
        let mut bytes = encode_trace(&one_token_trace()).unwrap();
        bytes[4] = 2;
        assert!(decode_trace(&bytes)
            .unwrap_err()
            .to_string()
            .starts_with("unsupported version"));
    }

    #[test]
    fn token_offset_invariants() {
        let mut m = one_token_trace().manifest;
        m.tokens[0].char_end = Some(0);
        assert!(matches!(m.validate(), Err(TraceError::Invariant(_))));
        m.tokens[0] = TokenRecord::special("[CLS]");
        m.tokens[0].char_start = Some(0);
        assert!(matches!(m.validate(), Err(TraceError::Invariant(_))));
    }

    #[test]
    fn token_limit() {
        let mut m = one_token_trace().manifest;
        m.tokens = (0..600)
            .map(|i| TokenRecord::span("a", Segment::Context, i, i + 1))
            .collect();
        m.num_tokens = 600;
        assert_eq!(m.validate(), Err(TraceError::TooManyTokens(600)));
    }

    #[test]
    fn prediction_span_checked() {
        let mut m = one_token_trace().manifest;
        m.prediction = Some(Prediction {
            answer_start_token: 0,
            answer_end_token: 1,
            answer_text: "hi".into(),
        });
        assert!(m.validate().is_err());
        m.prediction.as_mut().unwrap().answer_end_token = 0;
        assert!(m.validate().is_ok());
    }

    #[test]
    fn stored_layer_count_checked() {
        let mut m = one_token_trace().manifest;
        m.includes_embedding_layer = true;
        let err = m.validate().unwrap_err();
        assert!(err.to_string().contains("stored_layers"), "{err}");
    }
}
