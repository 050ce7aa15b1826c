//! In-memory trace sessions with single-flight projection caches.

use std::collections::HashMap;
use std::hash::Hash;
use std::path::Path;
use std::sync::{Arc, Mutex, OnceLock, RwLock};

use vistrace_core::analysis::AnalysisError;
use vistrace_core::phases::LayerMetrics;
use vistrace_core::projection::LayerProjection;
use vistrace_core::{procrustes_align, CharSpan, MetricsConfig, TraceAnalysis};

/// Map of lazily computed values; concurrent requests for one key compute it once.
pub struct OnceMap<K, V> {
    cells: Mutex<HashMap<K, Arc<OnceLock<V>>>>,
}

impl<K: Eq + Hash + Clone, V: Clone> OnceMap<K, V> {
    pub fn new() -> Self {
        Self {
            cells: Mutex::new(HashMap::new()),
        }
    }

    pub fn get_or_init(&self, key: &K, init: impl FnOnce() -> V) -> V {
        let cell = {
            let mut cells = self.cells.lock().expect("cache lock poisoned");
            cells.entry(key.clone()).or_default().clone()
        };
        cell.get_or_init(init).clone()
    }

    pub fn len(&self) -> usize {
        self.cells.lock().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<K: Eq + Hash + Clone, V: Clone> Default for OnceMap<K, V> {
    fn default() -> Self {
        Self::new()
    }
}

type Projected = Result<Arc<LayerProjection>, AnalysisError>;
type ViewBytes = Result<Arc<Vec<u8>>, AnalysisError>;

/// One loaded trace and everything derived from it so far.
pub struct Session {
    analysis: TraceAnalysis,
    metrics: MetricsConfig,
    raw: OnceMap<(usize, bool), Projected>,
    aligned: OnceMap<(usize, bool), Projected>,
    views: OnceMap<(usize, bool, bool), ViewBytes>,
    series: OnceLock<Result<Arc<Vec<LayerMetrics>>, AnalysisError>>,
}

impl Session {
    pub fn new(analysis: TraceAnalysis, metrics: MetricsConfig) -> Self {
        Self {
            analysis,
            metrics,
            raw: OnceMap::new(),
            aligned: OnceMap::new(),
            views: OnceMap::new(),
            series: OnceLock::new(),
        }
    }

    pub fn analysis(&self) -> &TraceAnalysis {
        &self.analysis
    }

    pub fn raw_projection(&self, layer: usize, include_special: bool) -> Projected {
        self.raw.get_or_init(&(layer, include_special), || {
            self.analysis.project_layer(layer, include_special).map(Arc::new)
        })
    }

    /// Layer `layer` rigidly aligned to the aligned layer before it; layer 0 is left as is.
    pub fn aligned_projection(&self, layer: usize, include_special: bool) -> Projected {
        let mut previous = self.raw_projection(0, include_special)?;
        for k in 1..=layer {
            let prev = previous.clone();
            previous = self.aligned.get_or_init(&(k, include_special), || {
                let mut current = (*self.raw_projection(k, include_special)?).clone();
                current.points = procrustes_align(&current.points, &prev.points)?;
                Ok(Arc::new(current))
            })?;
        }
        Ok(previous)
    }

    /// Serialized layer view, cached so repeated requests return identical bytes.
    pub fn layer_view_json(&self, trace_id: &str, layer: usize, align: bool, include_special: bool) -> ViewBytes {
        self.views.get_or_init(&(layer, align, include_special), || {
            let raw = self.raw_projection(layer, include_special)?;
            let shown = if align {
                self.aligned_projection(layer, include_special)?
            } else {
                raw.clone()
            };
            let view = self
                .analysis
                .layer_view(&raw, &shown, align, include_special, &self.metrics)?;
            let payload = crate::api::LayerViewPayload {
                trace_id: trace_id.to_string(),
                view,
            };
            Ok(Arc::new(serde_json::to_vec(&payload).expect("layer view serializes")))
        })
    }

    pub fn metric_series(&self) -> Result<Arc<Vec<LayerMetrics>>, AnalysisError> {
        self.series
            .get_or_init(|| {
                (0..self.analysis.stored_layers())
                    .map(|layer| {
                        let raw = self.raw_projection(layer, true)?;
                        self.analysis.metrics_for(&raw, true, &self.metrics)
                    })
                    .collect::<Result<Vec<_>, _>>()
                    .map(Arc::new)
            })
            .clone()
    }
}

impl<K: Eq + Hash + Clone, V: Clone> OnceMap<K, V> {
    pub fn get_if_ready(&self, key: &K) -> Option<V> {
        let cell = self.cells.lock().expect("cache lock poisoned").get(key).cloned()?;
        cell.get().cloned()
    }
}

/// Traces held by the service, keyed by id.
#[derive(Default)]
pub struct TraceStore {
    sessions: RwLock<HashMap<String, Arc<Session>>>,
}

impl TraceStore {
    pub fn get(&self, id: &str) -> Option<Arc<Session>> {
        self.sessions.read().expect("store lock poisoned").get(id).cloned()
    }

    /// Inserts unless the id is already taken; returns the stored session.
    pub fn insert(&self, id: String, session: Session) -> Arc<Session> {
        let mut sessions = self.sessions.write().expect("store lock poisoned");
        sessions.entry(id).or_insert_with(|| Arc::new(session)).clone()
    }

    pub fn len(&self) -> usize {
        self.sessions.read().expect("store lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Optional `<id>.support.json` next to a fixture: `{"start": .., "end": ..}`
/// char span of the supporting fact in the context text.
pub fn read_support_sidecar(fixture: &Path) -> Option<CharSpan> {
    #[derive(serde::Deserialize)]
    struct Sidecar {
        start: usize,
        end: usize,
    }
    let path = fixture.with_extension("support.json");
    let text = std::fs::read_to_string(path).ok()?;
    let s: Sidecar = serde_json::from_str(&text).ok()?;
    (s.start < s.end).then_some((s.start, s.end))
}
