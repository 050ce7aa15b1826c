//! Core of the hidden-state workbench: the `.vbtr` trace container, per-layer
//! PCA projection, token categorization and layer-wise trajectory metrics.

pub mod analysis;
pub mod annotate;
pub mod linalg;
pub mod phases;
pub mod projection;
pub mod synth;
pub mod trace;

pub use analysis::{AnalysisError, LayerView, TraceAnalysis, ViewToken};
pub use annotate::{assign_categories, find_supporting_sentence, Category, CategoryAssignment, CharSpan};
pub use linalg::Matrix;
pub use phases::{phase_name, phase_of_layer, LayerMetrics, MetricsConfig};
pub use projection::{kmeans, pca_project, procrustes_align, ClusterAssignment, LayerProjection, Point};
pub use trace::{
    decode_trace, encode_trace, HiddenStateTrace, Prediction, Segment, TokenRecord, TraceError, TraceManifest,
};
