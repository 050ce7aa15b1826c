//! Ties a decoded trace to its categories and produces per-layer views and
//! metric series.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotate::{assign_categories, find_supporting_sentence, Category, CategoryAssignment, CharSpan};
use crate::phases::{compute_layer_metrics, phase_name, LayerMetrics, MetricsConfig, MetricsError};
use crate::projection::{pca_project, procrustes_align, LayerProjection, ProjectionError};
use crate::trace::{HiddenStateTrace, Segment};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("layer index out of range: {layer} not in 0..{stored_layers}")]
    LayerOutOfRange { layer: usize, stored_layers: usize },
    #[error("too few tokens to project: {0}")]
    TooFewTokens(usize),
    #[error(transparent)]
    Projection(#[from] ProjectionError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// A trace together with its token categories.
#[derive(Debug, Clone)]
pub struct TraceAnalysis {
    trace: HiddenStateTrace,
    categories: CategoryAssignment,
}

impl TraceAnalysis {
    /// Uses `supporting_span` when given, otherwise the sentence of the
    /// context containing the manifest's gold answer (if both are present).
    pub fn new(trace: HiddenStateTrace, supporting_span: Option<CharSpan>) -> Self {
        let span = supporting_span.or_else(|| {
            let m = &trace.manifest;
            find_supporting_sentence(m.context_text.as_deref()?, m.gold_answer_text.as_deref()?)
        });
        let categories = assign_categories(&trace.manifest, span);
        Self { trace, categories }
    }

    pub fn trace(&self) -> &HiddenStateTrace {
        &self.trace
    }

    pub fn categories(&self) -> &CategoryAssignment {
        &self.categories
    }

    pub fn stored_layers(&self) -> usize {
        self.trace.manifest.stored_layers
    }

    /// Tokens taking part in the projection.
    pub fn token_indices(&self, include_special: bool) -> Vec<usize> {
        self.trace
            .manifest
            .tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| include_special || t.segment != Segment::Special)
            .map(|(i, _)| i)
            .collect()
    }

    fn check_layer(&self, layer: usize) -> Result<(), AnalysisError> {
        if layer >= self.stored_layers() {
            return Err(AnalysisError::LayerOutOfRange {
                layer,
                stored_layers: self.stored_layers(),
            });
        }
        Ok(())
    }

    /// Unaligned PCA projection of one stored layer.
    pub fn project_layer(&self, layer: usize, include_special: bool) -> Result<LayerProjection, AnalysisError> {
        self.check_layer(layer)?;
        let hidden = &self.trace.layers[layer];
        let projection = if include_special {
            pca_project(hidden)
        } else {
            let rows = self.token_indices(false);
            if rows.len() < 2 {
                return Err(AnalysisError::TooFewTokens(rows.len()));
            }
            pca_project(&hidden.select_rows(&rows))
        };
        Ok(projection?.at_layer(layer))
    }

    pub fn project_all(&self, include_special: bool) -> Result<Vec<LayerProjection>, AnalysisError> {
        (0..self.stored_layers())
            .into_par_iter()
            .map(|layer| self.project_layer(layer, include_special))
            .collect()
    }

    /// Rigidly aligns each layer to the already-aligned layer before it.
    pub fn align_chain(projections: &mut [LayerProjection]) -> Result<(), AnalysisError> {
        for k in 1..projections.len() {
            let (done, rest) = projections.split_at_mut(k);
            let current = &mut rest[0];
            current.points = procrustes_align(&current.points, &done[k - 1].points)?;
        }
        Ok(())
    }

    pub fn metrics_for(
        &self,
        projection: &LayerProjection,
        include_special: bool,
        config: &MetricsConfig,
    ) -> Result<LayerMetrics, AnalysisError> {
        let m = &self.trace.manifest;
        let categories = if include_special {
            self.categories.clone()
        } else {
            self.categories.select(&self.token_indices(false))
        };
        let block = m.block_of(projection.layer_index);
        Ok(compute_layer_metrics(
            projection,
            &categories,
            block,
            m.num_layers,
            config,
        )?)
    }

    /// One entry per stored layer, ordered by layer.
    pub fn metric_series(
        &self,
        include_special: bool,
        config: &MetricsConfig,
    ) -> Result<Vec<LayerMetrics>, AnalysisError> {
        (0..self.stored_layers())
            .into_par_iter()
            .map(|layer| {
                let projection = self.project_layer(layer, include_special)?;
                self.metrics_for(&projection, include_special, config)
            })
            .collect()
    }

    /// Assembles the payload for one layer. `shown` holds the coordinates to
    /// display (aligned or not); metrics come from `raw`.
    pub fn layer_view(
        &self,
        raw: &LayerProjection,
        shown: &LayerProjection,
        aligned: bool,
        include_special: bool,
        config: &MetricsConfig,
    ) -> Result<LayerView, AnalysisError> {
        let m = &self.trace.manifest;
        let metrics = self.metrics_for(raw, include_special, config)?;
        let tokens = self
            .token_indices(include_special)
            .into_iter()
            .zip(&shown.points)
            .map(|(index, p)| ViewToken {
                index,
                text: m.tokens[index].text.clone(),
                x: p[0],
                y: p[1],
                category: self.categories.categories[index],
            })
            .collect();
        Ok(LayerView {
            layer: raw.layer_index,
            block: metrics.block,
            stored_layers: m.stored_layers,
            phase: metrics.phase,
            phase_name: phase_name(metrics.phase).to_string(),
            aligned,
            include_special,
            answer_text: m.prediction.as_ref().map(|p| p.answer_text.clone()),
            explained_variance: raw.explained_variance,
            total_variance: raw.total_variance,
            tokens,
            metrics,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewToken {
    pub index: usize,
    pub text: String,
    pub x: f64,
    pub y: f64,
    pub category: Category,
}

/// Everything needed to draw one layer of the scatter view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerView {
    pub layer: usize,
    pub block: usize,
    pub stored_layers: usize,
    pub phase: u8,
    pub phase_name: String,
    pub aligned: bool,
    pub include_special: bool,
    pub answer_text: Option<String>,
    pub explained_variance: [f64; 2],
    pub total_variance: f64,
    pub tokens: Vec<ViewToken>,
    pub metrics: LayerMetrics,
}
