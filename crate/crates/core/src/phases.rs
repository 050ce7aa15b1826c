//! Inference-phase estimate and per-layer trajectory metrics.
//!
//! All metrics are computed on the 2D projected points. Distances are divided
//! by the RMS spread of the layer so values are comparable across layers even
//! though every layer gets its own PCA fit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotate::{Category, CategoryAssignment};
use crate::projection::{centroid, distance, kmeans_with, KMeansConfig, LayerProjection, Point, ProjectionError};

pub const PHASE_NAMES: [&str; 4] = [
    "Topical Clustering",
    "Connecting Entities with Mentions and Attributes",
    "Matching Questions with Supporting Facts",
    "Answer Extraction",
];

pub fn phase_name(phase: u8) -> &'static str {
    PHASE_NAMES[usize::from(phase.clamp(1, 4)) - 1]
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("layer index out of range: {layer} not in 0..={num_layers}")]
    LayerOutOfRange { layer: usize, num_layers: usize },
    #[error("token count mismatch: {points} points but {categories} categories")]
    TokenCountMismatch { points: usize, categories: usize },
    #[error(transparent)]
    Projection(#[from] ProjectionError),
}

/// Equal-quartile phase estimate: `ceil(4 * layer / num_layers)` clamped to 1..=4.
/// Layer 0 is the embedding output and belongs to phase 1.
pub fn phase_of_layer(layer: usize, num_layers: usize) -> Result<u8, MetricsError> {
    if num_layers == 0 || layer > num_layers {
        return Err(MetricsError::LayerOutOfRange { layer, num_layers });
    }
    let phase = (4 * layer).div_ceil(num_layers).clamp(1, 4);
    Ok(phase as u8)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerMetrics {
    /// Stored layer index within the trace.
    pub layer_index: usize,
    /// Encoder block number (0 = embedding output).
    pub block: usize,
    pub phase: u8,
    pub question_fact_distance: Option<f64>,
    pub answer_separation: Option<f64>,
    /// Mean silhouette of a k-means partition of the points.
    pub cluster_distinctness: Option<f64>,
}

/// Root-mean-square distance of the points from their centroid.
pub fn rms_spread(points: &[Point]) -> f64 {
    let Some(c) = centroid(points.iter().copied()) else {
        return 0.0;
    };
    let sum: f64 = points
        .iter()
        .map(|&p| {
            let d = distance(p, c);
            d * d
        })
        .sum();
    (sum / points.len() as f64).sqrt()
}

fn check_len(points: &[Point], categories: &CategoryAssignment) -> Result<(), MetricsError> {
    if points.len() != categories.len() {
        return Err(MetricsError::TokenCountMismatch {
            points: points.len(),
            categories: categories.len(),
        });
    }
    Ok(())
}

fn members(points: &[Point], categories: &CategoryAssignment, pred: impl Fn(Category) -> bool) -> Vec<Point> {
    points
        .iter()
        .zip(&categories.categories)
        .filter(|(_, &c)| pred(c))
        .map(|(&p, _)| p)
        .collect()
}

/// Mean question-to-fact pair distance over the RMS spread. Answer tokens
/// count as fact tokens. `None` when either group is empty.
pub fn question_fact_distance(points: &[Point], categories: &CategoryAssignment) -> Result<Option<f64>, MetricsError> {
    check_len(points, categories)?;
    let question = members(points, categories, |c| c == Category::Question);
    let fact = members(points, categories, |c| {
        matches!(c, Category::SupportingFact | Category::Answer)
    });
    if question.is_empty() || fact.is_empty() {
        return Ok(None);
    }
    let spread = rms_spread(points);
    if spread == 0.0 {
        return Ok(Some(0.0));
    }
    let total: f64 = question
        .iter()
        .flat_map(|&q| fact.iter().map(move |&f| distance(q, f)))
        .sum();
    let mean = total / (question.len() * fact.len()) as f64;
    Ok(Some(mean / spread))
}

/// Distance between the answer centroid and the non-answer centroid over
/// the RMS spread. `None` without answer tokens or without other tokens.
pub fn answer_separation(points: &[Point], categories: &CategoryAssignment) -> Result<Option<f64>, MetricsError> {
    check_len(points, categories)?;
    let answer = centroid(members(points, categories, |c| c == Category::Answer));
    let rest = centroid(members(points, categories, |c| c != Category::Answer));
    let (Some(answer), Some(rest)) = (answer, rest) else {
        return Ok(None);
    };
    let spread = rms_spread(points);
    if spread == 0.0 {
        return Ok(Some(0.0));
    }
    Ok(Some(distance(answer, rest) / spread))
}

/// Mean silhouette coefficient. Points in singleton clusters score 0.
/// `None` when fewer than two clusters are populated.
pub fn mean_silhouette(points: &[Point], labels: &[usize]) -> Option<f64> {
    let k = labels.iter().max().map_or(0, |&m| m + 1);
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return None;
    }
    let mut total = 0.0;
    for (i, &p) in points.iter().enumerate() {
        let own = labels[i];
        if sizes[own] <= 1 {
            continue;
        }
        let mut sums = vec![0.0; k];
        for (j, &q) in points.iter().enumerate() {
            if i != j {
                sums[labels[j]] += distance(p, q);
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Some(total / points.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsConfig {
    /// Clusters used for the distinctness score; mirrors the four categories.
    pub k: usize,
    pub seed: u64,
    pub kmeans: KMeansConfig,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            k: 4,
            seed: 7,
            kmeans: KMeansConfig::default(),
        }
    }
}

/// k-means silhouette of the layer, `None` for fewer than `k` points or a
/// collapsed layer.
pub fn cluster_distinctness(points: &[Point], config: &MetricsConfig) -> Result<Option<f64>, MetricsError> {
    if points.len() < config.k.max(2) || rms_spread(points) == 0.0 {
        return Ok(None);
    }
    let fit = kmeans_with(points, config.k, config.seed, &config.kmeans)?;
    Ok(mean_silhouette(points, &fit.labels))
}

pub fn compute_layer_metrics(
    projection: &LayerProjection,
    categories: &CategoryAssignment,
    block: usize,
    num_layers: usize,
    config: &MetricsConfig,
) -> Result<LayerMetrics, MetricsError> {
    let points = &projection.points;
    Ok(LayerMetrics {
        layer_index: projection.layer_index,
        block,
        phase: phase_of_layer(block, num_layers)?,
        question_fact_distance: question_fact_distance(points, categories)?,
        answer_separation: answer_separation(points, categories)?,
        cluster_distinctness: cluster_distinctness(points, config)?,
    })
}
