//! Per-layer dimensionality reduction and the geometry helpers built on it.

mod kmeans;
mod pca;
mod procrustes;

pub use kmeans::{kmeans, kmeans_with, ClusterAssignment, KMeansConfig};
pub use pca::{pca_project, LayerProjection};
pub use procrustes::{orthogonal_fit, procrustes_align, OrthogonalFit};

use thiserror::Error;

use crate::linalg::NoConvergence;

/// A 2D coordinate.
pub type Point = [f64; 2];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProjectionError {
    #[error("too few tokens: need at least 2, got {0}")]
    TooFewTokens(usize),
    #[error("non-finite input at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("invalid k: {0}")]
    InvalidK(usize),
    #[error("k exceeds point count: k = {k}, n = {n}")]
    KExceedsPoints { k: usize, n: usize },
    #[error("token count mismatch: {current} vs {previous}")]
    TokenCountMismatch { current: usize, previous: usize },
    #[error(transparent)]
    Eigen(#[from] NoConvergence),
}

pub(crate) fn squared_distance(a: Point, b: Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

pub(crate) fn distance(a: Point, b: Point) -> f64 {
    squared_distance(a, b).sqrt()
}

pub(crate) fn centroid(points: impl IntoIterator<Item = Point>) -> Option<Point> {
    let mut n = 0usize;
    let mut sum = [0.0, 0.0];
    for p in points {
        sum[0] += p[0];
        sum[1] += p[1];
        n += 1;
    }
    (n > 0).then(|| [sum[0] / n as f64, sum[1] / n as f64])
}
