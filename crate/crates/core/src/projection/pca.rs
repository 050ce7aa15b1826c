use crate::linalg::{Matrix, SymmetricEigen};

use super::{Point, ProjectionError};

/// Components whose eigenvalue is below this fraction of the total are treated as zero.
const NEGLIGIBLE_VARIANCE: f64 = 1e-12;

/// 2D PCA coordinates of every token at one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerProjection {
    pub layer_index: usize,
    pub points: Vec<Point>,
    /// Variance captured by the first and second component (covariance eigenvalues).
    pub explained_variance: [f64; 2],
    /// Trace of the covariance matrix.
    pub total_variance: f64,
    /// Unit principal directions in hidden space. A direction is all zeros
    /// when its component carries no variance.
    pub components: [Vec<f64>; 2],
}

impl LayerProjection {
    pub fn at_layer(mut self, layer_index: usize) -> Self {
        self.layer_index = layer_index;
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Projects the rows of `hidden` onto their top two principal directions.
///
/// The covariance uses the unbiased `1 / (n - 1)` normalization. Because
/// `n <= 512` is far below typical hidden sizes, the spectrum is taken from
/// the `n x n` Gram matrix of the centered rows rather than the `d x d`
/// covariance. Each direction is flipped so its largest-magnitude coefficient
/// is positive.
pub fn pca_project<T>(hidden: &Matrix<T>) -> Result<LayerProjection, ProjectionError>
where
    T: Copy + Into<f64>,
{
    let n = hidden.rows();
    let d = hidden.cols();
    if n < 2 {
        return Err(ProjectionError::TooFewTokens(n));
    }

    let mut means = vec![0.0f64; d];
    for i in 0..n {
        for (j, &v) in hidden.row(i).iter().enumerate() {
            let v: f64 = v.into();
            if !v.is_finite() {
                return Err(ProjectionError::NonFinite { row: i, col: j });
            }
            means[j] += v;
        }
    }
    for m in &mut means {
        *m /= n as f64;
    }
    let centered: Vec<f64> = (0..n)
        .flat_map(|i| hidden.row(i).iter().zip(&means).map(|(&v, m)| v.into() - m))
        .collect();
    let row = |i: usize| &centered[i * d..(i + 1) * d];

    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let dot: f64 = row(i).iter().zip(row(j)).map(|(a, b)| a * b).sum();
            gram[i * n + j] = dot;
            gram[j * n + i] = dot;
        }
    }
    let trace: f64 = (0..n).map(|i| gram[i * n + i]).sum();
    let dof = (n - 1) as f64;
    let total_variance = trace / dof;

    let mut projection = LayerProjection {
        layer_index: 0,
        points: vec![[0.0, 0.0]; n],
        explained_variance: [0.0, 0.0],
        total_variance,
        components: [vec![0.0; d], vec![0.0; d]],
    };
    if trace <= 0.0 {
        return Ok(projection);
    }

    let eig = SymmetricEigen::new(&Matrix::from_vec(n, n, gram))?;
    for axis in 0..2.min(n) {
        let lambda = eig.values[axis];
        if lambda <= NEGLIGIBLE_VARIANCE * trace {
            continue;
        }
        let u = eig.vectors.row(axis);
        let mut direction = vec![0.0; d];
        for (i, &ui) in u.iter().enumerate() {
            for (dj, &x) in direction.iter_mut().zip(row(i)) {
                *dj += ui * x;
            }
        }
        let norm = direction.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let pivot = direction
            .iter()
            .enumerate()
            .fold(0, |best, (j, v)| if v.abs() > direction[best].abs() { j } else { best });
        let sign = if direction[pivot] < 0.0 { -1.0 } else { 1.0 };
        for dj in &mut direction {
            *dj *= sign / norm;
        }
        for (i, p) in projection.points.iter_mut().enumerate() {
            p[axis] = row(i).iter().zip(&direction).map(|(a, b)| a * b).sum();
        }
        projection.explained_variance[axis] = lambda / dof;
        projection.components[axis] = direction;
    }
    Ok(projection)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn variance(values: impl Iterator<Item = f64> + Clone) -> f64 {
        let n = values.clone().count() as f64;
        let mean = values.clone().sum::<f64>() / n;
        values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    }

    /// Eigenvalues of a symmetric 3x3 matrix from its characteristic polynomial
    /// (trigonometric solution of the depressed cubic), descending.
    fn cubic_eigenvalues(a: [[f64; 3]; 3]) -> [f64; 3] {
        let p1 = a[0][1].powi(2) + a[0][2].powi(2) + a[1][2].powi(2);
        let q = (a[0][0] + a[1][1] + a[2][2]) / 3.0;
        let p2 = (a[0][0] - q).powi(2) + (a[1][1] - q).powi(2) + (a[2][2] - q).powi(2) + 2.0 * p1;
        let p = (p2 / 6.0).sqrt();
        let mut b = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                b[i][j] = (a[i][j] - if i == j { q } else { 0.0 }) / p;
            }
        }
        let det = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1]) - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
            + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
        let phi = (det / 2.0).clamp(-1.0, 1.0).acos() / 3.0;
        let e1 = q + 2.0 * p * phi.cos();
        let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
        [e1, 3.0 * q - e1 - e3, e3]
    }

    #[test]
    fn planar_points_match_characteristic_polynomial() {
        let rows = [[0.0, 0.0, 0.0], [4.0, 1.0, 0.0], [1.0, 3.0, 0.0], [-2.0, 5.0, 0.0]];
        let hidden = Matrix::from_rows(&rows);

        // oracle: covariance of the raw rows, eigenvalues via the cubic
        let mut mean = [0.0; 3];
        for r in &rows {
            for j in 0..3 {
                mean[j] += r[j] / 4.0;
            }
        }
        let mut cov = [[0.0; 3]; 3];
        for r in &rows {
            for i in 0..3 {
                for j in 0..3 {
                    cov[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]) / 3.0;
                }
            }
        }
        let expected = cubic_eigenvalues(cov);

        let proj = pca_project(&hidden).unwrap();
        assert!((proj.explained_variance[0] - expected[0]).abs() < 1e-9);
        assert!((proj.explained_variance[1] - expected[1]).abs() < 1e-9);
        assert!(expected[2].abs() < 1e-9);
        let explained = proj.explained_variance[0] + proj.explained_variance[1];
        assert!((explained - proj.total_variance).abs() < 1e-9);

        // in-plane coordinates are reproduced up to rotation/sign: pairwise distances agree
        for i in 0..4 {
            for j in 0..4 {
                let orig = ((rows[i][0] - rows[j][0]).powi(2) + (rows[i][1] - rows[j][1]).powi(2)).sqrt();
                let got = super::super::distance(proj.points[i], proj.points[j]);
                assert!((orig - got).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rank_one_input() {
        let mut rows = vec![vec![0.0f32; 768]; 3];
        rows[1][0] = 1.0;
        rows[2][0] = 2.0;
        let proj = pca_project(&Matrix::from_rows(&rows)).unwrap();
        assert_eq!(proj.points.len(), 3);
        assert!(proj.points.iter().all(|p| p[1].abs() < 1e-9));
        assert_eq!(proj.explained_variance[1], 0.0);
        assert!((proj.explained_variance[0] - 1.0).abs() < 1e-12);
        // direction (1, 0, ...) with positive pivot
        assert!((proj.components[0][0] - 1.0).abs() < 1e-12);
        assert!((proj.points[0][0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_rows_give_zero_projection() {
        let hidden = Matrix::from_rows(&[[1.5f32, -2.0, 3.0]; 5]);
        let proj = pca_project(&hidden).unwrap();
        assert_eq!(proj.points, vec![[0.0, 0.0]; 5]);
        assert_eq!(proj.explained_variance, [0.0, 0.0]);
        assert_eq!(proj.total_variance, 0.0);
    }

    #[test]
    fn too_few_tokens() {
        let hidden = Matrix::from_rows(&[[1.0f64, 2.0]]);
        assert_eq!(pca_project(&hidden), Err(ProjectionError::TooFewTokens(1)));
    }

    #[test]
    fn bert_base_width() {
        let rows: Vec<Vec<f32>> = (0..7)
            .map(|i| (0..768).map(|j| ((i * 31 + j * 17) % 23) as f32 * 0.1).collect())
            .collect();
        let proj = pca_project(&Matrix::from_rows(&rows)).unwrap();
        assert_eq!(proj.points.len(), 7);
        assert_eq!(proj.components[0].len(), 768);
        let xs = proj.points.iter().map(|p| p[0]);
        let ys = proj.points.iter().map(|p| p[1]);
        assert!((variance(xs.clone()) - proj.explained_variance[0]).abs() < 1e-9);
        assert!(variance(xs) >= variance(ys));
    }
}
