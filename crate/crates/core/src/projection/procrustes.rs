use super::{centroid, Point, ProjectionError};

/// Best orthogonal 2x2 map between two centered point sets.
///
/// Points are treated as row vectors, so a point `p` maps to `p * matrix`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrthogonalFit {
    pub matrix: [[f64; 2]; 2],
    pub reflection: bool,
}

impl OrthogonalFit {
    pub fn apply(&self, p: Point) -> Point {
        let m = &self.matrix;
        [p[0] * m[0][0] + p[1] * m[1][0], p[0] * m[0][1] + p[1] * m[1][1]]
    }
}

/// Orthogonal Procrustes in closed form for 2D.
///
/// Maximizes `tr(R^T M)` with `M = A^T B` over rotations `[[c, -s], [s, c]]`
/// and reflections `[[c, s], [s, -c]]`; a rotation wins ties.
pub fn orthogonal_fit(a: &[Point], b: &[Point]) -> OrthogonalFit {
    let mut m = [[0.0; 2]; 2];
    for (p, q) in a.iter().zip(b) {
        for i in 0..2 {
            for j in 0..2 {
                m[i][j] += p[i] * q[j];
            }
        }
    }
    let rot_y = m[1][0] - m[0][1];
    let rot_x = m[0][0] + m[1][1];
    let ref_y = m[0][1] + m[1][0];
    let ref_x = m[0][0] - m[1][1];
    if ref_x.hypot(ref_y) > rot_x.hypot(rot_y) {
        let theta = ref_y.atan2(ref_x);
        let (s, c) = theta.sin_cos();
        OrthogonalFit {
            matrix: [[c, s], [s, -c]],
            reflection: true,
        }
    } else {
        let theta = rot_y.atan2(rot_x);
        let (s, c) = theta.sin_cos();
        OrthogonalFit {
            matrix: [[c, -s], [s, c]],
            reflection: false,
        }
    }
}

/// Rigidly moves `current` onto `previous`: both are centered, the best
/// rotation or reflection is applied, and the result is translated to the
/// centroid of `previous`. Pairwise distances within `current` are unchanged.
pub fn procrustes_align(current: &[Point], previous: &[Point]) -> Result<Vec<Point>, ProjectionError> {
    if current.len() != previous.len() {
        return Err(ProjectionError::TokenCountMismatch {
            current: current.len(),
            previous: previous.len(),
        });
    }
    if current.len() < 2 {
        return Err(ProjectionError::TooFewTokens(current.len()));
    }
    let mc = centroid(current.iter().copied()).unwrap_or_default();
    let mp = centroid(previous.iter().copied()).unwrap_or_default();
    let a: Vec<Point> = current.iter().map(|p| [p[0] - mc[0], p[1] - mc[1]]).collect();
    let b: Vec<Point> = previous.iter().map(|p| [p[0] - mp[0], p[1] - mp[1]]).collect();
    let fit = orthogonal_fit(&a, &b);
    Ok(a.into_iter()
        .map(|p| {
            let q = fit.apply(p);
            [q[0] + mp[0], q[1] + mp[1]]
        })
        .collect())
}
