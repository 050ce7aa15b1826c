//! Dense row-major matrices and a symmetric eigensolver.

use thiserror::Error;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Copy> Matrix<T> {
    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data does not match shape");
        Self { rows, cols, data }
    }

    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    /// New matrix holding the listed rows, in order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("eigen solver did not converge within {0} iterations")]
pub struct NoConvergence(pub usize);

/// Eigen-decomposition of a real symmetric matrix.
///
/// `values` are sorted in descending order; `vectors.row(k)` is the unit
/// eigenvector for `values[k]`.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix<f64>,
}

/// QL sweeps allowed per eigenvalue before giving up.
pub const MAX_QL_ITERATIONS: usize = 1000;

impl SymmetricEigen {
    /// Householder tridiagonalization followed by implicit QL.
    ///
    /// Only the lower triangle of `a` is read.
    pub fn new(a: &Matrix<f64>) -> Result<Self, NoConvergence> {
        assert_eq!(a.rows(), a.cols(), "eigen decomposition needs a square matrix");
        let n = a.rows();
        if n == 0 {
            return Ok(Self {
                values: vec![],
                vectors: Matrix::from_vec(0, 0, vec![]),
            });
        }
        let mut v = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                v[i * n + j] = a.get(i, j);
                v[j * n + i] = a.get(i, j);
            }
        }
        let mut d = vec![0.0; n];
        let mut e = vec![0.0; n];
        tridiagonalize(n, &mut v, &mut d, &mut e);
        ql_implicit(n, &mut v, &mut d, &mut e)?;

        // columns of v are eigenvectors; emit them as rows, largest value first
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&x, &y| d[y].total_cmp(&d[x]));
        let values = order.iter().map(|&k| d[k]).collect();
        let mut vectors = Vec::with_capacity(n * n);
        for &k in &order {
            vectors.extend((0..n).map(|row| v[row * n + k]));
        }
        Ok(Self {
            values,
            vectors: Matrix::from_vec(n, n, vectors),
        })
    }
}

fn tridiagonalize(n: usize, v: &mut [f64], d: &mut [f64], e: &mut [f64]) {
    let at = |i: usize, j: usize| i * n + j;
    for j in 0..n {
        d[j] = v[at(n - 1, j)];
    }
    for i in (1..n).rev() {
        let scale: f64 = d[..i].iter().map(|x| x.abs()).sum();
        let mut h = 0.0;
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[at(i - 1, j)];
                v[at(i, j)] = 0.0;
                v[at(j, i)] = 0.0;
            }
        } else {
            for dk in d[..i].iter_mut() {
                *dk /= scale;
                h += *dk * *dk;
            }
            let f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            e[..i].fill(0.0);

            for j in 0..i {
                let f = d[j];
                v[at(j, i)] = f;
                let mut g = e[j] + v[at(j, j)] * f;
                for k in j + 1..i {
                    g += v[at(k, j)] * d[k];
                    e[k] += v[at(k, j)] * f;
                }
                e[j] = g;
            }
            let mut f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                let f = d[j];
                let g = e[j];
                for k in j..i {
                    v[at(k, j)] -= f * e[k] + g * d[k];
                }
                d[j] = v[at(i - 1, j)];
                v[at(i, j)] = 0.0;
            }
        }
        d[i] = h;
    }

    // accumulate transformations
    for i in 0..n - 1 {
        v[at(n - 1, i)] = v[at(i, i)];
        v[at(i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[at(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[at(k, i + 1)] * v[at(k, j)];
                }
                for k in 0..=i {
                    v[at(k, j)] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[at(k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[at(n - 1, j)];
        v[at(n - 1, j)] = 0.0;
    }
    v[at(n - 1, n - 1)] = 1.0;
    e[0] = 0.0;
}

fn ql_implicit(n: usize, v: &mut [f64], d: &mut [f64], e: &mut [f64]) -> Result<(), NoConvergence> {
    let at = |i: usize, j: usize| i * n + j;
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    let eps = f64::EPSILON;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 && e[m].abs() > eps * tst1 {
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > MAX_QL_ITERATIONS {
                    return Err(NoConvergence(MAX_QL_ITERATIONS));
                }
                let g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d[l + 2..n].iter_mut() {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for k in 0..n {
                        let h = v[at(k, i + 1)];
                        v[at(k, i + 1)] = s * v[at(k, i)] + c * h;
                        v[at(k, i)] = c * v[at(k, i)] - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_decomposition(a: &Matrix<f64>) {
        let eig = SymmetricEigen::new(a).unwrap();
        let n = a.rows();
        for k in 0..n {
            let vk = eig.vectors.row(k);
            let norm: f64 = vk.iter().map(|x| x * x).sum();
            assert!((norm - 1.0).abs() < 1e-10);
            for i in 0..n {
                let av: f64 = (0..n).map(|j| a.get(i, j) * vk[j]).sum();
                assert!((av - eig.values[k] * vk[i]).abs() < 1e-9, "A v != lambda v");
            }
        }
        assert!(eig.values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn diagonal() {
        let a = Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 3.0, 0.0], [0.0, 0.0, 2.0]]);
        let eig = SymmetricEigen::new(&a).unwrap();
        assert_eq!(eig.values, vec![3.0, 2.0, 1.0]);
        check_decomposition(&a);
    }

    #[test]
    fn two_by_two() {
        // eigenvalues 3 and 1
        let a = Matrix::from_rows(&[[2.0, 1.0], [1.0, 2.0]]);
        let eig = SymmetricEigen::new(&a).unwrap();
        assert!((eig.values[0] - 3.0).abs() < 1e-14);
        assert!((eig.values[1] - 1.0).abs() < 1e-14);
        check_decomposition(&a);
    }

    #[test]
    fn one_by_one_and_empty() {
        let eig = SymmetricEigen::new(&Matrix::from_rows(&[[5.0]])).unwrap();
        assert_eq!(eig.values, vec![5.0]);
        assert!(SymmetricEigen::new(&Matrix::from_vec(0, 0, vec![]))
            .unwrap()
            .values
            .is_empty());
    }

    #[test]
    fn dense_symmetric() {
        let n = 9;
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let x = ((i * 7 + j * 13) % 11) as f64 - 5.0 + if i == j { 0.5 } else { 0.0 };
                data[i * n + j] = x;
                data[j * n + i] = x;
            }
        }
        check_decomposition(&Matrix::from_vec(n, n, data));
    }

    #[test]
    fn repeated_eigenvalues() {
        let a = Matrix::from_rows(&[
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ]);
        check_decomposition(&a);
        check_decomposition(&Matrix::from_vec(3, 3, vec![0.0; 9]));
    }
}
