//! Small dense linear-algebra kernels used by the feature pipeline and the
//! detectors. Everything is row-major `f64`.

use crate::error::{invalid, CrmError, Result};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(CrmError::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(CrmError::DimensionMismatch {
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Mat {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Mat {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// Columns selected by index, in the given order.
    pub fn select_cols(&self, idx: &[usize]) -> Mat {
        let mut data = Vec::with_capacity(idx.len() * self.rows);
        for r in self.iter_rows() {
            data.extend(idx.iter().map(|&j| r[j]));
        }
        Mat {
            rows: self.rows,
            cols: idx.len(),
            data,
        }
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.cols];
        for r in self.iter_rows() {
            for (a, b) in m.iter_mut().zip(r) {
                *a += b;
            }
        }
        let n = self.rows.max(1) as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// Copy with `means` subtracted from every row.
    pub fn centered_by(&self, means: &[f64]) -> Mat {
        let mut out = self.clone();
        for i in 0..out.rows {
            for (v, m) in out.row_mut(i).iter_mut().zip(means) {
                *v -= m;
            }
        }
        out
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Unit-normalizes `v` in place; returns the original norm.
pub fn normalize(v: &mut [f64]) -> f64 {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Flips `v` so that its coordinate of largest magnitude is positive.
/// Ties go to the lowest index.
pub fn canonical_sign(v: &mut [f64]) {
    let mut best = 0usize;
    let mut best_abs = f64::NEG_INFINITY;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > best_abs {
            best_abs = x.abs();
            best = i;
        }
    }
    if v.get(best).is_some_and(|x| *x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Eigen-decomposition of a symmetric `n x n` matrix by cyclic Jacobi
/// rotations. Returns eigenvalues in descending order and the matching
/// eigenvectors as rows.
pub fn symmetric_eigen(a: &Mat) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = a.rows();
    if a.cols() != n {
        return Err(CrmError::DimensionMismatch {
            expected: n,
            got: a.cols(),
        });
    }
    let mut m = a.data.clone();
    // v holds eigenvectors as columns
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let total: f64 = m.iter().map(|x| x * x).sum();
    if total == 0.0 {
        let vecs = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        return Ok((vec![0.0; n], vecs));
    }

    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[p * n + q] * m[p * n + q];
            }
        }
        if off <= total * 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].total_cmp(&m[i * n + i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let vectors = order
        .iter()
        .map(|&i| (0..n).map(|k| v[k * n + i]).collect())
        .collect();
    Ok((values, vectors))
}

/// Principal axes of a sample matrix (rows are observations).
#[derive(Debug, Clone)]
pub struct PrincipalAxes {
    /// Unit-norm, sign-canonical axes in decreasing variance order.
    pub axes: Vec<Vec<f64>>,
    /// Population variance along each axis.
    pub variances: Vec<f64>,
    /// Sum of per-coordinate population variances.
    pub total_variance: f64,
    /// Numerical rank of the centered matrix.
    pub rank: usize,
    pub mean: Vec<f64>,
}

impl PrincipalAxes {
    pub fn explained_ratio(&self, i: usize) -> f64 {
        if self.total_variance > 0.0 {
            (self.variances[i] / self.total_variance).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }
}

/// Mean-centers `x` and returns up to `max_components` right-singular
/// vectors. Works on whichever of the Gram (n x n) or scatter (d x d)
/// matrices is smaller.
pub fn principal_axes(x: &Mat, max_components: usize) -> Result<PrincipalAxes> {
    let (n, d) = (x.rows(), x.cols());
    if n == 0 || d == 0 {
        return Err(invalid("empty sample matrix"));
    }
    let mean = x.column_means();
    let xc = x.centered_by(&mean);
    let total_variance = xc.as_slice().iter().map(|v| v * v).sum::<f64>() / n as f64;

    let (values, mut axes) = if n <= d {
        let mut g = Mat::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = dot(xc.row(i), xc.row(j));
                g.set(i, j, v);
                g.set(j, i, v);
            }
        }
        let (vals, us) = symmetric_eigen(&g)?;
        let axes = us
            .iter()
            .map(|u| {
                let mut v = vec![0.0; d];
                for (i, ui) in u.iter().enumerate() {
                    for (a, b) in v.iter_mut().zip(xc.row(i)) {
                        *a += ui * b;
                    }
                }
                normalize(&mut v);
                v
            })
            .collect::<Vec<_>>();
        (vals, axes)
    } else {
        let mut s = Mat::zeros(d, d);
        for r in xc.iter_rows() {
            for i in 0..d {
                if r[i] == 0.0 {
                    continue;
                }
                for j in i..d {
                    s.data[i * d + j] += r[i] * r[j];
                }
            }
        }
        for i in 0..d {
            for j in 0..i {
                s.data[i * d + j] = s.data[j * d + i];
            }
        }
        symmetric_eigen(&s)?
    };

    let lmax = values.first().copied().unwrap_or(0.0).max(0.0);
    let tol = lmax * (n.max(d) as f64) * f64::EPSILON * 16.0;
    let rank = if lmax > 0.0 {
        values.iter().take_while(|&&l| l > tol).count()
    } else {
        0
    };
    let keep = max_components.min(rank);
    axes.truncate(keep);
    axes.iter_mut().for_each(|a| canonical_sign(a));
    let variances = values[..keep].iter().map(|l| l / n as f64).collect();

    Ok(PrincipalAxes {
        axes,
        variances,
        total_variance,
        rank,
        mean,
    })
}

/// Solves `a x = b` for symmetric positive definite `a` by Cholesky
/// factorization. Returns `None` if `a` is not numerically positive definite.
pub fn solve_spd(a: &Mat, b: &[f64]) -> Option<Vec<f64>> {
    let n = a.rows();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    Some(x)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}
