use serde::{Deserialize, Serialize};

use crate::error::{CrmError, Result};
use crate::linalg::{dot, norm, solve_spd, Mat};

/// Largest parameter count solved with full Newton steps; wider problems use
/// L-BFGS.
const NEWTON_MAX_PARAMS: usize = 256;
const LBFGS_MEMORY: usize = 10;
const MAX_HALVINGS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub l2_strength: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            l2_strength: 1.0,
            max_iter: 500,
            tol: 1e-8,
        }
    }
}

/// Logistic model over standardized features. `weights` live in the
/// standardized space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub iterations: usize,
}

impl LinearModel {
    pub fn decision(&self, row: &[f64]) -> f64 {
        let mut z = self.bias;
        for j in 0..self.weights.len() {
            z += self.weights[j] * (row[j] - self.feature_mean[j]) / self.feature_std[j];
        }
        z
    }

    pub fn decision_all(&self, x: &Mat) -> Result<Vec<f64>> {
        if x.cols() != self.weights.len() {
            return Err(CrmError::DimensionMismatch {
                expected: self.weights.len(),
                got: x.cols(),
            });
        }
        Ok(x.iter_rows().map(|r| self.decision(r)).collect())
    }

    pub fn probability(&self, row: &[f64]) -> f64 {
        sigmoid(self.decision(row))
    }

    /// Weights mapped back to the original feature scale.
    pub fn raw_weights(&self) -> Vec<f64> {
        self.weights.iter().zip(&self.feature_std).map(|(w, s)| w / s).collect()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

struct Problem<'a> {
    x: &'a Mat,
    y: Vec<f64>,
    lambda: f64,
}

impl Problem<'_> {
    fn dim(&self) -> usize {
        self.x.cols() + 1
    }

    /// `theta = [w..., b]`.
    fn margins(&self, theta: &[f64]) -> Vec<f64> {
        let p = self.x.cols();
        self.x.iter_rows().map(|r| dot(r, &theta[..p]) + theta[p]).collect()
    }

    fn objective(&self, theta: &[f64]) -> f64 {
        let p = self.x.cols();
        let loss: f64 = self
            .margins(theta)
            .iter()
            .zip(&self.y)
            .map(|(&z, &y)| softplus(z) - y * z)
            .sum();
        loss + 0.5 * self.lambda * dot(&theta[..p], &theta[..p])
    }

    fn gradient(&self, theta: &[f64], margins: &[f64]) -> Vec<f64> {
        let p = self.x.cols();
        let mut g = vec![0.0; p + 1];
        for (i, row) in self.x.iter_rows().enumerate() {
            let r = sigmoid(margins[i]) - self.y[i];
            for j in 0..p {
                g[j] += r * row[j];
            }
            g[p] += r;
        }
        for j in 0..p {
            g[j] += self.lambda * theta[j];
        }
        g
    }

    fn hessian(&self, margins: &[f64]) -> Mat {
        let p = self.x.cols();
        let mut h = Mat::zeros(p + 1, p + 1);
        let mut ext = vec![1.0; p + 1];
        for (i, row) in self.x.iter_rows().enumerate() {
            let s = sigmoid(margins[i]);
            let w = s * (1.0 - s);
            ext[..p].copy_from_slice(row);
            for a in 0..=p {
                let wa = w * ext[a];
                for b in a..=p {
                    let v = h.get(a, b) + wa * ext[b];
                    h.set(a, b, v);
                }
            }
        }
        for a in 0..=p {
            if a < p {
                h.set(a, a, h.get(a, a) + self.lambda);
            }
            for b in 0..a {
                h.set(a, b, h.get(b, a));
            }
        }
        h
    }
}

/// Backtracking line search along `dir` with the Armijo condition. Once the
/// objective change drops below rounding, a step that shrinks the gradient
/// is accepted instead.
fn line_search(prob: &Problem, theta: &[f64], f0: f64, g: &[f64], dir: &[f64]) -> Option<(Vec<f64>, f64)> {
    let slope = dot(g, dir);
    if slope >= 0.0 {
        return None;
    }
    let g0 = norm(g);
    let flat = 1e-12 * (1.0 + f0.abs());
    let mut t = 1.0;
    for _ in 0..MAX_HALVINGS {
        let cand: Vec<f64> = theta.iter().zip(dir).map(|(a, d)| a + t * d).collect();
        let f = prob.objective(&cand);
        if f <= f0 + 1e-4 * t * slope {
            return Some((cand, f));
        }
        if (f - f0).abs() <= flat && norm(&prob.gradient(&cand, &prob.margins(&cand))) < g0 {
            return Some((cand, f));
        }
        t *= 0.5;
    }
    None
}

fn newton(prob: &Problem, cfg: &TrainerConfig) -> Result<(Vec<f64>, usize)> {
    let mut theta = vec![0.0; prob.dim()];
    let mut f = prob.objective(&theta);
    let mut gnorm = f64::INFINITY;
    for it in 0..cfg.max_iter {
        let m = prob.margins(&theta);
        let g = prob.gradient(&theta, &m);
        gnorm = norm(&g);
        if gnorm <= cfg.tol {
            return Ok((theta, it));
        }
        let mut h = prob.hessian(&m);
        let step = match solve_spd(&h, &g) {
            Some(s) => s,
            None => {
                // saturated probabilities leave the bias row singular
                let n = h.rows();
                for a in 0..n {
                    h.set(a, a, h.get(a, a) + 1e-10);
                }
                solve_spd(&h, &g).unwrap_or_else(|| g.clone())
            }
        };
        let dir: Vec<f64> = step.iter().map(|s| -s).collect();
        match line_search(prob, &theta, f, &g, &dir) {
            Some((t, fv)) => {
                theta = t;
                f = fv;
            }
            // no representable decrease left: at the floating-point optimum
            None => break,
        }
    }
    let m = prob.margins(&theta);
    let final_norm = norm(&prob.gradient(&theta, &m));
    if final_norm <= cfg.tol {
        return Ok((theta, cfg.max_iter));
    }
    Err(CrmError::NonConvergence {
        iterations: cfg.max_iter,
        grad_norm: final_norm.min(gnorm),
    })
}

fn lbfgs(prob: &Problem, cfg: &TrainerConfig) -> Result<(Vec<f64>, usize)> {
    let mut theta = vec![0.0; prob.dim()];
    let mut f = prob.objective(&theta);
    let mut g = prob.gradient(&theta, &prob.margins(&theta));
    let mut hist: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::with_capacity(LBFGS_MEMORY);
    for it in 0..cfg.max_iter {
        if norm(&g) <= cfg.tol {
            return Ok((theta, it));
        }
        // two-loop recursion
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        let gamma = match hist.last() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => 1.0 / norm(&g).max(1.0),
        };
        q.iter_mut().for_each(|v| *v *= gamma);
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let (next, fv) = match line_search(prob, &theta, f, &g, &dir) {
            Some(r) => r,
            None => {
                hist.clear();
                dir = g.iter().map(|v| -v / norm(&g).max(1.0)).collect();
                match line_search(prob, &theta, f, &g, &dir) {
                    Some(r) => r,
                    None => break,
                }
            }
        };
        let g_next = prob.gradient(&next, &prob.margins(&next));
        let s: Vec<f64> = next.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_next.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            if hist.len() == LBFGS_MEMORY {
                hist.remove(0);
            }
            hist.push((s, y, 1.0 / sy));
        }
        theta = next;
        f = fv;
        g = g_next;
    }
    let gnorm = norm(&g);
    if gnorm <= cfg.tol {
        return Ok((theta, cfg.max_iter));
    }
    Err(CrmError::NonConvergence {
        iterations: cfg.max_iter,
        grad_norm: gnorm,
    })
}

/// Fits L2-regularized logistic regression on training-set standardized
/// features. The intercept is not penalized.
pub fn train_lr(x: &Mat, labels: &[bool], cfg: &TrainerConfig) -> Result<LinearModel> {
    if x.rows() != labels.len() {
        return Err(CrmError::DimensionMismatch {
            expected: x.rows(),
            got: labels.len(),
        });
    }
    if !labels.iter().any(|&l| l) || labels.iter().all(|&l| l) {
        return Err(CrmError::SingleClass);
    }
    if !(cfg.l2_strength >= 0.0) || !(cfg.tol > 0.0) || cfg.max_iter == 0 {
        return Err(CrmError::InvalidArgument(
            "trainer needs l2_strength >= 0, tol > 0 and max_iter > 0".into(),
        ));
    }
    if x.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(CrmError::InvalidArgument("non-finite feature value".into()));
    }
    let (n, p) = (x.rows(), x.cols());
    let mean = x.column_means();
    let mut std = vec![0.0; p];
    for row in x.iter_rows() {
        for j in 0..p {
            std[j] += (row[j] - mean[j]).powi(2);
        }
    }
    let mut active = vec![true; p];
    for j in 0..p {
        std[j] = (std[j] / n as f64).sqrt();
        if std[j] <= 1e-12 * (1.0 + mean[j].abs()) {
            std[j] = 1.0;
            active[j] = false;
        }
    }
    let keep: Vec<usize> = (0..p).filter(|&j| active[j]).collect();
    let mut z = Mat::zeros(n, keep.len());
    for i in 0..n {
        let row = x.row(i);
        for (c, &j) in keep.iter().enumerate() {
            z.set(i, c, (row[j] - mean[j]) / std[j]);
        }
    }
    let prob = Problem {
        x: &z,
        y: labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect(),
        lambda: cfg.l2_strength,
    };
    let (theta, iterations) = if prob.dim() <= NEWTON_MAX_PARAMS {
        newton(&prob, cfg)?
    } else {
        lbfgs(&prob, cfg)?
    };
    let mut weights = vec![0.0; p];
    for (c, &j) in keep.iter().enumerate() {
        weights[j] = theta[c];
    }
    Ok(LinearModel {
        weights,
        bias: theta[keep.len()],
        feature_mean: mean,
        feature_std: std,
        iterations,
    })
}
