use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::auc::{bootstrap_ci, roc_auc};
use super::folds::FoldPlan;
use super::logreg::{train_lr, TrainerConfig};
use crate::error::{CrmError, Result};
use crate::linalg::{dot, principal_axes, Mat};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub trainer: TrainerConfig,
    /// Bootstrap resamples of the pooled out-of-fold scores; 0 skips the
    /// interval (used for permutation runs).
    pub n_boot: usize,
    pub ci_level: f64,
    pub boot_seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            trainer: TrainerConfig::default(),
            n_boot: 1000,
            ci_level: 0.95,
            boot_seed: 42,
        }
    }
}

/// Feature transform fitted on the training rows of each fold.
pub trait FoldTransform {
    fn fit_apply(&self, train: &Mat, test: &Mat) -> Result<(Mat, Mat)>;
    fn describe(&self) -> String;
}

pub struct Identity;

impl FoldTransform for Identity {
    fn fit_apply(&self, train: &Mat, test: &Mat) -> Result<(Mat, Mat)> {
        Ok((train.clone(), test.clone()))
    }

    fn describe(&self) -> String {
        "identity".into()
    }
}

fn project(x: &Mat, mean: &[f64], axes: &[Vec<f64>]) -> Mat {
    let mut out = Mat::zeros(x.rows(), axes.len());
    let mut centered = vec![0.0; x.cols()];
    for (i, row) in x.iter_rows().enumerate() {
        for (c, (v, m)) in centered.iter_mut().zip(row.iter().zip(mean)) {
            *c = v - m;
        }
        for (k, a) in axes.iter().enumerate() {
            out.set(i, k, dot(&centered, a));
        }
    }
    out
}

/// Projection onto the top `k` principal axes of the training rows.
pub struct PcaProjection {
    pub k: usize,
}

impl FoldTransform for PcaProjection {
    fn fit_apply(&self, train: &Mat, test: &Mat) -> Result<(Mat, Mat)> {
        let pa = principal_axes(train, self.k)?;
        if pa.rank < self.k {
            return Err(CrmError::RankExceeded {
                requested: self.k,
                rank: pa.rank,
            });
        }
        let axes = &pa.axes[..self.k];
        Ok((project(train, &pa.mean, axes), project(test, &pa.mean, axes)))
    }

    fn describe(&self) -> String {
        format!("pca:{}", self.k)
    }
}

/// Independent PCA per contiguous block of `block` columns (one block per
/// layer), keeping `k` components of each.
pub struct BlockPca {
    pub block: usize,
    pub k: usize,
}

impl FoldTransform for BlockPca {
    fn fit_apply(&self, train: &Mat, test: &Mat) -> Result<(Mat, Mat)> {
        if self.block == 0 || train.cols() % self.block != 0 {
            return Err(CrmError::InvalidArgument(format!(
                "{} columns do not split into blocks of {}",
                train.cols(),
                self.block
            )));
        }
        let blocks = train.cols() / self.block;
        let mut tr_cols = Vec::new();
        let mut te_cols = Vec::new();
        for b in 0..blocks {
            let cols: Vec<usize> = (b * self.block..(b + 1) * self.block).collect();
            let (tr, te) = PcaProjection { k: self.k }
                .fit_apply(&train.select_cols(&cols), &test.select_cols(&cols))?;
            tr_cols.push(tr);
            te_cols.push(te);
        }
        Ok((hstack(&tr_cols), hstack(&te_cols)))
    }

    fn describe(&self) -> String {
        format!("block_pca:{}x{}", self.block, self.k)
    }
}

fn hstack(parts: &[Mat]) -> Mat {
    let rows = parts[0].rows();
    let cols: usize = parts.iter().map(|p| p.cols()).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for p in parts {
            data.extend_from_slice(p.row(i));
        }
    }
    Mat::from_vec(rows, cols, data).expect("consistent block shapes")
}

/// Result of one cross-validated evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub classifier: String,
    pub transform: String,
    pub k: usize,
    pub fold_seed: u64,
    pub n_samples: usize,
    pub n_features: usize,
    pub per_fold_auc: Vec<f64>,
    pub mean_auc: f64,
    /// AUC of the pooled out-of-fold scores.
    pub pooled_auc: f64,
    pub bootstrap_ci: Option<(f64, f64)>,
    pub n_bootstrap: usize,
    pub ci_level: f64,
    /// Hash of everything defining the evaluation except the features
    /// themselves and the perturbation tag.
    pub config_fingerprint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
    pub fold_assignments: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oof_scores: Option<Vec<f64>>,
}

impl EvaluationReport {
    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.tag = Some(tag.into());
        self
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Serialize)]
struct FingerprintInput<'a> {
    classifier: &'a str,
    transform: &'a str,
    cfg: &'a CvConfig,
    plan: &'a FoldPlan,
    labels: &'a [bool],
    n_features: usize,
}

pub fn cross_validate(x: &Mat, labels: &[bool], plan: &FoldPlan, cfg: &CvConfig) -> Result<EvaluationReport> {
    cross_validate_with(x, labels, plan, cfg, &Identity)
}

/// Trains on each fold's complement, scores the held-out fold, and
/// summarises per-fold and pooled AUCs.
pub fn cross_validate_with(
    x: &Mat,
    labels: &[bool],
    plan: &FoldPlan,
    cfg: &CvConfig,
    transform: &dyn FoldTransform,
) -> Result<EvaluationReport> {
    if x.rows() != labels.len() {
        return Err(CrmError::DimensionMismatch {
            expected: x.rows(),
            got: labels.len(),
        });
    }
    if plan.len() != labels.len() || plan.assignments.iter().any(|&f| f >= plan.k) {
        return Err(CrmError::InvalidArgument("fold plan does not cover the samples".into()));
    }
    if x.cols() == 0 {
        return Err(CrmError::InvalidArgument("no feature columns".into()));
    }
    let mut oof = vec![0.0; labels.len()];
    let mut per_fold = Vec::with_capacity(plan.k);
    for fold in 0..plan.k {
        let train = plan.train_indices(fold);
        let test = plan.test_indices(fold);
        let (xtr, xte) = transform.fit_apply(&x.select_rows(&train), &x.select_rows(&test))?;
        let ytr: Vec<bool> = train.iter().map(|&i| labels[i]).collect();
        let yte: Vec<bool> = test.iter().map(|&i| labels[i]).collect();
        let model = train_lr(&xtr, &ytr, &cfg.trainer)?;
        let scores = model.decision_all(&xte)?;
        per_fold.push(roc_auc(&scores, &yte)?);
        for (&i, s) in test.iter().zip(scores) {
            oof[i] = s;
        }
    }
    let pooled_auc = roc_auc(&oof, labels)?;
    let ci = if cfg.n_boot == 0 {
        None
    } else {
        Some(bootstrap_ci(&oof, labels, cfg.n_boot, cfg.boot_seed, cfg.ci_level)?)
    };
    let classifier = "logistic_regression";
    let description = transform.describe();
    let fp = FingerprintInput {
        classifier,
        transform: &description,
        cfg,
        plan,
        labels,
        n_features: x.cols(),
    };
    let config_fingerprint = hex::encode(Sha256::digest(serde_json::to_vec(&fp)?));
    Ok(EvaluationReport {
        classifier: classifier.into(),
        transform: description,
        k: plan.k,
        fold_seed: plan.seed,
        n_samples: labels.len(),
        n_features: x.cols(),
        mean_auc: per_fold.iter().sum::<f64>() / plan.k as f64,
        per_fold_auc: per_fold,
        pooled_auc,
        bootstrap_ci: ci,
        n_bootstrap: cfg.n_boot,
        ci_level: cfg.ci_level,
        config_fingerprint,
        tag: None,
        fold_assignments: plan.assignments.clone(),
        oof_scores: Some(oof),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::make_folds;
    use crate::linalg::normal_cdf;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(n: usize, p: usize, seed: u64) -> Mat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mat::from_vec(n, p, (0..n * p).map(|_| StandardNormal.sample(&mut rng)).collect()).unwrap()
    }

    fn balanced(n: usize) -> Vec<bool> {
        (0..n).map(|i| i % 2 == 0).collect()
    }

    #[test]
    fn label_feature_is_perfect() {
        let y = balanced(100);
        let x = Mat::from_rows(&y.iter().map(|&l| vec![l as u8 as f64]).collect::<Vec<_>>()).unwrap();
        let plan = make_folds(&y, 5, 42).unwrap();
        let r = cross_validate(&x, &y, &plan, &CvConfig::default()).unwrap();
        assert_eq!(r.mean_auc, 1.0);
        assert_eq!(r.bootstrap_ci, Some((1.0, 1.0)));
    }

    #[test]
    fn random_features_near_chance() {
        let y = balanced(250);
        let plan = make_folds(&y, 5, 42).unwrap();
        let cfg = CvConfig {
            n_boot: 0,
            ..Default::default()
        };
        for seed in 0..20 {
            let r = cross_validate(&noise(250, 5, seed), &y, &plan, &cfg).unwrap();
            assert!((0.40..=0.60).contains(&r.mean_auc), "seed {seed}: {}", r.mean_auc);
        }
    }

    #[test]
    fn planted_unit_shift_matches_gaussian_roc() {
        let n = 4000;
        let y = balanced(n);
        let mut x = noise(n, 1, 8);
        for i in 0..n {
            if y[i] {
                x.set(i, 0, x.get(i, 0) + 1.0);
            }
        }
        let plan = make_folds(&y, 5, 42).unwrap();
        let r = cross_validate(&x, &y, &plan, &CvConfig::default()).unwrap();
        let oracle = normal_cdf(1.0 / 2f64.sqrt());
        assert!((r.mean_auc - oracle).abs() <= 0.03, "{} vs {oracle}", r.mean_auc);
        let (lo, hi) = r.bootstrap_ci.unwrap();
        assert!(lo <= r.pooled_auc && r.pooled_auc <= hi);
    }

    #[test]
    fn deterministic_and_fingerprint_ignores_values() {
        let y = balanced(60);
        let plan = make_folds(&y, 3, 1).unwrap();
        let cfg = CvConfig {
            n_boot: 200,
            ..Default::default()
        };
        let a = cross_validate(&noise(60, 3, 1), &y, &plan, &cfg).unwrap();
        assert_eq!(a, cross_validate(&noise(60, 3, 1), &y, &plan, &cfg).unwrap());
        let b = cross_validate(&noise(60, 3, 2), &y, &plan, &cfg).unwrap().with_tag("noisy");
        assert_eq!(a.config_fingerprint, b.config_fingerprint);
        let other = make_folds(&y, 3, 2).unwrap();
        let c = cross_validate(&noise(60, 3, 1), &y, &other, &cfg).unwrap();
        assert_ne!(a.config_fingerprint, c.config_fingerprint);
        assert_eq!(EvaluationReport::from_json(&b.to_json().unwrap()).unwrap(), b);
    }

    #[test]
    fn interval_narrows_with_more_samples() {
        // average width over several draws, small vs large sample
        let width = |n: usize| {
            let mut total = 0.0;
            for seed in 0..8 {
                let y = balanced(n);
                let mut x = noise(n, 1, 100 + seed);
                for i in 0..n {
                    if y[i] {
                        x.set(i, 0, x.get(i, 0) + 0.8);
                    }
                }
                let plan = make_folds(&y, 5, seed).unwrap();
                let r = cross_validate(&x, &y, &plan, &CvConfig::default()).unwrap();
                let (lo, hi) = r.bootstrap_ci.unwrap();
                total += hi - lo;
            }
            total / 8.0
        };
        assert!(width(60) > width(600));
    }

    #[test]
    fn pca_transforms_fit_per_fold() {
        let y = balanced(80);
        let plan = make_folds(&y, 4, 0).unwrap();
        let x = noise(80, 6, 3);
        let cfg = CvConfig {
            n_boot: 0,
            ..Default::default()
        };
        let r = cross_validate_with(&x, &y, &plan, &cfg, &PcaProjection { k: 2 }).unwrap();
        assert_eq!(r.transform, "pca:2");
        let r = cross_validate_with(&x, &y, &plan, &cfg, &BlockPca { block: 3, k: 1 }).unwrap();
        assert_eq!(r.transform, "block_pca:3x1");
        assert!(cross_validate_with(&x, &y, &plan, &cfg, &BlockPca { block: 4, k: 1 }).is_err());
        assert!(cross_validate_with(&x, &y, &plan, &cfg, &PcaProjection { k: 7 }).is_err());
    }
}
