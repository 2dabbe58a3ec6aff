//! Control experiments and ablations run on top of cross-validation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cv::{cross_validate, cross_validate_with, CvConfig, EvaluationReport, PcaProjection};
use super::folds::{make_folds, FoldPlan};
use super::table::{fmt_auc, fmt_ci, fmt_delta, Table};
use crate::error::{CrmError, Result};
use crate::features::{calibrate, extract_features, CalibrationConfig, DirectionSpec, FeatureConfig, FeatureTable, Level};
use crate::linalg::{dot, principal_axes, Mat};
use crate::trace::Dataset;

/// Mean AUC of each label-shuffled rerun. Folds are rebuilt from the
/// shuffled labels; features are untouched.
pub fn permutation_control(
    x: &Mat,
    labels: &[bool],
    k: usize,
    n_perms: usize,
    seed: u64,
    cfg: &CvConfig,
) -> Result<Vec<f64>> {
    if n_perms == 0 {
        return Err(CrmError::InvalidArgument("n_perms must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_perms);
    let quick = CvConfig { n_boot: 0, ..cfg.clone() };
    for _ in 0..n_perms {
        let mut shuffled = labels.to_vec();
        shuffled.shuffle(&mut rng);
        let plan = make_folds(&shuffled, k, seed)?;
        out.push(cross_validate(x, &shuffled, &plan, &quick)?.mean_auc);
    }
    Ok(out)
}

pub fn permutation_table(aucs: &[f64]) -> Table {
    let mut t = Table::new("Permutation control", &["Shuffle", "AUC"]);
    for (i, a) in aucs.iter().enumerate() {
        t.push(vec![format!("{}", i + 1), fmt_auc(*a)]);
    }
    let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
    let sd = (aucs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / aucs.len() as f64).sqrt();
    t.push(vec!["mean ± sd".into(), format!("{mean:.3} ± {sd:.3}")]);
    t
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooRow {
    pub layer: usize,
    pub column: usize,
    pub auc: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooTable {
    pub full_auc: f64,
    pub rows: Vec<LooRow>,
}

impl LooTable {
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(
            format!("Leave-one-layer-out (full AUC {})", fmt_auc(self.full_auc)),
            &["Layer", "AUC", "ΔAUC"],
        );
        for r in &self.rows {
            t.push(vec![format!("L{}", r.layer), fmt_auc(r.auc), fmt_delta(r.delta)]);
        }
        t
    }
}

/// Drops each L3 column in turn. ΔAUC is ablated minus full.
pub fn loo_ablation(table: &FeatureTable, plan: &FoldPlan, cfg: &CvConfig) -> Result<LooTable> {
    let l3 = table.layout.l3_columns();
    if l3.len() < 2 {
        return Err(CrmError::InvalidArgument(
            "leave-one-out needs at least 2 L3 features".into(),
        ));
    }
    let quick = CvConfig { n_boot: 0, ..cfg.clone() };
    let full = cross_validate(&table.rows, &table.labels, plan, &quick)?.mean_auc;
    let mut rows = Vec::with_capacity(l3.len());
    for &(column, layer) in &l3 {
        let keep: Vec<usize> = (0..table.layout.len()).filter(|&c| c != column).collect();
        let auc = cross_validate(&table.rows.select_cols(&keep), &table.labels, plan, &quick)?.mean_auc;
        rows.push(LooRow {
            layer,
            column,
            auc,
            delta: auc - full,
        });
    }
    Ok(LooTable { full_auc: full, rows })
}

/// Single-feature AUC of every L3 column.
pub fn layer_sweep(table: &FeatureTable, plan: &FoldPlan, cfg: &CvConfig) -> Result<Vec<(usize, f64)>> {
    let quick = CvConfig { n_boot: 0, ..cfg.clone() };
    table
        .layout
        .l3_columns()
        .into_iter()
        .map(|(c, layer)| {
            Ok((layer, cross_validate(&table.rows.select_cols(&[c]), &table.labels, plan, &quick)?.mean_auc))
        })
        .collect()
}

pub fn layer_sweep_table(rows: &[(usize, f64)]) -> Table {
    let mut t = Table::new("Per-layer LTS", &["Layer", "AUC"]);
    for (l, a) in rows {
        t.push(vec![format!("L{l}"), fmt_auc(*a)]);
    }
    t
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub mean_auc: f64,
    pub bootstrap_ci: Option<(f64, f64)>,
}

/// LR on the top-k principal components of the concatenated displacements,
/// PCA refit on each training fold.
pub fn pca_dim_sweep(
    displacements: &Mat,
    labels: &[bool],
    plan: &FoldPlan,
    ks: &[usize],
    cfg: &CvConfig,
) -> Result<Vec<SweepRow>> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(CrmError::InvalidArgument("component counts must be non-empty and positive".into()));
    }
    let max_k = *ks.iter().max().expect("non-empty");
    let rank = principal_axes(displacements, 0)?.rank;
    if max_k > rank {
        return Err(CrmError::RankExceeded {
            requested: max_k,
            rank,
        });
    }
    ks.iter()
        .map(|&k| {
            let r = cross_validate_with(displacements, labels, plan, cfg, &PcaProjection { k })?;
            Ok(SweepRow {
                k,
                mean_auc: r.mean_auc,
                bootstrap_ci: r.bootstrap_ci,
            })
        })
        .collect()
}

pub fn pca_sweep_table(rows: &[SweepRow]) -> Table {
    let mut t = Table::new("PCA dimension sweep", &["K", "AUC", "95% CI"]);
    for r in rows {
        t.push(vec![format!("{}", r.k), fmt_auc(r.mean_auc), fmt_ci(r.bootstrap_ci)]);
    }
    t
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub rank: usize,
    /// `None` when some selected layer has fewer than `rank` components.
    pub mean_auc: Option<f64>,
}

/// Recalibrates with the r-th principal direction as the sole projection
/// and evaluates L3 features on `eval_idx`.
pub fn pc_rank_sweep(
    dataset: &Dataset,
    cal: &CalibrationConfig,
    ranks: &[usize],
    eval_idx: &[usize],
    k: usize,
    cfg: &CvConfig,
) -> Result<Vec<RankRow>> {
    let eval = dataset.subset(eval_idx);
    let labels = eval.labels();
    let plan = make_folds(&labels, k, cal.seed)?;
    let quick = CvConfig { n_boot: 0, ..cfg.clone() };
    let mut rows = Vec::with_capacity(ranks.len());
    for &rank in ranks {
        let c = CalibrationConfig {
            direction: DirectionSpec::PcRank(rank),
            ..cal.clone()
        };
        let artifact = match calibrate(dataset, &c) {
            Ok(a) => a,
            Err(CrmError::RankExceeded { .. }) => {
                rows.push(RankRow { rank, mean_auc: None });
                continue;
            }
            Err(e) => return Err(e),
        };
        let t = extract_features(&eval, &artifact, &FeatureConfig::levels(&[Level::L3]))?;
        let auc = cross_validate(&t.rows, &labels, &plan, &quick)?.mean_auc;
        rows.push(RankRow {
            rank,
            mean_auc: Some(auc),
        });
    }
    Ok(rows)
}

pub fn pc_rank_table(rows: &[RankRow]) -> Table {
    let mut t = Table::new("PC-rank sweep", &["Direction", "AUC"]);
    for r in rows {
        t.push(vec![
            format!("PC{}", r.rank),
            r.mean_auc.map(fmt_auc).unwrap_or_else(|| "rank exceeded".into()),
        ]);
    }
    t
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicMatching {
    /// Matched non-member index for each member.
    pub matches: Vec<usize>,
    pub similarities: Vec<f64>,
    pub mean_similarity: f64,
}

fn check_pool(v: &[Vec<f64>], what: &str) -> Result<usize> {
    let d = v.first().map(|e| e.len()).ok_or_else(|| CrmError::InvalidArgument(format!("empty {what} pool")))?;
    if d == 0 || v.iter().any(|e| e.len() != d) {
        return Err(CrmError::InvalidArgument(format!("ragged {what} embeddings")));
    }
    Ok(d)
}

/// Greedy per-member argmax cosine over the non-member pool. Ties go to the
/// lowest non-member index. Embeddings are assumed unit norm.
pub fn same_topic_pairs(
    members: &[Vec<f64>],
    non_members: &[Vec<f64>],
    with_replacement: bool,
) -> Result<TopicMatching> {
    let d = check_pool(members, "member")?;
    if check_pool(non_members, "non-member")? != d {
        return Err(CrmError::DimensionMismatch {
            expected: d,
            got: non_members[0].len(),
        });
    }
    if !with_replacement && non_members.len() < members.len() {
        return Err(CrmError::InvalidArgument(
            "matching without replacement needs at least as many non-members as members".into(),
        ));
    }
    let mut used = vec![false; non_members.len()];
    let mut matches = Vec::with_capacity(members.len());
    let mut similarities = Vec::with_capacity(members.len());
    for m in members {
        let mut best: Option<(usize, f64)> = None;
        for (j, n) in non_members.iter().enumerate() {
            if used[j] {
                continue;
            }
            let s = dot(m, n);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((j, s));
            }
        }
        let (j, s) = best.expect("pool checked non-empty");
        if !with_replacement {
            used[j] = true;
        }
        matches.push(j);
        similarities.push(s);
    }
    let mean_similarity = similarities.iter().sum::<f64>() / similarities.len() as f64;
    Ok(TopicMatching {
        matches,
        similarities,
        mean_similarity,
    })
}

/// Mean cosine of a seeded uniformly random pairing, the reference point
/// for the matched similarity.
pub fn random_pairing_similarity(members: &[Vec<f64>], non_members: &[Vec<f64>], seed: u64) -> Result<f64> {
    check_pool(members, "member")?;
    check_pool(non_members, "non-member")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    use rand::Rng;
    let total: f64 = members
        .iter()
        .map(|m| dot(m, &non_members[rng.random_range(0..non_members.len())]))
        .collect::<Vec<_>>()
        .iter()
        .sum();
    Ok(total / members.len() as f64)
}

/// Members plus their matched non-members (deduplicated), matched on the
/// with-context embedding as a topic proxy. Returns sorted dataset indices.
pub fn same_topic_subset(dataset: &Dataset, with_replacement: bool) -> Result<(Vec<usize>, TopicMatching)> {
    if dataset.header.sections.embeddings.is_none() {
        return Err(CrmError::MissingSection {
            section: "embeddings",
            level: "same-topic control",
        });
    }
    let emb = |i: usize| -> Vec<f64> {
        let (_, ec) = dataset.samples[i].embeddings.as_ref().expect("section flagged present");
        let mut v: Vec<f64> = ec.iter().map(|&x| x as f64).collect();
        crate::linalg::normalize(&mut v);
        v
    };
    let (mi, ni): (Vec<usize>, Vec<usize>) = (0..dataset.len()).partition(|&i| dataset.samples[i].label);
    let members: Vec<Vec<f64>> = mi.iter().map(|&i| emb(i)).collect();
    let pool: Vec<Vec<f64>> = ni.iter().map(|&i| emb(i)).collect();
    let matching = same_topic_pairs(&members, &pool, with_replacement)?;
    let mut idx = mi.clone();
    idx.extend(matching.matches.iter().map(|&j| ni[j]));
    idx.sort_unstable();
    idx.dedup();
    Ok((idx, matching))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub condition: String,
    pub auc: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaTable {
    pub clean_auc: f64,
    pub rows: Vec<DeltaRow>,
}

impl DeltaTable {
    pub fn to_table(&self) -> Table {
        let mut t = Table::new("Perturbation ΔAUC", &["Condition", "AUC", "ΔAUC"]);
        t.push(vec!["clean".into(), fmt_auc(self.clean_auc), "-".into()]);
        for r in &self.rows {
            t.push(vec![r.condition.clone(), fmt_auc(r.auc), fmt_delta(r.delta)]);
        }
        t
    }
}

/// Compares perturbed runs against a clean run. ΔAUC is perturbed minus
/// clean; every run must share the clean run's configuration fingerprint.
pub fn delta_auc_report(clean: &EvaluationReport, perturbed: &[(String, EvaluationReport)]) -> Result<DeltaTable> {
    let mut rows = Vec::with_capacity(perturbed.len());
    for (name, r) in perturbed {
        if r.config_fingerprint != clean.config_fingerprint {
            return Err(CrmError::IncomparableRuns(format!(
                "{name} was evaluated under a different configuration"
            )));
        }
        rows.push(DeltaRow {
            condition: name.clone(),
            auc: r.mean_auc,
            delta: r.mean_auc - clean.mean_auc,
        });
    }
    Ok(DeltaTable {
        clean_auc: clean.mean_auc,
        rows,
    })
}

/// Summary row for a single evaluation.
pub fn report_table(title: &str, rows: &[(String, &EvaluationReport)]) -> Table {
    let mut t = Table::new(title, &["Features", "Dim", "AUC", "95% CI"]);
    for (name, r) in rows {
        t.push(vec![
            name.clone(),
            format!("{}", r.n_features),
            fmt_auc(r.mean_auc),
            fmt_ci(r.bootstrap_ci),
        ]);
    }
    t
}
