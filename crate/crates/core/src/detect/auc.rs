use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CrmError, Result};

fn check(scores: &[f64], labels: &[bool]) -> Result<(u64, u64)> {
    if scores.len() != labels.len() {
        return Err(CrmError::DimensionMismatch {
            expected: scores.len(),
            got: labels.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(CrmError::InvalidArgument("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(CrmError::SingleClass);
    }
    Ok((pos, neg))
}

/// Mann-Whitney AUC: `(concordant + 0.5 * tied) / (pos * neg)` over all
/// positive/negative pairs, computed from one sort.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // twice the concordant count plus the tied count, kept integral
    let mut twice: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (mut p, mut q) = (0u128, 0u128);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                p += 1;
            } else {
                q += 1;
            }
            i += 1;
        }
        twice += 2 * p * neg_below + p * q;
        neg_below += q;
    }
    Ok(twice as f64 / (2 * pos as u128 * neg as u128) as f64)
}

/// `q`-quantile with linear interpolation between order statistics.
pub(crate) fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Percentile bootstrap interval of the AUC. Resamples lacking a class are
/// redrawn.
pub fn bootstrap_ci(
    scores: &[f64],
    labels: &[bool],
    n_boot: usize,
    seed: u64,
    level: f64,
) -> Result<(f64, f64)> {
    check(scores, labels)?;
    if n_boot < 100 {
        return Err(CrmError::InvalidArgument(format!(
            "n_boot must be at least 100, got {n_boot}"
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(CrmError::InvalidArgument(format!("level must be in (0, 1), got {level}")));
    }
    let n = scores.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut aucs = Vec::with_capacity(n_boot);
    let mut s = vec![0.0; n];
    let mut l = vec![false; n];
    while aucs.len() < n_boot {
        for k in 0..n {
            let j = rng.random_range(0..n);
            s[k] = scores[j];
            l[k] = labels[j];
        }
        match roc_auc(&s, &l) {
            Ok(a) => aucs.push(a),
            Err(CrmError::SingleClass) => continue,
            Err(e) => return Err(e),
        }
    }
    aucs.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    Ok((quantile(&aucs, alpha), quantile(&aucs, 1.0 - alpha)))
}
