use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CrmError, Result};

/// Stratified assignment of samples to `k` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    /// Fold index of each sample, by position.
    pub assignments: Vec<usize>,
}

impl FoldPlan {
    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.assignments[i] == fold).collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.assignments[i] != fold).collect()
    }

    /// Assignments keyed by sample id.
    pub fn by_id(&self, ids: &[String]) -> Result<BTreeMap<String, usize>> {
        if ids.len() != self.len() {
            return Err(CrmError::DimensionMismatch {
                expected: self.len(),
                got: ids.len(),
            });
        }
        Ok(ids.iter().cloned().zip(self.assignments.iter().copied()).collect())
    }
}

/// Shuffles each class with a seeded RNG and deals it round-robin across
/// folds, continuing the rotation between classes so fold sizes stay even.
pub fn make_folds(labels: &[bool], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(CrmError::InvalidArgument("fold count must be at least 2".into()));
    }
    let (mut pos, mut neg): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| labels[i]);
    if pos.len() < k || neg.len() < k {
        return Err(CrmError::InvalidArgument(format!(
            "each class needs at least {k} samples (have {} members, {} non-members)",
            pos.len(),
            neg.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let mut assignments = vec![0; labels.len()];
    let mut next = 0usize;
    for &i in pos.iter().chain(&neg) {
        assignments[i] = next % k;
        next += 1;
    }
    Ok(FoldPlan { k, seed, assignments })
}
