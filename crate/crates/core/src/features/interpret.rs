use serde::{Deserialize, Serialize};

use super::direction::LayerDirection;
use crate::error::{CrmError, Result};
use crate::linalg::{dot, Mat};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    pub index: usize,
    pub token: String,
    pub score: f64,
}

/// Scores every vocabulary row against the direction and returns the
/// `top_k` highest, ties broken by lower token index.
pub fn vocab_backproject(
    dir: &LayerDirection,
    unembed: &Mat,
    vocab: &[String],
    top_k: usize,
) -> Result<Vec<TokenScore>> {
    if unembed.cols() != dir.dim() {
        return Err(CrmError::DimensionMismatch {
            expected: dir.dim(),
            got: unembed.cols(),
        });
    }
    if vocab.len() != unembed.rows() {
        return Err(CrmError::DimensionMismatch {
            expected: unembed.rows(),
            got: vocab.len(),
        });
    }
    if top_k > vocab.len() {
        return Err(CrmError::InvalidArgument(format!(
            "top_k {top_k} exceeds vocabulary size {}",
            vocab.len()
        )));
    }
    let mut scored: Vec<(usize, f64)> = unembed
        .iter_rows()
        .enumerate()
        .map(|(i, row)| (i, dot(row, &dir.vector)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scored
        .into_iter()
        .take(top_k)
        .map(|(index, score)| TokenScore {
            index,
            token: vocab[index].clone(),
            score,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::DirectionKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dir(v: Vec<f64>) -> LayerDirection {
        LayerDirection {
            layer: 0,
            vector: v,
            kind: DirectionKind::Pc1,
            explained_variance_ratio: None,
        }
    }

    fn vocab(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("tok{i}")).collect()
    }

    #[test]
    fn identity_unembedding() {
        let mut eye = Mat::zeros(4, 4);
        for i in 0..4 {
            eye.set(i, i, 1.0);
        }
        let top = vocab_backproject(&dir(vec![0.0, 0.0, 1.0, 0.0]), &eye, &vocab(4), 2).unwrap();
        assert_eq!(top[0].index, 2);
        assert_eq!(top[0].score, 1.0);
        // remaining tokens tie at 0: lowest index first
        assert_eq!(top[1].index, 0);
    }

    #[test]
    fn negation_reverses_ranking() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<f64> = (0..20 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w = Mat::from_vec(20, 3, data).unwrap();
        let v = vec![0.6, 0.0, 0.8];
        let up = vocab_backproject(&dir(v.clone()), &w, &vocab(20), 20).unwrap();
        let down = vocab_backproject(&dir(v.iter().map(|x| -x).collect()), &w, &vocab(20), 20).unwrap();
        let a: Vec<usize> = up.iter().map(|t| t.index).collect();
        let mut b: Vec<usize> = down.iter().map(|t| t.index).collect();
        b.reverse();
        assert_eq!(a, b);
    }

    #[test]
    fn matches_exhaustive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let (v_n, d) = (50, 8);
            let data: Vec<f64> = (0..v_n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w = Mat::from_vec(v_n, d, data.clone()).unwrap();
            let mut v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            crate::linalg::normalize(&mut v);
            let got = vocab_backproject(&dir(v.clone()), &w, &vocab(v_n), 10).unwrap();
            // oracle: every row's dot product, then pick max repeatedly
            let mut remaining: Vec<(usize, f64)> = (0..v_n)
                .map(|i| (i, (0..d).map(|k| data[i * d + k] * v[k]).sum()))
                .collect();
            for g in &got {
                let (pos, best) = remaining
                    .iter()
                    .enumerate()
                    .fold((0, remaining[0]), |acc, (p, &c)| if c.1 > acc.1 .1 { (p, c) } else { acc });
                assert_eq!(g.index, best.0);
                assert!((g.score - best.1).abs() < 1e-12);
                remaining.remove(pos);
            }
        }
    }

    #[test]
    fn dimension_checks() {
        let w = Mat::zeros(3, 2);
        assert!(vocab_backproject(&dir(vec![1.0, 0.0, 0.0]), &w, &vocab(3), 1).is_err());
        assert!(vocab_backproject(&dir(vec![1.0, 0.0]), &w, &vocab(3), 4).is_err());
    }
}
