use serde::{Deserialize, Serialize};

use crate::error::{CrmError, Result};
use crate::linalg::{dot, normalize, principal_axes, Mat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DirectionKind {
    Pc1,
    PcRank { rank: usize },
    Supervised,
}

/// A unit projection direction for one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDirection {
    pub layer: usize,
    pub vector: Vec<f64>,
    #[serde(flatten)]
    pub kind: DirectionKind,
    /// Share of displacement variance along the vector (PC kinds only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explained_variance_ratio: Option<f64>,
}

impl LayerDirection {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// Top principal direction of the mean-centered displacements.
pub fn pc1_direction(displacements: &Mat, layer: usize) -> Result<LayerDirection> {
    pc_rank_direction(displacements, layer, 1)
}

/// The `rank`-th principal direction (1-based), sign-normalized so its
/// largest-magnitude coordinate is positive.
pub fn pc_rank_direction(displacements: &Mat, layer: usize, rank: usize) -> Result<LayerDirection> {
    if displacements.rows() < 2 {
        return Err(CrmError::InvalidArgument(
            "principal directions need at least 2 samples".into(),
        ));
    }
    if rank == 0 {
        return Err(CrmError::InvalidArgument("component rank is 1-based".into()));
    }
    let pa = principal_axes(displacements, rank)?;
    if pa.rank == 0 {
        return Err(CrmError::DegenerateCalibration(format!(
            "layer {layer}: centered displacements have rank 0"
        )));
    }
    if rank > pa.rank {
        return Err(CrmError::RankExceeded {
            requested: rank,
            rank: pa.rank,
        });
    }
    let kind = if rank == 1 {
        DirectionKind::Pc1
    } else {
        DirectionKind::PcRank { rank }
    };
    Ok(LayerDirection {
        layer,
        vector: pa.axes[rank - 1].clone(),
        kind,
        explained_variance_ratio: Some(pa.explained_ratio(rank - 1)),
    })
}

/// Normalized member-minus-non-member mean displacement.
pub fn supervised_direction(
    displacements: &Mat,
    labels: &[bool],
    layer: usize,
) -> Result<LayerDirection> {
    if labels.len() != displacements.rows() {
        return Err(CrmError::DimensionMismatch {
            expected: displacements.rows(),
            got: labels.len(),
        });
    }
    let d = displacements.cols();
    let (mut pos, mut neg) = (vec![0.0; d], vec![0.0; d]);
    let (mut np, mut nn) = (0usize, 0usize);
    for (row, &is_member) in displacements.iter_rows().zip(labels) {
        let (acc, cnt) = if is_member {
            (&mut pos, &mut np)
        } else {
            (&mut neg, &mut nn)
        };
        acc.iter_mut().zip(row).for_each(|(a, b)| *a += b);
        *cnt += 1;
    }
    if np == 0 || nn == 0 {
        return Err(CrmError::SingleClass);
    }
    let mut v: Vec<f64> = pos
        .iter()
        .zip(&neg)
        .map(|(p, n)| p / np as f64 - n / nn as f64)
        .collect();
    if normalize(&mut v) <= 1e-12 {
        return Err(CrmError::DegenerateDirection);
    }
    Ok(LayerDirection {
        layer,
        vector: v,
        kind: DirectionKind::Supervised,
        explained_variance_ratio: None,
    })
}

/// Signed projection of `hc_row - h0_row` onto the direction.
pub fn lts_project<T: Copy + Into<f64>>(
    h0_row: &[T],
    hc_row: &[T],
    dir: &LayerDirection,
) -> Result<f64> {
    let d = dir.dim();
    if h0_row.len() != d || hc_row.len() != d {
        return Err(CrmError::DimensionMismatch {
            expected: d,
            got: if h0_row.len() != d {
                h0_row.len()
            } else {
                hc_row.len()
            },
        });
    }
    Ok(h0_row
        .iter()
        .zip(hc_row)
        .zip(&dir.vector)
        .map(|((z, c), v)| ((*c).into() - (*z).into()) * v)
        .sum())
}

/// Projection of a precomputed displacement.
pub fn project_displacement(displacement: &[f64], dir: &LayerDirection) -> Result<f64> {
    if displacement.len() != dir.dim() {
        return Err(CrmError::DimensionMismatch {
            expected: dir.dim(),
            got: displacement.len(),
        });
    }
    Ok(dot(displacement, &dir.vector))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn dir(v: Vec<f64>) -> LayerDirection {
        LayerDirection {
            layer: 0,
            vector: v,
            kind: DirectionKind::Supervised,
            explained_variance_ratio: None,
        }
    }

    #[test]
    fn two_points_on_first_axis() {
        let x = Mat::from_rows(&[[1.0, 0.0, 0.0], [-2.0, 0.0, 0.0]]).unwrap();
        let d = pc1_direction(&x, 0).unwrap();
        assert_eq!(d.vector, vec![1.0, 0.0, 0.0]);
        assert_abs_diff_eq!(d.explained_variance_ratio.unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rank_zero_rejected() {
        let x = Mat::from_rows(&[[1.0, 2.0], [1.0, 2.0]]).unwrap();
        assert!(matches!(pc1_direction(&x, 0), Err(CrmError::DegenerateCalibration(_))));
    }

    #[test]
    fn planted_axis_recovered() {
        // displacements = z u + eps, std(z)=10, std(eps)=0.1
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = 16;
        let mut u: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        normalize(&mut u);
        let rows: Vec<Vec<f64>> = (0..500)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                u.iter()
                    .map(|ui| 10.0 * z * ui + 0.1 * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                    .collect()
            })
            .collect();
        let x = Mat::from_rows(&rows).unwrap();
        let v = pc1_direction(&x, 0).unwrap();
        assert!(dot(&v.vector, &u).abs() >= 0.999);
    }

    #[test]
    fn pc2_aligns_with_minor_axis() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<[f64; 2]> = (0..400)
            .map(|_| {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                // axes (1,1)/sqrt2 with std 10 and (1,-1)/sqrt2 with std 1
                let s = std::f64::consts::FRAC_1_SQRT_2;
                [s * (10.0 * a + b), s * (10.0 * a - b)]
            })
            .collect();
        let x = Mat::from_rows(&rows).unwrap();
        let pc2 = pc_rank_direction(&x, 0, 2).unwrap();
        let minor = [std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2];
        assert!(dot(&pc2.vector, &minor).abs() >= 0.99);
        assert_eq!(pc_rank_direction(&x, 0, 1).unwrap().vector, pc1_direction(&x, 0).unwrap().vector);
        assert!(matches!(
            pc_rank_direction(&x, 0, 3),
            Err(CrmError::RankExceeded { requested: 3, rank: 2 })
        ));
    }

    #[test]
    fn supervised_examples() {
        let x = Mat::from_rows(&[[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]).unwrap();
        let v = supervised_direction(&x, &[true, false], 0).unwrap();
        assert_eq!(v.vector, vec![1.0, 0.0, 0.0]);

        let x = Mat::from_rows(&[[3.0, 4.0], [0.0, 0.0]]).unwrap();
        let v = supervised_direction(&x, &[true, false], 0).unwrap();
        assert_abs_diff_eq!(v.vector[0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(v.vector[1], 0.8, epsilon = 1e-15);

        let same = Mat::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        assert!(matches!(
            supervised_direction(&same, &[true, false], 0),
            Err(CrmError::DegenerateDirection)
        ));
        assert!(matches!(
            supervised_direction(&same, &[true, true], 0),
            Err(CrmError::SingleClass)
        ));
    }

    #[test]
    fn projection_examples() {
        let v = dir(vec![1.0, 0.0, 0.0]);
        assert_eq!(lts_project(&[1.0f32, 2.0, 3.0], &[1.0f32, 2.0, 3.0], &v).unwrap(), 0.0);
        assert_eq!(lts_project(&[0.0f64, 0.0, 0.0], &[3.0, 0.0, 0.0], &v).unwrap(), 3.0);
        let v = dir(vec![0.6, 0.8]);
        assert_abs_diff_eq!(lts_project(&[0.0, 0.0], &[1.0, 1.0], &v).unwrap(), 1.4, epsilon = 1e-15);
        assert!(lts_project(&[0.0], &[1.0, 1.0], &v).is_err());
    }
}
