use serde::{Deserialize, Serialize};

use crate::error::{CrmError, Result};
use crate::linalg::principal_axes;
use crate::trace::Dataset;

/// How a layer's score is computed before thresholding.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerScore {
    /// Layer's total displacement variance over the sum across layers.
    #[default]
    TotalVarianceShare,
    /// Explained-variance ratio of the layer's own first component.
    Pc1ExplainedRatio,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSelection {
    /// Ascending layer indices whose score exceeds the threshold.
    pub layers: Vec<usize>,
    /// Score of every layer, indexed by layer.
    pub scores: Vec<f64>,
}

fn total_variance(x: &crate::linalg::Mat) -> f64 {
    let means = x.column_means();
    let n = x.rows() as f64;
    x.iter_rows()
        .map(|r| r.iter().zip(&means).map(|(v, m)| (v - m).powi(2)).sum::<f64>())
        .sum::<f64>()
        / n
}

pub fn select_target_layers(
    calibration: &Dataset,
    threshold: f64,
    score: LayerScore,
) -> Result<LayerSelection> {
    if calibration.is_empty() {
        return Err(CrmError::InvalidArgument("empty calibration set".into()));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(CrmError::InvalidArgument(format!(
            "threshold must lie in (0, 1), got {threshold}"
        )));
    }
    let l = calibration.num_layers();
    let variances: Vec<f64> = (0..l)
        .map(|layer| total_variance(&calibration.layer_displacements(layer)))
        .collect();
    let sum: f64 = variances.iter().sum();
    if sum <= 0.0 {
        return Err(CrmError::DegenerateCalibration(
            "displacements have zero variance at every layer".into(),
        ));
    }
    let scores = match score {
        LayerScore::TotalVarianceShare => variances.iter().map(|v| v / sum).collect::<Vec<_>>(),
        LayerScore::Pc1ExplainedRatio => (0..l)
            .map(|layer| {
                if variances[layer] <= 0.0 || calibration.len() < 2 {
                    return Ok(0.0);
                }
                let pa = principal_axes(&calibration.layer_displacements(layer), 1)?;
                Ok(if pa.rank == 0 { 0.0 } else { pa.explained_ratio(0) })
            })
            .collect::<Result<Vec<_>>>()?,
    };
    let layers = scores
        .iter()
        .enumerate()
        .filter(|(_, s)| **s > threshold)
        .map(|(i, _)| i)
        .collect();
    Ok(LayerSelection { layers, scores })
}
