use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::direction::{
    pc_rank_direction, project_displacement, supervised_direction, LayerDirection,
};
use super::layers::{select_target_layers, LayerScore};
use crate::error::{CrmError, Result};
use crate::trace::{split_calibration, Dataset};

/// Which projection direction to fit per selected layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionSpec {
    Pc1,
    Supervised,
    PcRank(usize),
}

impl fmt::Display for DirectionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DirectionSpec::Pc1 => f.write_str("pc1"),
            DirectionSpec::Supervised => f.write_str("supervised"),
            DirectionSpec::PcRank(r) => write!(f, "pc-rank:{r}"),
        }
    }
}

impl FromStr for DirectionSpec {
    type Err = CrmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pc1" => Ok(DirectionSpec::Pc1),
            "supervised" => Ok(DirectionSpec::Supervised),
            other => other
                .strip_prefix("pc-rank:")
                .and_then(|r| r.parse::<usize>().ok())
                .filter(|r| *r >= 1)
                .map(DirectionSpec::PcRank)
                .ok_or_else(|| {
                    CrmError::InvalidArgument(format!(
                        "direction must be pc1, supervised or pc-rank:<r>, got {other:?}"
                    ))
                }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub n_cal: usize,
    pub seed: u64,
    pub threshold: f64,
    pub direction: DirectionSpec,
    pub layer_score: LayerScore,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            n_cal: 100,
            seed: 42,
            threshold: 0.01,
            direction: DirectionSpec::Pc1,
            layer_score: LayerScore::TotalVarianceShare,
        }
    }
}

/// Everything fitted on the calibration subset: the selected layers, one
/// direction per layer, and the calibration mean/std of each layer's LTS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationArtifact {
    pub model_name: String,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub selected_layers: Vec<usize>,
    /// Selection score of every model layer.
    pub layer_scores: Vec<f64>,
    pub layer_score: LayerScore,
    pub variance_ratio_threshold: f64,
    pub directions: Vec<LayerDirection>,
    pub lts_mean: Vec<f64>,
    pub lts_std: Vec<f64>,
    pub seed: u64,
    pub n_cal: usize,
    pub calibration_ids: Vec<String>,
    /// Hex SHA-256 of the canonical encoding with this field blank.
    #[serde(default)]
    pub fingerprint: String,
}

impl CalibrationArtifact {
    pub fn trajectory_len(&self) -> usize {
        self.selected_layers.len()
    }

    pub fn compute_fingerprint(&self) -> String {
        let mut blank = self.clone();
        blank.fingerprint.clear();
        let bytes = serde_json::to_vec(&blank).expect("artifact is always serializable");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn seal(mut self) -> Self {
        self.fingerprint = self.compute_fingerprint();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.selected_layers.len();
        let bad = |m: String| Err(CrmError::InvalidArgument(format!("calibration artifact: {m}")));
        if k == 0 {
            return bad("no selected layers".into());
        }
        if self.directions.len() != k || self.lts_mean.len() != k || self.lts_std.len() != k {
            return bad("every selected layer needs one direction and one (mean, std) pair".into());
        }
        for ((l, dir), s) in self.selected_layers.iter().zip(&self.directions).zip(&self.lts_std) {
            if *l >= self.num_layers || dir.layer != *l {
                return bad(format!("layer {l} out of range or mismatched direction"));
            }
            if dir.vector.len() != self.hidden_dim {
                return bad(format!("layer {l}: direction has wrong dimension"));
            }
            let n = dir.vector.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (n - 1.0).abs() > 1e-9 {
                return bad(format!("layer {l}: direction norm {n}"));
            }
            if !(*s >= 0.0) {
                return bad(format!("layer {l}: negative std"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses and checks the fingerprint against the content.
    pub fn from_json(s: &str) -> Result<Self> {
        let a: CalibrationArtifact = serde_json::from_str(s)?;
        let expect = a.compute_fingerprint();
        if a.fingerprint != expect {
            return Err(CrmError::InvalidArgument(format!(
                "calibration artifact fingerprint mismatch (stored {}, computed {expect})",
                a.fingerprint
            )));
        }
        a.validate()?;
        Ok(a)
    }

    /// LTS trajectory from per-layer displacements covering every model layer.
    pub fn trajectory_from_displacements(&self, displacements: &[Vec<f64>]) -> Result<Vec<f64>> {
        if displacements.len() != self.num_layers {
            return Err(CrmError::DimensionMismatch {
                expected: self.num_layers,
                got: displacements.len(),
            });
        }
        self.directions
            .iter()
            .map(|dir| project_displacement(&displacements[dir.layer], dir))
            .collect()
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let v = values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, v.sqrt())
}

/// Splits off the calibration subset and fits the artifact on it.
pub fn calibrate(dataset: &Dataset, cfg: &CalibrationConfig) -> Result<CalibrationArtifact> {
    let cal_idx = split_calibration(dataset, cfg.n_cal, cfg.seed)?;
    let cal = dataset.subset(&cal_idx);
    let selection = select_target_layers(&cal, cfg.threshold, cfg.layer_score)?;
    if selection.layers.is_empty() {
        return Err(CrmError::DegenerateCalibration(format!(
            "no layer scores above {}",
            cfg.threshold
        )));
    }
    let labels = cal.labels();
    let mut directions = Vec::with_capacity(selection.layers.len());
    let mut lts_mean = Vec::with_capacity(selection.layers.len());
    let mut lts_std = Vec::with_capacity(selection.layers.len());
    for &layer in &selection.layers {
        let x = cal.layer_displacements(layer);
        let dir = match cfg.direction {
            DirectionSpec::Pc1 => pc_rank_direction(&x, layer, 1)?,
            DirectionSpec::PcRank(r) => pc_rank_direction(&x, layer, r)?,
            DirectionSpec::Supervised => supervised_direction(&x, &labels, layer)?,
        };
        let lts: Vec<f64> = x
            .iter_rows()
            .map(|r| project_displacement(r, &dir))
            .collect::<Result<_>>()?;
        let (m, s) = mean_std(&lts);
        lts_mean.push(m);
        lts_std.push(s);
        directions.push(dir);
    }
    let artifact = CalibrationArtifact {
        model_name: dataset.header.model_name.clone(),
        num_layers: dataset.num_layers(),
        hidden_dim: dataset.hidden_dim(),
        selected_layers: selection.layers,
        layer_scores: selection.scores,
        layer_score: cfg.layer_score,
        variance_ratio_threshold: cfg.threshold,
        directions,
        lts_mean,
        lts_std,
        seed: cfg.seed,
        n_cal: cfg.n_cal,
        calibration_ids: cal.samples.iter().map(|s| s.sample_id.clone()).collect(),
        fingerprint: String::new(),
    };
    Ok(artifact.seal())
}
