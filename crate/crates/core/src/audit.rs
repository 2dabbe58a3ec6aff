//! Anomaly scoring of a single LTS trajectory against calibration
//! statistics, plus the audit request/record types shared by the service
//! and its clients.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CrmError, Result};
use crate::features::CalibrationArtifact;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Standardized deviation that raises `anomaly_flag`.
    pub z_threshold: f64,
    /// Absolute LTS value above which a layer is listed in `flagged_layers`.
    pub display_threshold: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            z_threshold: 2.0,
            display_threshold: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyScore {
    pub score: f64,
    pub flag: bool,
    /// Model layer indices with `|LTS| > display_threshold`.
    pub flagged_layers: Vec<usize>,
    /// Layers skipped because their calibration std is zero.
    pub excluded_layers: Vec<usize>,
}

/// Mean absolute z-score over layers with non-zero calibration std. The flag
/// fires when any of those layers deviates by more than `z_threshold` stds.
pub fn score_anomaly(lts: &[f64], artifact: &CalibrationArtifact, th: &Thresholds) -> Result<AnomalyScore> {
    let k = artifact.trajectory_len();
    if lts.len() != k {
        return Err(CrmError::DimensionMismatch {
            expected: k,
            got: lts.len(),
        });
    }
    if lts.iter().any(|v| !v.is_finite()) {
        return Err(CrmError::InvalidArgument("non-finite LTS value".into()));
    }
    let mut total = 0.0;
    let mut scored = 0usize;
    let mut flag = false;
    let mut flagged_layers = Vec::new();
    let mut excluded_layers = Vec::new();
    for (i, &v) in lts.iter().enumerate() {
        let layer = artifact.selected_layers[i];
        if v.abs() > th.display_threshold {
            flagged_layers.push(layer);
        }
        let sd = artifact.lts_std[i];
        if sd <= 0.0 {
            excluded_layers.push(layer);
            continue;
        }
        let z = (v - artifact.lts_mean[i]).abs() / sd;
        total += z;
        scored += 1;
        if z > th.z_threshold {
            flag = true;
        }
    }
    let score = if scored == 0 { 0.0 } else { total / scored as f64 };
    Ok(AnomalyScore {
        score,
        flag,
        flagged_layers,
        excluded_layers,
    })
}

/// Wire body of `POST /audit`. Exactly one payload must be present.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<String>,
    /// One row per model layer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub displacements: Option<Vec<Vec<f64>>>,
    /// One value per selected layer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lts: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    Text,
    Displacements,
    Lts,
}

pub enum Payload<'a> {
    Text { context: &'a str, query: &'a str },
    Displacements(&'a [Vec<f64>]),
    Lts(&'a [f64]),
}

impl AuditRequest {
    pub fn from_lts(lts: Vec<f64>) -> Self {
        AuditRequest {
            lts: Some(lts),
            ..Default::default()
        }
    }

    pub fn payload(&self) -> Result<Payload<'_>> {
        let text = self.context.is_some() || self.query.is_some();
        let n = text as u8 + self.displacements.is_some() as u8 + self.lts.is_some() as u8;
        if n != 1 {
            return Err(CrmError::InvalidArgument(
                "exactly one of (context, query), displacements or lts is required".into(),
            ));
        }
        if text {
            return match (&self.context, &self.query) {
                (Some(c), Some(q)) => Ok(Payload::Text { context: c, query: q }),
                _ => Err(CrmError::InvalidArgument("context and query must be given together".into())),
            };
        }
        if let Some(d) = &self.displacements {
            return Ok(Payload::Displacements(d));
        }
        Ok(Payload::Lts(self.lts.as_deref().expect("counted above")))
    }

    /// Hex SHA-256 of the compact JSON encoding.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("request is always serializable");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Resolves a non-text payload to an LTS trajectory.
pub fn trajectory_for(payload: &Payload<'_>, artifact: &CalibrationArtifact) -> Result<Vec<f64>> {
    match payload {
        Payload::Lts(v) => {
            if v.len() != artifact.trajectory_len() {
                return Err(CrmError::DimensionMismatch {
                    expected: artifact.trajectory_len(),
                    got: v.len(),
                });
            }
            Ok(v.to_vec())
        }
        Payload::Displacements(d) => {
            if let Some(row) = d.iter().find(|r| r.len() != artifact.hidden_dim) {
                return Err(CrmError::DimensionMismatch {
                    expected: artifact.hidden_dim,
                    got: row.len(),
                });
            }
            artifact.trajectory_from_displacements(d)
        }
        Payload::Text { .. } => Err(CrmError::InvalidArgument(
            "text payloads need an extractor to produce displacements".into(),
        )),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub record_id: u64,
    pub timestamp: String,
    pub request_digest: String,
    pub payload: PayloadKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<String>,
    pub layers: Vec<usize>,
    pub lts_trajectory: Vec<f64>,
    pub anomaly_score: f64,
    pub anomaly_flag: bool,
    pub flagged_layers: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub excluded_layers: Vec<usize>,
    pub latency_ms: f64,
}
