use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::artifact::CalibrationArtifact;
use super::direction::lts_project;
use super::levels::{kl_statistics, semantic_delta, KlStats, DEFAULT_EARLY_WINDOW};
use crate::error::{CrmError, Result};
use crate::linalg::Mat;
use crate::trace::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Level {
    L1,
    L2,
    L3,
}

impl Level {
    pub fn name(self) -> &'static str {
        match self {
            Level::L1 => "L1",
            Level::L2 => "L2",
            Level::L3 => "L3",
        }
    }

    /// Parses a comma-separated list such as `L1,L3`.
    pub fn parse_list(s: &str) -> Result<Vec<Level>> {
        let mut out: Vec<Level> = s
            .split(',')
            .filter(|t| !t.trim().is_empty())
            .map(|t| t.trim().parse())
            .collect::<Result<_>>()?;
        out.sort();
        out.dedup();
        if out.is_empty() {
            return Err(CrmError::InvalidArgument("no feature levels requested".into()));
        }
        Ok(out)
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Level {
    type Err = CrmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "L1" => Ok(Level::L1),
            "L2" => Ok(Level::L2),
            "L3" => Ok(Level::L3),
            _ => Err(CrmError::InvalidArgument(format!("unknown level {s:?}"))),
        }
    }
}

/// Number of KL statistics emitted for the L2 level.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum L2Mode {
    #[default]
    FiveStatistics,
    /// Only `kl_mean`.
    MeanOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub levels: Vec<Level>,
    pub l2_mode: L2Mode,
    pub early_window: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            levels: vec![Level::L1, Level::L2, Level::L3],
            l2_mode: L2Mode::FiveStatistics,
            early_window: DEFAULT_EARLY_WINDOW,
        }
    }
}

impl FeatureConfig {
    pub fn levels(levels: &[Level]) -> Self {
        let mut levels = levels.to_vec();
        levels.sort();
        levels.dedup();
        Self {
            levels,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSlot {
    pub level: Level,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer: Option<usize>,
}

/// Maps each column of a feature matrix to its level and layer/statistic.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub slots: Vec<FeatureSlot>,
}

impl FeatureLayout {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn columns_for(&self, levels: &[Level]) -> Vec<usize> {
        self.slots
            .iter()
            .enumerate()
            .filter(|(_, s)| levels.contains(&s.level))
            .map(|(i, _)| i)
            .collect()
    }

    /// `(column, layer)` of every L3 entry.
    pub fn l3_columns(&self) -> Vec<(usize, usize)> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| match (s.level, s.layer) {
                (Level::L3, Some(l)) => Some((i, l)),
                _ => None,
            })
            .collect()
    }

    pub fn select(&self, cols: &[usize]) -> FeatureLayout {
        FeatureLayout {
            slots: cols.iter().map(|&c| self.slots[c].clone()).collect(),
        }
    }
}

/// Per-sample feature vector split by level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub l1: Option<f64>,
    pub l2: Option<Vec<f64>>,
    pub l3: Vec<f64>,
}

impl FeatureVector {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(1 + 5 + self.l3.len());
        v.extend(self.l1);
        if let Some(l2) = &self.l2 {
            v.extend_from_slice(l2);
        }
        v.extend_from_slice(&self.l3);
        v
    }
}

/// Feature matrix with its layout, labels and sample ids.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub layout: FeatureLayout,
    pub rows: Mat,
    pub labels: Vec<bool>,
    pub ids: Vec<String>,
}

impl FeatureTable {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select_columns(&self, cols: &[usize]) -> FeatureTable {
        FeatureTable {
            layout: self.layout.select(cols),
            rows: self.rows.select_cols(cols),
            labels: self.labels.clone(),
            ids: self.ids.clone(),
        }
    }

    pub fn select_levels(&self, levels: &[Level]) -> FeatureTable {
        self.select_columns(&self.layout.columns_for(levels))
    }

    pub fn select_rows(&self, idx: &[usize]) -> FeatureTable {
        FeatureTable {
            layout: self.layout.clone(),
            rows: self.rows.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
        }
    }

    pub fn vector(&self, i: usize) -> FeatureVector {
        let row = self.rows.row(i);
        let mut fv = FeatureVector {
            l1: None,
            l2: None,
            l3: Vec::new(),
        };
        for (slot, v) in self.layout.slots.iter().zip(row) {
            match slot.level {
                Level::L1 => fv.l1 = Some(*v),
                Level::L2 => fv.l2.get_or_insert_with(Vec::new).push(*v),
                Level::L3 => fv.l3.push(*v),
            }
        }
        fv
    }
}

fn layout_for(cfg: &FeatureConfig, artifact: &CalibrationArtifact) -> FeatureLayout {
    let mut slots = Vec::new();
    for level in &cfg.levels {
        match level {
            Level::L1 => slots.push(FeatureSlot {
                level: Level::L1,
                name: "semantic_delta".into(),
                layer: None,
            }),
            Level::L2 => {
                let names: &[&str] = match cfg.l2_mode {
                    L2Mode::FiveStatistics => &KlStats::NAMES,
                    L2Mode::MeanOnly => &KlStats::NAMES[..1],
                };
                slots.extend(names.iter().map(|n| FeatureSlot {
                    level: Level::L2,
                    name: (*n).into(),
                    layer: None,
                }));
            }
            Level::L3 => slots.extend(artifact.selected_layers.iter().map(|&l| FeatureSlot {
                level: Level::L3,
                name: format!("lts_{l}"),
                layer: Some(l),
            })),
        }
    }
    FeatureLayout { slots }
}

/// Computes the requested levels for every sample. Missing optional data
/// for a requested level is an error.
pub fn extract_features(
    dataset: &Dataset,
    artifact: &CalibrationArtifact,
    cfg: &FeatureConfig,
) -> Result<FeatureTable> {
    let mut cfg = cfg.clone();
    cfg.levels.sort();
    cfg.levels.dedup();
    if cfg.levels.is_empty() {
        return Err(CrmError::InvalidArgument("no feature levels requested".into()));
    }
    let d = dataset.hidden_dim();
    let wants = |l| cfg.levels.contains(&l);
    if wants(Level::L3) {
        if artifact.hidden_dim != d {
            return Err(CrmError::DimensionMismatch {
                expected: artifact.hidden_dim,
                got: d,
            });
        }
        if let Some(l) = artifact.selected_layers.iter().find(|&&l| l >= dataset.num_layers()) {
            return Err(CrmError::InvalidArgument(format!(
                "artifact layer {l} not present in a {}-layer trace",
                dataset.num_layers()
            )));
        }
    }
    if wants(Level::L1) && dataset.header.sections.embeddings.is_none() {
        return Err(CrmError::MissingSection {
            section: "embeddings",
            level: "L1",
        });
    }
    if wants(Level::L2) && !dataset.header.sections.kl_series {
        return Err(CrmError::MissingSection {
            section: "kl_series",
            level: "L2",
        });
    }

    let layout = layout_for(&cfg, artifact);
    let mut data = Vec::with_capacity(dataset.len() * layout.len());
    for s in &dataset.samples {
        for level in &cfg.levels {
            match level {
                Level::L1 => {
                    let (e0, ec) = s.embeddings.as_ref().ok_or(CrmError::MissingSection {
                        section: "embeddings",
                        level: "L1",
                    })?;
                    let e0: Vec<f64> = e0.iter().map(|&v| v as f64).collect();
                    let ec: Vec<f64> = ec.iter().map(|&v| v as f64).collect();
                    data.push(semantic_delta(&e0, &ec)?);
                }
                Level::L2 => {
                    let kl = s.kl_series.as_ref().ok_or(CrmError::MissingSection {
                        section: "kl_series",
                        level: "L2",
                    })?;
                    let kl: Vec<f64> = kl.iter().map(|&v| v as f64).collect();
                    let st = kl_statistics(&kl, cfg.early_window)?;
                    match cfg.l2_mode {
                        L2Mode::FiveStatistics => data.extend(st.to_array()),
                        L2Mode::MeanOnly => data.push(st.mean),
                    }
                }
                Level::L3 => {
                    for dir in &artifact.directions {
                        data.push(lts_project(
                            s.h0_layer(dir.layer, d),
                            s.hc_layer(dir.layer, d),
                            dir,
                        )?);
                    }
                }
            }
        }
    }
    Ok(FeatureTable {
        rows: Mat::from_vec(dataset.len(), layout.len(), data)?,
        layout,
        labels: dataset.labels(),
        ids: dataset.samples.iter().map(|s| s.sample_id.clone()).collect(),
    })
}
