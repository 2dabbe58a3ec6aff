use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Deserialize;

use crate::cli::{EvalSet, L2ModeArg, LayerScoreArg};

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_N_CAL: usize = 100;
pub const DEFAULT_THRESHOLD: f64 = 0.01;

/// Optional defaults read from `--config`. Every key mirrors a flag.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub trace: Option<PathBuf>,
    pub artifact: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub folds: Option<usize>,
    pub n_cal: Option<usize>,
    pub levels: Option<String>,
    pub threshold: Option<f64>,
    pub direction: Option<String>,
    pub layer_score: Option<LayerScoreArg>,
    pub l2_mode: Option<L2ModeArg>,
    pub controls: Option<String>,
    pub n_boot: Option<usize>,
    pub eval_set: Option<EvalSet>,
    pub bind: Option<String>,
    pub extractor_endpoint: Option<String>,
    pub extractor_timeout_secs: Option<f64>,
    pub log: Option<PathBuf>,
    pub z_threshold: Option<f64>,
    pub display_threshold: Option<f64>,
    pub retain_text: Option<bool>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Flag (or its environment variable) first, then the config file.
pub fn pick<T>(flag: Option<T>, file: &Option<T>) -> Option<T>
where
    T: Clone,
{
    flag.or_else(|| file.clone())
}

pub fn require<T>(value: Option<T>, flag: &str) -> anyhow::Result<T> {
    value.ok_or_else(|| {
        let env = format!("CRM_{}", flag.trim_start_matches('-').replace('-', "_").to_uppercase());
        anyhow::anyhow!("missing {flag} (or {env}, or `{}` in the config file)", flag.trim_start_matches('-').replace('-', "_"))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win_over_file() {
        let file = FileConfig {
            seed: Some(7),
            ..Default::default()
        };
        assert_eq!(pick(Some(1), &file.seed), Some(1));
        assert_eq!(pick(None, &file.seed), Some(7));
        assert_eq!(pick::<u64>(None, &None), None);
        let e = require::<u64>(None, "--n-cal").unwrap_err().to_string();
        assert!(e.contains("CRM_N_CAL") && e.contains("`n_cal`"), "{e}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<FileConfig>(r#"{"sed": 1}"#).is_err());
        let c: FileConfig = serde_json::from_str(r#"{"eval_set": "held-out", "folds": 3}"#).unwrap();
        assert_eq!((c.eval_set, c.folds), (Some(EvalSet::HeldOut), Some(3)));
    }
}
