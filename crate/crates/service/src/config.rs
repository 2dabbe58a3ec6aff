use std::path::{Path, PathBuf};
use std::time::Duration;

use crm_core::audit::Thresholds;
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;

pub const DEFAULT_BIND: &str = "127.0.0.1:8080";
pub const DEFAULT_EXTRACTOR_TIMEOUT_SECS: f64 = 30.0;

/// Server configuration. Loaded from a JSON file; every field has a default
/// except the artifact path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub artifact: Option<PathBuf>,
    pub log: PathBuf,
    pub bind: String,
    pub extractor_endpoint: Option<String>,
    pub extractor_timeout_secs: f64,
    pub z_threshold: f64,
    pub display_threshold: f64,
    /// Store raw context/query text in the audit log.
    pub retain_text: bool,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        let th = Thresholds::default();
        ServiceConfig {
            artifact: None,
            log: PathBuf::from("audit-log.jsonl"),
            bind: DEFAULT_BIND.into(),
            extractor_endpoint: None,
            extractor_timeout_secs: DEFAULT_EXTRACTOR_TIMEOUT_SECS,
            z_threshold: th.z_threshold,
            display_threshold: th.display_threshold,
            retain_text: false,
        }
    }
}

impl ServiceConfig {
    pub fn from_file(path: &Path) -> Result<Self, ServiceError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))
    }

    pub fn thresholds(&self) -> Thresholds {
        Thresholds {
            z_threshold: self.z_threshold,
            display_threshold: self.display_threshold,
        }
    }

    pub fn extractor_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.extractor_timeout_secs)
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        if !(self.z_threshold > 0.0) || !(self.display_threshold >= 0.0) {
            return Err(ServiceError::Config(
                "z_threshold must be positive and display_threshold nonnegative".into(),
            ));
        }
        if !(self.extractor_timeout_secs > 0.0) || !self.extractor_timeout_secs.is_finite() {
            return Err(ServiceError::Config("extractor timeout must be a positive number of seconds".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_uses_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"artifact": "a.json", "z_threshold": 3}"#).unwrap();
        let c = ServiceConfig::from_file(&p).unwrap();
        assert_eq!(c.artifact, Some(PathBuf::from("a.json")));
        assert_eq!(c.z_threshold, 3.0);
        assert_eq!(c.display_threshold, 1.0);
        assert_eq!(c.extractor_timeout(), Duration::from_secs(30));
        std::fs::write(&p, r#"{"typo": 1}"#).unwrap();
        assert!(ServiceConfig::from_file(&p).is_err());
    }
}
