//! Client for the model-side `/extract` endpoint.

use std::time::Duration;

use serde::{Deserialize, Serialize};

/// Request body of `POST /extract`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractRequest {
    pub context: String,
    pub query: String,
}

/// Response body of `POST /extract`: one displacement row per model layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractResponse {
    pub displacements: Vec<Vec<f64>>,
    pub model_name: String,
}

#[derive(Debug, thiserror::Error)]
pub enum ExtractError {
    #[error("upstream timeout after {0:?}")]
    Timeout(Duration),
    #[error("extractor busy")]
    Busy,
    #[error("extractor unreachable: {0}")]
    Unreachable(String),
    #[error("extractor returned {status}: {body}")]
    Upstream { status: u16, body: String },
    #[error("malformed extractor response: {0}")]
    Malformed(String),
}

#[derive(Clone)]
pub struct ExtractorClient {
    http: reqwest::Client,
    url: String,
    timeout: Duration,
}

impl ExtractorClient {
    pub fn new(endpoint: &str, timeout: Duration) -> Self {
        let base = endpoint.trim_end_matches('/');
        let url = if base.ends_with("/extract") {
            base.to_string()
        } else {
            format!("{base}/extract")
        };
        ExtractorClient {
            http: reqwest::Client::new(),
            url,
            timeout,
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub async fn extract(&self, req: &ExtractRequest) -> Result<ExtractResponse, ExtractError> {
        let send = self.http.post(&self.url).json(req).send();
        let resp = match tokio::time::timeout(self.timeout, send).await {
            Err(_) => return Err(ExtractError::Timeout(self.timeout)),
            Ok(Err(e)) => return Err(ExtractError::Unreachable(e.to_string())),
            Ok(Ok(r)) => r,
        };
        let status = resp.status();
        if status.as_u16() == 429 {
            return Err(ExtractError::Busy);
        }
        let body = match tokio::time::timeout(self.timeout, resp.bytes()).await {
            Err(_) => return Err(ExtractError::Timeout(self.timeout)),
            Ok(Err(e)) => return Err(ExtractError::Unreachable(e.to_string())),
            Ok(Ok(b)) => b,
        };
        if !status.is_success() {
            return Err(ExtractError::Upstream {
                status: status.as_u16(),
                body: String::from_utf8_lossy(&body).chars().take(200).collect(),
            });
        }
        serde_json::from_slice(&body).map_err(|e| ExtractError::Malformed(e.to_string()))
    }
}
