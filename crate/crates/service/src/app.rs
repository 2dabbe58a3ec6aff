use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use crm_core::audit::{score_anomaly, trajectory_for, AuditRecord, AuditRequest, Payload, PayloadKind, Thresholds};
use crm_core::features::CalibrationArtifact;
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tracing::{error, info};

use crate::config::ServiceConfig;
use crate::error::{ApiError, ServiceError};
use crate::extractor::{ExtractError, ExtractRequest, ExtractorClient};
use crate::log::AuditLog;

pub const MAX_HISTORY_PAGE: usize = 1000;
const DEFAULT_HISTORY_PAGE: usize = 50;

pub struct AppState {
    artifact: Option<Arc<CalibrationArtifact>>,
    thresholds: Thresholds,
    retain_text: bool,
    extractor: Option<ExtractorClient>,
    log: Mutex<AuditLog>,
    started: Instant,
}

impl AppState {
    /// Loads the artifact and replays the audit log. A configured but
    /// unreadable artifact is a startup failure; no artifact at all leaves
    /// the server up in a degraded state.
    pub fn open(cfg: &ServiceConfig) -> Result<Self, ServiceError> {
        cfg.validate()?;
        let artifact = match &cfg.artifact {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| ServiceError::Artifact(format!("{}: {e}", path.display())))?;
                let a = CalibrationArtifact::from_json(&text)
                    .map_err(|e| ServiceError::Artifact(format!("{}: {e}", path.display())))?;
                Some(Arc::new(a))
            }
            None => None,
        };
        Ok(Self::with_artifact(artifact, cfg, AuditLog::open(&cfg.log)?))
    }

    pub fn with_artifact(artifact: Option<Arc<CalibrationArtifact>>, cfg: &ServiceConfig, log: AuditLog) -> Self {
        AppState {
            artifact,
            thresholds: cfg.thresholds(),
            retain_text: cfg.retain_text,
            extractor: cfg
                .extractor_endpoint
                .as_deref()
                .map(|e| ExtractorClient::new(e, cfg.extractor_timeout())),
            log: Mutex::new(log),
            started: Instant::now(),
        }
    }

    pub fn artifact(&self) -> Option<&CalibrationArtifact> {
        self.artifact.as_deref()
    }

    pub fn flush(&self) -> std::io::Result<()> {
        self.log.lock().expect("log lock poisoned").sync()
    }
}

/// Calibration statistics exposed so clients can draw the normal band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub layers: Vec<usize>,
    pub lts_mean: Vec<f64>,
    pub lts_std: Vec<f64>,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerStats {
    pub model_name: Option<String>,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub trajectory_len: usize,
    pub total_requests: u64,
    pub anomaly_count: u64,
    pub uptime_secs: f64,
    pub z_threshold: f64,
    pub display_threshold: f64,
    pub calibration: Option<CalibrationSummary>,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/audit", post(audit))
        .route("/history", get(history))
        .route("/stats", get(stats))
        .route("/health", get(health))
        .with_state(state)
}

fn extract_error(e: ExtractError) -> ApiError {
    match e {
        ExtractError::Timeout(d) => ApiError::new(
            StatusCode::GATEWAY_TIMEOUT,
            format!("upstream timeout (deadline {:.1} s)", d.as_secs_f64()),
        ),
        ExtractError::Busy | ExtractError::Unreachable(_) => {
            ApiError::unavailable(format!("extractor unavailable: {e}"))
        }
        other => ApiError::new(StatusCode::BAD_GATEWAY, other.to_string()),
    }
}

async fn audit(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<AuditRecord>, ApiError> {
    let start = Instant::now();
    let req: AuditRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("malformed request: {e}")))?;
    let payload = req.payload()?;
    let artifact = state
        .artifact
        .clone()
        .ok_or_else(|| ApiError::unavailable("no calibration artifact loaded"))?;

    let (kind, trajectory) = match payload {
        Payload::Text { context, query } => {
            let client = state
                .extractor
                .as_ref()
                .ok_or_else(|| ApiError::unavailable("extractor unavailable: no endpoint configured"))?;
            let resp = client
                .extract(&ExtractRequest {
                    context: context.to_string(),
                    query: query.to_string(),
                })
                .await
                .map_err(extract_error)?;
            if resp.model_name != artifact.model_name {
                return Err(ApiError::disagreement(format!(
                    "extractor model {:?} but artifact calibrated on {:?}",
                    resp.model_name, artifact.model_name
                )));
            }
            let t = trajectory_for(&Payload::Displacements(&resp.displacements), &artifact)?;
            (PayloadKind::Text, t)
        }
        Payload::Displacements(_) => (PayloadKind::Displacements, trajectory_for(&payload, &artifact)?),
        Payload::Lts(_) => (PayloadKind::Lts, trajectory_for(&payload, &artifact)?),
    };
    let score = score_anomaly(&trajectory, &artifact, &state.thresholds)?;
    let (context, query) = match (&req, state.retain_text) {
        (AuditRequest { context, query, .. }, true) => (context.clone(), query.clone()),
        _ => (None, None),
    };
    let record = AuditRecord {
        record_id: 0,
        timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Micros, true),
        request_digest: req.digest(),
        payload: kind,
        context,
        query,
        layers: artifact.selected_layers.clone(),
        lts_trajectory: trajectory,
        anomaly_score: score.score,
        anomaly_flag: score.flag,
        flagged_layers: score.flagged_layers,
        excluded_layers: score.excluded_layers,
        latency_ms: (start.elapsed().as_secs_f64() * 1e3).max(1e-6),
    };
    let stored = {
        let mut log = state.log.lock().expect("log lock poisoned");
        log.append(record)
    };
    match stored {
        Ok(r) => Ok(Json(r)),
        Err(e) => {
            error!("audit log append failed: {e}");
            Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("audit log write failed: {e}")))
        }
    }
}

#[derive(Debug, Deserialize)]
struct Page {
    limit: Option<usize>,
    offset: Option<usize>,
}

async fn history(State(state): State<Arc<AppState>>, Query(page): Query<Page>) -> Json<Vec<AuditRecord>> {
    let limit = page.limit.unwrap_or(DEFAULT_HISTORY_PAGE).min(MAX_HISTORY_PAGE);
    let log = state.log.lock().expect("log lock poisoned");
    Json(log.page(limit, page.offset.unwrap_or(0)))
}

pub fn snapshot(state: &AppState) -> ServerStats {
    let (total_requests, anomaly_count) = {
        let log = state.log.lock().expect("log lock poisoned");
        (log.len() as u64, log.anomalies())
    };
    let a = state.artifact.as_deref();
    ServerStats {
        model_name: a.map(|a| a.model_name.clone()),
        num_layers: a.map_or(0, |a| a.num_layers),
        hidden_dim: a.map_or(0, |a| a.hidden_dim),
        trajectory_len: a.map_or(0, |a| a.trajectory_len()),
        total_requests,
        anomaly_count,
        uptime_secs: state.started.elapsed().as_secs_f64(),
        z_threshold: state.thresholds.z_threshold,
        display_threshold: state.thresholds.display_threshold,
        calibration: a.map(|a| CalibrationSummary {
            layers: a.selected_layers.clone(),
            lts_mean: a.lts_mean.clone(),
            lts_std: a.lts_std.clone(),
            fingerprint: a.fingerprint.clone(),
        }),
    }
}

async fn stats(State(state): State<Arc<AppState>>) -> Json<ServerStats> {
    Json(snapshot(&state))
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    if state.artifact.is_some() {
        (StatusCode::OK, Json(serde_json::json!({ "status": "ok" }))).into_response()
    } else {
        (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(serde_json::json!({ "status": "degraded", "reason": "no calibration artifact loaded" })),
        )
            .into_response()
    }
}

/// Bound server; `run` blocks until `shutdown` resolves, then syncs the log.
pub struct Server {
    listener: TcpListener,
    state: Arc<AppState>,
}

impl Server {
    pub async fn bind(cfg: &ServiceConfig) -> Result<Self, ServiceError> {
        let state = Arc::new(AppState::open(cfg)?);
        Self::bind_state(&cfg.bind, state).await
    }

    pub async fn bind_state(addr: &str, state: Arc<AppState>) -> Result<Self, ServiceError> {
        let listener = TcpListener::bind(addr)
            .await
            .map_err(|e| ServiceError::Config(format!("cannot bind {addr}: {e}")))?;
        Ok(Server { listener, state })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub fn state(&self) -> Arc<AppState> {
        self.state.clone()
    }

    pub async fn run<F>(self, shutdown: F) -> Result<(), ServiceError>
    where
        F: std::future::Future<Output = ()> + Send + 'static,
    {
        if let Ok(addr) = self.listener.local_addr() {
            info!("audit service listening on {addr}");
        }
        axum::serve(self.listener, router(self.state.clone()))
            .with_graceful_shutdown(shutdown)
            .await?;
        self.state.flush()?;
        info!("audit log flushed");
        Ok(())
    }
}

/// Resolves on Ctrl-C or SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}
