#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use crm_core::features::{CalibrationArtifact, DirectionKind, LayerDirection, LayerScore};
use crm_service::log::AuditLog;
use crm_service::{AppState, Server, ServiceConfig};
use tokio::sync::oneshot;

pub const LAYERS: usize = 4;
pub const DIM: usize = 3;

/// Four layers, directions along the coordinate axes, mu = 0 and sigma = 1
/// except layer 3 (mu 1, sigma 2).
pub fn artifact() -> CalibrationArtifact {
    let directions = (0..LAYERS)
        .map(|l| {
            let mut v = vec![0.0; DIM];
            v[l % DIM] = 1.0;
            LayerDirection {
                layer: l,
                vector: v,
                kind: DirectionKind::Pc1,
                explained_variance_ratio: Some(0.5),
            }
        })
        .collect();
    CalibrationArtifact {
        model_name: "stub-model".into(),
        num_layers: LAYERS,
        hidden_dim: DIM,
        selected_layers: (0..LAYERS).collect(),
        layer_scores: vec![0.25; LAYERS],
        layer_score: LayerScore::TotalVarianceShare,
        variance_ratio_threshold: 0.01,
        directions,
        lts_mean: vec![0.0, 0.0, 0.0, 1.0],
        lts_std: vec![1.0, 1.0, 1.0, 2.0],
        seed: 42,
        n_cal: 100,
        calibration_ids: vec![],
        fingerprint: String::new(),
    }
    .seal()
}

pub fn write_artifact(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("artifact.json");
    std::fs::write(&p, artifact().to_json().unwrap()).unwrap();
    p
}

pub struct Running {
    pub base: String,
    pub state: Arc<AppState>,
    stop: Option<oneshot::Sender<()>>,
    handle: Option<tokio::task::JoinHandle<()>>,
}

impl Running {
    pub async fn shutdown(mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(h) = self.handle.take() {
            h.await.unwrap();
        }
    }
}

pub async fn start(cfg: ServiceConfig) -> Running {
    let server = Server::bind(&ServiceConfig {
        bind: "127.0.0.1:0".into(),
        ..cfg
    })
    .await
    .unwrap();
    launch(server)
}

pub async fn start_state(state: AppState) -> Running {
    launch(Server::bind_state("127.0.0.1:0", Arc::new(state)).await.unwrap())
}

fn launch(server: Server) -> Running {
    let base = format!("http://{}", server.local_addr().unwrap());
    let state = server.state();
    let (tx, rx) = oneshot::channel();
    let handle = tokio::spawn(async move {
        server
            .run(async {
                let _ = rx.await;
            })
            .await
            .unwrap();
    });
    Running {
        base,
        state,
        stop: Some(tx),
        handle: Some(handle),
    }
}

pub fn config(dir: &Path) -> ServiceConfig {
    ServiceConfig {
        artifact: Some(write_artifact(dir)),
        log: dir.join("audit.jsonl"),
        ..ServiceConfig::default()
    }
}

pub fn state_without_artifact(dir: &Path) -> AppState {
    let cfg = ServiceConfig {
        log: dir.join("audit.jsonl"),
        ..ServiceConfig::default()
    };
    AppState::with_artifact(None, &cfg, AuditLog::open(&cfg.log).unwrap())
}
