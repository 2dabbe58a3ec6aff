//! HTTP audit server: scores LTS trajectories against a calibration
//! artifact and keeps a persistent audit log.
//!
//! Endpoints: `POST /audit`, `GET /history?limit&offset`, `GET /stats`,
//! `GET /health`.

pub mod app;
pub mod bench;
pub mod config;
pub mod error;
pub mod extractor;
pub mod log;

pub use app::{router, shutdown_signal, AppState, Server, ServerStats};
pub use config::ServiceConfig;
pub use error::{ApiError, ServiceError};
