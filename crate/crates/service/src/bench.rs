//! Load generator for a running audit server.

use std::time::Instant;

use crm_core::audit::{AuditRecord, AuditRequest};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::app::ServerStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchPayload {
    /// Trajectories drawn around the calibration mean.
    Lts,
    /// Random displacements over every model layer.
    Displacements,
    /// Randomized context/query text; needs an extractor behind the server.
    Text,
}

impl std::str::FromStr for BenchPayload {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "lts" => Ok(BenchPayload::Lts),
            "displacements" => Ok(BenchPayload::Displacements),
            "text" => Ok(BenchPayload::Text),
            _ => Err(format!("payload must be lts, displacements or text, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub requests: usize,
    pub errors: usize,
    pub throughput_rps: f64,
    pub latency_mean_ms: f64,
    pub latency_p50_ms: f64,
    pub latency_p95_ms: f64,
    pub latency_p99_ms: f64,
    pub anomaly_rate: f64,
}

impl BenchReport {
    pub fn to_table(&self) -> crm_core::detect::Table {
        let mut t = crm_core::detect::Table::new(
            format!("Audit benchmark ({} requests, {} errors)", self.requests, self.errors),
            &["Metric", "Value"],
        );
        for (k, v) in [
            ("Throughput", format!("{:.1} req/s", self.throughput_rps)),
            ("Latency (mean)", format!("{:.2} ms", self.latency_mean_ms)),
            ("Latency (p50)", format!("{:.2} ms", self.latency_p50_ms)),
            ("Latency (p95)", format!("{:.2} ms", self.latency_p95_ms)),
            ("Latency (p99)", format!("{:.2} ms", self.latency_p99_ms)),
            ("Anomaly rate", format!("{:.1}%", 100.0 * self.anomaly_rate)),
        ] {
            t.push(vec![k.into(), v]);
        }
        t
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("request count must be at least 1")]
    NoRequests,
    #[error("cannot reach {0}: {1}")]
    Connect(String, String),
    #[error("server has no calibration artifact loaded")]
    NoArtifact,
    #[error("every request failed; last error: {0}")]
    AllFailed(String),
}

const WORDS: &[&str] = &[
    "river", "ledger", "orbit", "signal", "harbor", "matrix", "lantern", "quartz", "meadow", "cipher",
    "engine", "summit", "archive", "vector", "canyon", "thread",
];

fn sentence(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

fn make_request(kind: BenchPayload, stats: &ServerStats, rng: &mut ChaCha8Rng) -> Result<AuditRequest, BenchError> {
    let cal = stats.calibration.as_ref().ok_or(BenchError::NoArtifact)?;
    let mut g = || -> f64 { StandardNormal.sample(&mut *rng) };
    Ok(match kind {
        BenchPayload::Lts => AuditRequest::from_lts(
            cal.lts_mean.iter().zip(&cal.lts_std).map(|(m, s)| m + s * g()).collect(),
        ),
        BenchPayload::Displacements => AuditRequest {
            displacements: Some(
                (0..stats.num_layers)
                    .map(|_| (0..stats.hidden_dim).map(|_| g()).collect())
                    .collect(),
            ),
            ..Default::default()
        },
        BenchPayload::Text => AuditRequest {
            context: Some(sentence(rng, 48)),
            query: Some(sentence(rng, 8)),
            ..Default::default()
        },
    })
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Issues `n` seeded requests one after another and measures round-trip
/// latency on the client side.
pub async fn run_bench(endpoint: &str, n: usize, kind: BenchPayload, seed: u64) -> Result<BenchReport, BenchError> {
    if n == 0 {
        return Err(BenchError::NoRequests);
    }
    let base = endpoint.trim_end_matches('/').to_string();
    let http = reqwest::Client::new();
    let stats: ServerStats = http
        .get(format!("{base}/stats"))
        .send()
        .await
        .map_err(|e| BenchError::Connect(base.clone(), e.to_string()))?
        .json()
        .await
        .map_err(|e| BenchError::Connect(base.clone(), e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let requests: Vec<AuditRequest> = (0..n).map(|_| make_request(kind, &stats, &mut rng)).collect::<Result<_, _>>()?;

    let url = format!("{base}/audit");
    let mut latencies = Vec::with_capacity(n);
    let mut flagged = 0usize;
    let mut errors = 0usize;
    let mut last_error = String::new();
    let t0 = Instant::now();
    for req in &requests {
        let start = Instant::now();
        let outcome = match http.post(&url).json(req).send().await {
            Ok(r) if r.status().is_success() => r.json::<AuditRecord>().await.map_err(|e| e.to_string()),
            Ok(r) => Err(format!("HTTP {}", r.status())),
            Err(e) => Err(e.to_string()),
        };
        let ms = start.elapsed().as_secs_f64() * 1e3;
        match outcome {
            Ok(rec) => {
                latencies.push(ms);
                flagged += rec.anomaly_flag as usize;
            }
            Err(e) => {
                errors += 1;
                last_error = e;
            }
        }
    }
    let wall = t0.elapsed().as_secs_f64();
    if latencies.is_empty() {
        return Err(BenchError::AllFailed(last_error));
    }
    let ok = latencies.len();
    let mean = latencies.iter().sum::<f64>() / ok as f64;
    latencies.sort_by(f64::total_cmp);
    Ok(BenchReport {
        requests: n,
        errors,
        throughput_rps: ok as f64 / wall,
        latency_mean_ms: mean,
        latency_p50_ms: percentile(&latencies, 0.50),
        latency_p95_ms: percentile(&latencies, 0.95),
        latency_p99_ms: percentile(&latencies, 0.99),
        anomaly_rate: flagged as f64 / ok as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn payload_parsing_and_table_shape() {
        assert_eq!("lts".parse::<BenchPayload>().unwrap(), BenchPayload::Lts);
        assert!("xml".parse::<BenchPayload>().is_err());
        let r = BenchReport {
            requests: 10,
            errors: 0,
            throughput_rps: 100.0,
            latency_mean_ms: 1.0,
            latency_p50_ms: 1.0,
            latency_p95_ms: 2.0,
            latency_p99_ms: 3.0,
            anomaly_rate: 0.25,
        };
        let text = r.to_table().to_string();
        assert_eq!(text.lines().count(), 2 + 1 + 6);
        assert!(text.contains("Latency (p99)") && text.contains("25.0%"));
    }

    #[test]
    fn percentiles_interpolate() {
        let v: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert_eq!(percentile(&v, 0.5), 50.5);
        assert!((percentile(&v, 0.99) - 99.01).abs() < 1e-9);
    }
}
