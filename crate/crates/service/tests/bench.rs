mod common;

use common::*;
use crm_service::bench::{run_bench, BenchError, BenchPayload};

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn bench_reports_six_metrics_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let srv = start(config(dir.path())).await;

    let a = run_bench(&srv.base, 100, BenchPayload::Lts, 7).await.unwrap();
    assert_eq!((a.requests, a.errors), (100, 0));
    assert!(a.throughput_rps > 0.0);
    assert!(a.latency_p50_ms <= a.latency_p95_ms && a.latency_p95_ms <= a.latency_p99_ms);
    let table = a.to_table().to_string();
    for metric in ["Throughput", "Latency (mean)", "Latency (p50)", "Latency (p95)", "Latency (p99)", "Anomaly rate"] {
        assert!(table.contains(metric), "{metric} missing from\n{table}");
    }

    let b = run_bench(&srv.base, 100, BenchPayload::Lts, 7).await.unwrap();
    assert_eq!(a.anomaly_rate, b.anomaly_rate);
    let c = run_bench(&srv.base, 20, BenchPayload::Displacements, 7).await.unwrap();
    assert_eq!(c.errors, 0);

    assert!(matches!(run_bench(&srv.base, 0, BenchPayload::Lts, 7).await, Err(BenchError::NoRequests)));
    srv.shutdown().await;

    let dead = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        format!("http://{}", l.local_addr().unwrap())
    };
    assert!(matches!(run_bench(&dead, 5, BenchPayload::Lts, 7).await, Err(BenchError::Connect(..))));
}
