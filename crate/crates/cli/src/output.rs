use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use speclab::simd::{Metrics, SimConfig, Summary};

/// Written before anything else in every output directory.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub args: Vec<(String, String)>,
    pub seed: u64,
    pub config_sha256: String,
    pub config: SimConfig,
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<(String, String)>, config: &SimConfig) -> Result<Self> {
        let text = config.to_toml()?;
        let mut h = Sha256::new();
        h.update(command.as_bytes());
        for (k, v) in &args {
            h.update(format!("\n{k}={v}").as_bytes());
        }
        h.update(b"\n");
        h.update(text.as_bytes());
        Ok(Self {
            tool: "speclab",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            args,
            seed: config.seed,
            config_sha256: hex::encode(h.finalize()),
            config: config.clone(),
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let text = serde_json::to_string_pretty(self)?;
        fs::write(dir.join("manifest.json"), text + "\n")?;
        Ok(())
    }
}

/// Scalar columns of a run summary.
#[derive(Debug, Serialize)]
pub struct SummaryRow<'a> {
    pub mode: &'a str,
    pub seed: u64,
    pub requests: usize,
    pub finished: usize,
    pub total_tokens: usize,
    pub iterations: usize,
    pub sim_time_ms: f64,
    pub mean_latency_ms: f64,
    pub p50_latency_ms: f64,
    pub p99_latency_ms: f64,
    pub tpot_ms: f64,
    pub throughput_tps: f64,
    pub draft_share: f64,
    pub verify_share: f64,
    pub acceptance_ratio: f64,
    pub rejection_ratio: f64,
    pub layer_work_ratio: f64,
    pub false_prunes: usize,
    pub wasted_draft_tokens: usize,
    pub overlap_iterations: usize,
}

impl<'a> From<&'a Summary> for SummaryRow<'a> {
    fn from(s: &'a Summary) -> Self {
        Self {
            mode: &s.mode,
            seed: s.seed,
            requests: s.requests,
            finished: s.finished,
            total_tokens: s.total_tokens,
            iterations: s.iterations,
            sim_time_ms: s.sim_time_ms,
            mean_latency_ms: s.mean_latency_ms,
            p50_latency_ms: s.p50_latency_ms,
            p99_latency_ms: s.p99_latency_ms,
            tpot_ms: s.tpot_ms,
            throughput_tps: s.throughput_tps,
            draft_share: s.draft_share,
            verify_share: s.verify_share,
            acceptance_ratio: s.acceptance_ratio,
            rejection_ratio: s.rejection_ratio,
            layer_work_ratio: s.layer_work_ratio,
            false_prunes: s.false_prunes,
            wasted_draft_tokens: s.wasted_draft_tokens,
            overlap_iterations: s.overlap_iterations,
        }
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// metrics.jsonl, summary.csv and requests.csv for one run.
pub fn write_run(dir: &Path, metrics: &Metrics) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("metrics.jsonl"), metrics.to_jsonl()?)?;
    write_csv(&dir.join("summary.csv"), [SummaryRow::from(&metrics.summary)])?;
    write_csv(&dir.join("requests.csv"), &metrics.requests)?;
    Ok(())
}
