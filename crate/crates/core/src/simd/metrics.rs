use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Whole-run figures. Shares are fractions of summed iteration latency.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mode: String,
    pub seed: u64,
    pub requests: usize,
    pub finished: usize,
    pub total_tokens: usize,
    pub iterations: usize,
    pub sim_time_ms: f64,
    pub busy_ms: f64,
    pub mean_latency_ms: f64,
    pub p50_latency_ms: f64,
    pub p99_latency_ms: f64,
    /// Mean over requests of latency divided by tokens produced.
    pub tpot_ms: f64,
    pub throughput_tps: f64,
    pub draft_ms: f64,
    pub verify_ms: f64,
    pub prune_ms: f64,
    pub draft_share: f64,
    pub verify_share: f64,
    pub drafted_tokens: usize,
    pub accepted_tokens: usize,
    pub acceptance_ratio: f64,
    pub rejection_ratio: f64,
    /// Pruned tokens by the layer whose test removed them.
    pub exit_counts: BTreeMap<usize, u64>,
    pub spec_length_hist: BTreeMap<usize, u64>,
    pub batch_hist: BTreeMap<usize, u64>,
    pub wasted_draft_tokens: usize,
    pub false_prunes: usize,
    /// Row-layers actually verified.
    pub verify_layer_work: f64,
    /// Row-layers full verification of the same rows would have taken.
    pub verify_layer_work_full: f64,
    pub layer_work_ratio: f64,
    pub overlap_iterations: usize,
    /// Present when the oracle check ran.
    pub oracle_mismatches: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub index: usize,
    pub start_ms: f64,
    pub latency_ms: f64,
    pub batch: usize,
    pub spec_lengths: Vec<usize>,
    pub draft_ms: f64,
    pub verify_ms: f64,
    pub prune_ms: f64,
    pub overlap: bool,
    pub chunk_size: usize,
    pub draft_fraction: f64,
    pub committed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub id: u64,
    pub arrival_ms: f64,
    pub finish_ms: f64,
    pub tokens: usize,
}

impl RequestRecord {
    pub fn latency_ms(&self) -> f64 {
        self.finish_ms - self.arrival_ms
    }
}

/// A run's output.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Metrics {
    pub summary: Summary,
    pub iterations: Vec<IterationRecord>,
    pub requests: Vec<RequestRecord>,
    /// Committed outputs by request id.
    pub outputs: BTreeMap<u64, Vec<u32>>,
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Line<'a> {
    Summary(&'a Summary),
    Iteration(&'a IterationRecord),
}

impl Metrics {
    /// Summary line first, then one line per recorded iteration.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        let enc = |l: Line<'_>| serde_json::to_string(&l).map_err(|e| Error::Config(e.to_string()));
        out.push_str(&enc(Line::Summary(&self.summary))?);
        out.push('\n');
        for it in &self.iterations {
            out.push_str(&enc(Line::Iteration(it))?);
            out.push('\n');
        }
        Ok(out)
    }
}

pub(crate) fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_has_summary_first() {
        let mut m = Metrics::default();
        m.summary.mode = "VSD".into();
        m.iterations.push(IterationRecord {
            index: 0,
            start_ms: 0.0,
            latency_ms: 1.5,
            batch: 2,
            spec_lengths: vec![4, 4],
            draft_ms: 0.5,
            verify_ms: 1.0,
            prune_ms: 0.0,
            overlap: false,
            chunk_size: 4,
            draft_fraction: 1.0,
            committed: 3,
        });
        let text = m.to_jsonl().unwrap();
        let lines: Vec<serde_json::Value> =
            text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0]["type"], "summary");
        assert_eq!(lines[1]["type"], "iteration");
        assert_eq!(lines[1]["batch"], 2);
    }

    #[test]
    fn percentiles() {
        assert_eq!(percentile(&[], 0.5), 0.0);
        assert_eq!(percentile(&[1.0, 2.0, 3.0], 0.5), 2.0);
        assert_eq!(percentile(&[1.0, 2.0, 3.0], 1.0), 3.0);
    }
}
