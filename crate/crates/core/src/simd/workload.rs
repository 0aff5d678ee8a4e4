use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::config::{LenRange, RateSpec, WorkloadConfig};
use crate::error::{invalid, Error, Result};
use crate::toylm::Token;

/// One row of an arrival trace.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub arrival_ms: u64,
    pub input_len: usize,
    pub output_len: usize,
}

/// A request arrival before its prompt is materialized.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arrival {
    pub arrival_ms: f64,
    pub input_len: usize,
    pub output_len: usize,
}

const HEADER: &str = "arrival_ms,input_len,output_len";

/// Parse trace CSV text; the header row is optional and blank lines are skipped.
pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || (i == 0 && line.eq_ignore_ascii_case(HEADER)) {
            continue;
        }
        let parse_err = |reason: String| Error::Parse { line: i + 1, reason };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(parse_err(format!("expected 3 fields, found {}", fields.len())));
        }
        let num = |k: usize| {
            fields[k]
                .parse::<u64>()
                .map_err(|e| parse_err(format!("field {} ({:?}): {e}", k + 1, fields[k])))
        };
        out.push(TraceRecord {
            arrival_ms: num(0)?,
            input_len: num(1)? as usize,
            output_len: num(2)? as usize,
        });
    }
    out.sort_by_key(|r| r.arrival_ms);
    Ok(out)
}

pub fn ingest_trace(path: &Path) -> Result<Vec<TraceRecord>> {
    parse_trace(&std::fs::read_to_string(path)?)
}

pub fn write_trace(records: &[TraceRecord]) -> String {
    let mut s = String::from(HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&format!("{},{},{}\n", r.arrival_ms, r.input_len, r.output_len));
    }
    s
}

impl RateSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            RateSpec::Constant { rate } => *rate >= 0.0,
            RateSpec::Piecewise { segments } => {
                !segments.is_empty()
                    && segments.iter().all(|s| s.rate >= 0.0 && s.duration_s > 0.0)
            }
            RateSpec::Sinusoidal {
                mean,
                amplitude,
                period_s,
            } => *mean >= 0.0 && *amplitude >= 0.0 && *amplitude <= *mean && *period_s > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("invalid rate spec {self:?}")))
        }
    }

    /// Rate in requests per second at time `t` seconds.
    pub fn rate_at(&self, t: f64) -> f64 {
        match self {
            RateSpec::Constant { rate } => *rate,
            RateSpec::Piecewise { segments } => {
                let cycle: f64 = segments.iter().map(|s| s.duration_s).sum();
                let mut x = t.rem_euclid(cycle);
                for s in segments {
                    if x < s.duration_s {
                        return s.rate;
                    }
                    x -= s.duration_s;
                }
                segments.last().map_or(0.0, |s| s.rate)
            }
            RateSpec::Sinusoidal {
                mean,
                amplitude,
                period_s,
            } => mean + amplitude * (2.0 * std::f64::consts::PI * t / period_s).sin(),
        }
    }

    pub fn peak(&self) -> f64 {
        match self {
            RateSpec::Constant { rate } => *rate,
            RateSpec::Piecewise { segments } => segments.iter().map(|s| s.rate).fold(0.0, f64::max),
            RateSpec::Sinusoidal { mean, amplitude, .. } => mean + amplitude,
        }
    }
}

fn draw_len(rng: &mut ChaCha8Rng, r: LenRange) -> usize {
    rng.random_range(r.min..=r.max)
}

/// Poisson arrivals under `rate` over `duration_s`, by thinning.
pub fn synth_workload(
    rate: &RateSpec,
    duration_s: f64,
    input_len: LenRange,
    output_len: LenRange,
    seed: u64,
) -> Result<Vec<Arrival>> {
    rate.validate()?;
    let peak = rate.peak();
    let mut out = Vec::new();
    if peak <= 0.0 || duration_s <= 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gap = Exp::new(peak).map_err(|e| invalid(e.to_string()))?;
    let mut t = 0.0;
    loop {
        t += gap.sample(&mut rng);
        if t >= duration_s {
            break;
        }
        let keep = rng.random::<f64>() * peak < rate.rate_at(t);
        let arrival = Arrival {
            arrival_ms: t * 1000.0,
            input_len: draw_len(&mut rng, input_len),
            output_len: draw_len(&mut rng, output_len),
        };
        if keep {
            out.push(arrival);
        }
    }
    Ok(out)
}

/// Arrivals for a workload configuration.
pub fn arrivals_for(workload: &WorkloadConfig, seed: u64) -> Result<Vec<Arrival>> {
    match workload {
        WorkloadConfig::Trace { path } => Ok(ingest_trace(path)?
            .into_iter()
            .map(|r| Arrival {
                arrival_ms: r.arrival_ms as f64,
                input_len: r.input_len,
                output_len: r.output_len,
            })
            .collect()),
        WorkloadConfig::Synthetic {
            rate,
            duration_s,
            input_len,
            output_len,
        } => synth_workload(rate, *duration_s, *input_len, *output_len, seed),
        WorkloadConfig::Closed {
            requests,
            input_len,
            output_len,
        } => Ok(vec![
            Arrival {
                arrival_ms: 0.0,
                input_len: *input_len,
                output_len: *output_len,
            };
            *requests
        ]),
    }
}

/// Deterministic prompt for request `index`; never contains `eos`.
pub fn synth_prompt(seed: u64, index: u64, len: usize, eos: Token) -> Vec<Token> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    (0..len.max(1)).map(|_| rng.random_range(0..eos)).collect()
}
