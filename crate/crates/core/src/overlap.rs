//! Chunked draft/verify overlap.
//!
//! The frontier is split into chunks of `s_c` tokens. While the target side
//! verifies chunk `i` on `1 - r` of the SMs, the draft side prepares chunk
//! `i + 1` on `r`. Drafting runs at most one chunk ahead: chunk `i + 1` may
//! start once chunk `i` has entered verification. A chunk that ends the
//! round (mismatch or prune) triggers a reset that discards whatever was
//! drafted past it.

use serde::{Deserialize, Serialize};

use crate::error::{illegal, invalid, Result};
use crate::latmodel::{LatencyModels, SmSplit, StageKind};
use crate::sdcore::{Frontier, VerifyOutcome};
use crate::toylm::Token;

/// Draft SM fractions searched by the planner.
pub const DEFAULT_R_GRID: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapPlan {
    pub enabled: bool,
    pub chunk_size: usize,
    pub draft_fraction: f64,
    pub predicted_makespan: f64,
    pub serial_makespan: f64,
}

impl OverlapPlan {
    pub fn split(&self) -> SmSplit {
        if self.enabled {
            SmSplit::Split(self.draft_fraction)
        } else {
            SmSplit::Serial
        }
    }
}

/// Candidate chunk sizes for a frontier of `s` tokens, ascending.
///
/// Each size is `ceil(s / n)` for some chunk count `n >= 2`, so the last
/// chunk is never shorter than needed to cover `s`.
pub fn chunk_sizes(s: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (2..=s).map(|n| s.div_ceil(n)).collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Chunk lengths covering `s` tokens with chunks of `c`; the tail may be short.
pub fn chunk_lengths(s: usize, c: usize) -> Vec<usize> {
    let mut out = vec![c; s / c];
    if !s.is_multiple_of(c) {
        out.push(s % c);
    }
    out
}

/// Draft and verify durations of one chunk.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChunkCost {
    pub draft_ms: f64,
    pub verify_ms: f64,
}

/// Per-chunk costs when every request in a batch of `b` contributes a full
/// chunk.
pub fn uniform_chunk_costs(
    s: usize,
    chunk: usize,
    b: f64,
    r: f64,
    models: &LatencyModels,
) -> Result<Vec<ChunkCost>> {
    let split = SmSplit::Split(r);
    chunk_lengths(s, chunk)
        .into_iter()
        .map(|len| {
            Ok(ChunkCost {
                draft_ms: models.latency(StageKind::Draft, b, len as f64, split)?,
                verify_ms: models.latency(StageKind::Target, b, len as f64, split)?,
            })
        })
        .collect()
}

/// Iteration time when stages run one after another on the whole GPU.
pub fn serial_makespan(s: usize, b: f64, models: &LatencyModels) -> Result<f64> {
    let s = s as f64;
    Ok(models.latency(StageKind::Draft, b, s, SmSplit::Serial)?
        + models.latency(StageKind::Target, b, s, SmSplit::Serial)?)
}

/// Makespan of the pipeline when every chunk is accepted.
pub fn pipeline_makespan(costs: &[ChunkCost]) -> f64 {
    build_timeline(costs, costs.len().saturating_sub(1))
        .map(|t| t.makespan())
        .unwrap_or(0.0)
}

/// Pick the chunk size and SM split with the shortest pipelined makespan.
///
/// A pair is feasible when its all-accepted makespan beats the serial
/// full-GPU makespan. When draft time per chunk never exceeds verify time,
/// that makespan is `T_q(s_c) + sum of T_p(chunk)`. Ties go to the smaller
/// chunk, then the smaller fraction. No feasible pair yields a disabled plan.
pub fn plan(s: usize, b: f64, models: &LatencyModels, r_grid: &[f64]) -> Result<OverlapPlan> {
    if s == 0 {
        return Err(invalid("speculative length must be at least 1"));
    }
    if r_grid.iter().any(|&r| !(r > 0.0 && r < 1.0)) {
        return Err(invalid("draft fractions must lie in (0, 1)"));
    }
    let serial = serial_makespan(s, b, models)?;
    let mut best = OverlapPlan {
        enabled: false,
        chunk_size: s,
        draft_fraction: 1.0,
        predicted_makespan: serial,
        serial_makespan: serial,
    };
    for c in chunk_sizes(s) {
        for &r in r_grid {
            let m = pipeline_makespan(&uniform_chunk_costs(s, c, b, r, models)?);
            if m < serial && m < best.predicted_makespan {
                best = OverlapPlan {
                    enabled: true,
                    chunk_size: c,
                    draft_fraction: r,
                    predicted_makespan: m,
                    serial_makespan: serial,
                };
            }
        }
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    DraftChunk,
    VerifyChunk,
    Reset,
    Commit,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimelineEvent {
    pub kind: EventKind,
    pub start: f64,
    pub end: f64,
    pub chunk: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineTimeline {
    pub events: Vec<TimelineEvent>,
}

impl PipelineTimeline {
    pub fn makespan(&self) -> f64 {
        self.events.iter().map(|e| e.end).fold(0.0, f64::max)
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    /// Draft time spent on chunks that were discarded by a reset.
    pub fn wasted_draft_ms(&self) -> f64 {
        let Some(reset) = self.events.iter().find(|e| e.kind == EventKind::Reset) else {
            return 0.0;
        };
        self.events
            .iter()
            .filter(|e| e.kind == EventKind::DraftChunk && e.chunk > reset.chunk)
            .map(|e| e.end - e.start)
            .sum()
    }

    /// Chunks whose drafting had started before the round ended.
    pub fn drafted_chunks(&self) -> usize {
        self.count(EventKind::DraftChunk)
    }
}

/// Lay out chunks `0..=last` of a pipeline whose round ends at chunk `last`.
///
/// If `last` is not the final chunk, drafting already under way for later
/// chunks is cut off at the reset and a `Reset` event precedes the commit.
pub fn build_timeline(costs: &[ChunkCost], last: usize) -> Result<PipelineTimeline> {
    if costs.is_empty() {
        return Err(invalid("no chunks to schedule"));
    }
    if last >= costs.len() {
        return Err(illegal(format!("round ends at chunk {last} of {}", costs.len())));
    }
    let mut events = Vec::new();
    let mut draft_end = costs[0].draft_ms;
    events.push(TimelineEvent {
        kind: EventKind::DraftChunk,
        start: 0.0,
        end: draft_end,
        chunk: 0,
    });
    let mut verify_end = 0.0f64;
    for (i, cost) in costs.iter().enumerate().take(last + 1) {
        let verify_start = verify_end.max(draft_end);
        verify_end = verify_start + cost.verify_ms;
        events.push(TimelineEvent {
            kind: EventKind::VerifyChunk,
            start: verify_start,
            end: verify_end,
            chunk: i,
        });
        if let Some(next) = costs.get(i + 1) {
            // the next chunk may be drafted once this one is being verified
            let start = verify_start.max(draft_end);
            draft_end = start + next.draft_ms;
            let end = if i == last { draft_end.min(verify_end) } else { draft_end };
            events.push(TimelineEvent {
                kind: EventKind::DraftChunk,
                start,
                end,
                chunk: i + 1,
            });
        }
    }
    if last + 1 < costs.len() {
        events.push(TimelineEvent {
            kind: EventKind::Reset,
            start: verify_end,
            end: verify_end,
            chunk: last,
        });
    }
    events.push(TimelineEvent {
        kind: EventKind::Commit,
        start: verify_end,
        end: verify_end,
        chunk: last,
    });
    events.sort_by(|a, b| a.start.total_cmp(&b.start));
    Ok(PipelineTimeline { events })
}

/// What verification of one chunk decided.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChunkOutcome {
    /// Every token in the chunk matched; the round continues.
    Accepted,
    /// The round ends inside this chunk after `accepted` matching tokens.
    Stopped { accepted: usize, recovery: Option<Token> },
}

/// Split a whole-frontier verification outcome into per-chunk outcomes.
pub fn chunk_outcomes(frontier: &Frontier, outcome: &VerifyOutcome) -> Result<Vec<ChunkOutcome>> {
    if outcome.submitted != frontier.drafted.len() {
        return Err(illegal(format!(
            "outcome covers {} tokens, frontier holds {}",
            outcome.submitted,
            frontier.drafted.len()
        )));
    }
    let stop = outcome.stop_index();
    let c = frontier.chunk_size;
    if stop >= outcome.submitted {
        return Ok(vec![ChunkOutcome::Accepted; frontier.chunk_count()]);
    }
    let k = stop / c;
    let mut out = vec![ChunkOutcome::Accepted; k];
    out.push(ChunkOutcome::Stopped {
        accepted: stop - k * c,
        recovery: outcome.recovery_token,
    });
    Ok(out)
}

/// Timeline plus the tokens the round commits.
#[derive(Clone, Debug, PartialEq)]
pub struct ScheduledRound {
    pub timeline: PipelineTimeline,
    pub committed: Vec<Token>,
}

/// Schedule one request's frontier given per-chunk outcomes and costs.
pub fn schedule_iteration(
    plan: &OverlapPlan,
    frontier: &Frontier,
    outcomes: &[ChunkOutcome],
    costs: &[ChunkCost],
) -> Result<ScheduledRound> {
    if frontier.chunk_size != plan.chunk_size {
        return Err(illegal("frontier chunk size differs from the plan"));
    }
    let n = frontier.chunk_count();
    if costs.len() != n {
        return Err(illegal(format!("{} chunk costs for {n} chunks", costs.len())));
    }
    if outcomes.is_empty() || outcomes.len() > n {
        return Err(illegal(format!("{} outcomes for {n} chunks", outcomes.len())));
    }
    let last = outcomes.len() - 1;
    if outcomes[..last].iter().any(|o| *o != ChunkOutcome::Accepted) {
        return Err(illegal("outcome reported after the round stopped"));
    }
    let mut committed = Vec::new();
    for (i, o) in outcomes.iter().enumerate() {
        let range = frontier.chunk(i).expect("index checked against chunk count");
        match *o {
            ChunkOutcome::Accepted => committed.extend_from_slice(&frontier.drafted[range]),
            ChunkOutcome::Stopped { accepted, recovery } => {
                if accepted >= range.len() && recovery.is_some() {
                    return Err(illegal("recovery after a fully matching chunk"));
                }
                if accepted > range.len() {
                    return Err(illegal("more tokens accepted than the chunk holds"));
                }
                committed.extend_from_slice(&frontier.drafted[range.start..range.start + accepted]);
                committed.extend(recovery);
            }
        }
    }
    if last + 1 < n && outcomes[last] == ChunkOutcome::Accepted {
        return Err(illegal("outcomes end before the frontier without a stop"));
    }
    Ok(ScheduledRound {
        timeline: build_timeline(costs, last)?,
        committed,
    })
}
