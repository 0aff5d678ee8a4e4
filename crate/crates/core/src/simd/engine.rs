use std::collections::{BTreeSet, VecDeque};

use super::config::{ModelSource, SimConfig};
use super::metrics::{percentile, IterationRecord, Metrics, RequestRecord, Summary};
use super::workload::{arrivals_for, synth_prompt, Arrival};
use crate::drafter::{AdaptiveDrafter, ContextKey, LengthFeedback};
use crate::error::Result;
use crate::exitctl::{BatchEntry, BatchGate, ExitPolicy, NeverPrune, PruneGate};
use crate::latmodel::{models_from_fits, profile_and_fit, LatencyModels, SmSplit, StageFit, StageKind};
use crate::overlap::{self, build_timeline, chunk_lengths, ChunkCost, EventKind, OverlapPlan};
use crate::sdcore::{commit, draft_tokens, verify_with_early_exit, Request, VerifyOutcome};
use crate::toylm::{LayeredToyLm, Token};

/// Models the controllers consult, plus the fits when they were fitted.
pub fn controller_models(config: &SimConfig) -> Result<(LatencyModels, Option<Vec<StageFit>>)> {
    match config.latency.source {
        ModelSource::GroundTruth => Ok((config.latency.truth, None)),
        ModelSource::Fitted => {
            let (_, fits) = profile_and_fit(
                &config.latency.truth,
                &config.latency.grid,
                config.latency.profile_noise,
                config.seed,
            )?;
            Ok((models_from_fits(&fits)?, Some(fits)))
        }
    }
}

/// Simulate `config` end to end.
pub fn run(config: &SimConfig) -> Result<Metrics> {
    config.validate()?;
    let model = LayeredToyLm::new(config.toylm.clone())?;
    let arrivals = arrivals_for(&config.workload, config.seed)?;
    let (control, _) = controller_models(config)?;
    Simulator::new(config, &model, control)?.run(&arrivals)
}

/// One configured simulation over a fixed model.
pub struct Simulator<'a> {
    config: &'a SimConfig,
    model: &'a LayeredToyLm,
    truth: LatencyModels,
    control: LatencyModels,
}

struct Running {
    req: Request,
}

struct RoundRow {
    drafted: Vec<Token>,
    outcome: VerifyOutcome,
}

#[derive(Default)]
struct Tally {
    summary: Summary,
    iterations: Vec<IterationRecord>,
    requests: Vec<RequestRecord>,
    outputs: std::collections::BTreeMap<u64, Vec<Token>>,
    prompts: std::collections::BTreeMap<u64, (Vec<Token>, usize)>,
}

impl<'a> Simulator<'a> {
    pub fn new(config: &'a SimConfig, model: &'a LayeredToyLm, control: LatencyModels) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            model,
            truth: config.latency.truth,
            control,
        })
    }

    pub fn run(&self, arrivals: &[Arrival]) -> Result<Metrics> {
        let cfg = self.config;
        let layers = self.model.layers();
        let eos = self.model.eos();
        let mode = cfg.sim.mode;
        let overlap_on = cfg.overlap_active();
        let policy = if mode.early_exit() {
            cfg.exit
        } else {
            ExitPolicy::disabled()
        };
        let mut drafter = AdaptiveDrafter::new(cfg.drafter.clone())?;

        let mut order: Vec<(u64, Arrival)> = arrivals.iter().copied().enumerate().map(|(i, a)| (i as u64, a)).collect();
        order.sort_by(|a, b| a.1.arrival_ms.total_cmp(&b.1.arrival_ms));
        let mut pending: VecDeque<(u64, Arrival)> = order.into();

        let mut t = Tally::default();
        t.summary.mode = mode.name().to_string();
        t.summary.seed = cfg.seed;
        t.summary.requests = arrivals.len();

        let mut running: Vec<Running> = Vec::new();
        let mut clock = 0.0f64;
        let mut last_fraction = 1.0;

        loop {
            while running.len() < cfg.sim.max_batch {
                let Some(&(index, a)) = pending.front() else { break };
                if a.arrival_ms > clock {
                    break;
                }
                pending.pop_front();
                let prompt = synth_prompt(cfg.seed, index, a.input_len, eos);
                let req = Request::new(index, a.arrival_ms, prompt.clone(), a.output_len)?
                    .with_eos(eos)
                    .with_window(cfg.sim.accept_window);
                t.prompts.insert(index, (prompt, a.output_len));
                if req.done {
                    finish(&mut t, &req, clock);
                } else {
                    running.push(Running { req });
                }
            }
            if running.is_empty() {
                match pending.front() {
                    Some(&(_, a)) => {
                        clock = clock.max(a.arrival_ms);
                        continue;
                    }
                    None => break,
                }
            }

            let b = running.len();
            let key = ContextKey::new(b, last_fraction);
            let lengths = if mode.adaptive() {
                let refs: Vec<&Request> = running.iter().map(|r| &r.req).collect();
                drafter.assign(key, &refs)
            } else {
                vec![cfg.sim.fixed_spec_length; b]
            };

            let mut drafts = Vec::with_capacity(b);
            for (r, &s) in running.iter_mut().zip(&lengths) {
                r.req.spec_length = s;
                drafts.push(draft_tokens(self.model, &r.req, s)?);
            }
            let s_max = drafts.iter().map(Vec::len).max().unwrap_or(1);
            let bf = b as f64;

            let plan = if overlap_on {
                overlap::plan(s_max, bf, &self.control, &cfg.overlap.r_grid)?
            } else {
                serial_plan(s_max)
            };
            let split = plan.split();

            let gate: Box<dyn PruneGate> = if mode.early_exit() {
                let entries: Vec<BatchEntry> = running
                    .iter()
                    .zip(&drafts)
                    .map(|(r, d)| BatchEntry {
                        spec_length: d.len(),
                        acceptance: r
                            .req
                            .accept_window
                            .ratio_for(r.req.spec_length)
                            .or_else(|| r.req.accept_window.mean_ratio())
                            .unwrap_or(cfg.drafter.cold_start_acceptance),
                    })
                    .collect();
                Box::new(BatchGate::evaluate(&policy, layers, &entries, bf, split, &self.control)?)
            } else {
                Box::new(NeverPrune)
            };

            let mut rows = Vec::with_capacity(b);
            for (r, d) in running.iter().zip(drafts) {
                let outcome = verify_with_early_exit(self.model, &r.req, &d, &policy, gate.as_ref())?;
                rows.push(RoundRow { drafted: d, outcome });
            }

            let timing = self.time_iteration(&plan, &rows, bf, layers)?;
            let latency = timing.latency;

            let mut feedback: Vec<LengthFeedback> = Vec::new();
            let mut committed_now = 0;
            for (r, row) in running.iter_mut().zip(&rows) {
                let s = r.req.spec_length;
                committed_now += commit(&mut r.req, &row.outcome)?;
                match feedback.iter_mut().find(|f| f.spec_length == s) {
                    Some(f) => {
                        f.drafted += row.outcome.submitted;
                        f.accepted += row.outcome.accepted_count();
                    }
                    None => feedback.push(LengthFeedback {
                        spec_length: s,
                        drafted: row.outcome.submitted,
                        accepted: row.outcome.accepted_count(),
                        latency_ms: latency,
                    }),
                }
                let sm = &mut t.summary;
                sm.drafted_tokens += row.outcome.submitted;
                sm.accepted_tokens += row.outcome.accepted_count();
                *sm.spec_length_hist.entry(s).or_default() += 1;
                sm.verify_layer_work_full += (row.outcome.submitted * layers) as f64;
                if row.outcome.false_prune {
                    sm.false_prunes += 1;
                }
                for ev in &row.outcome.prune_log {
                    *sm.exit_counts.entry(ev.layer).or_default() += ev.rows as u64;
                }
            }
            if mode.adaptive() {
                feedback.sort_by_key(|f| f.spec_length);
                self.attribute_latency(&mut feedback, &rows, bf, key, latency)?;
                drafter.record(key, &feedback)?;
            }

            let sm = &mut t.summary;
            *sm.batch_hist.entry(b).or_default() += 1;
            sm.draft_ms += timing.draft_ms;
            sm.verify_ms += timing.verify_ms;
            sm.prune_ms += timing.prune_ms;
            sm.busy_ms += latency;
            sm.verify_layer_work += timing.layer_work;
            sm.wasted_draft_tokens += timing.wasted_tokens;
            if plan.enabled {
                sm.overlap_iterations += 1;
            }
            if cfg.sim.record_iterations {
                t.iterations.push(IterationRecord {
                    index: sm.iterations,
                    start_ms: clock,
                    latency_ms: latency,
                    batch: b,
                    spec_lengths: lengths.clone(),
                    draft_ms: timing.draft_ms,
                    verify_ms: timing.verify_ms,
                    prune_ms: timing.prune_ms,
                    overlap: plan.enabled,
                    chunk_size: plan.chunk_size,
                    draft_fraction: split.draft_fraction(),
                    committed: committed_now,
                });
            }
            sm.iterations += 1;

            clock += latency;
            last_fraction = split.draft_fraction();
            let mut still = Vec::with_capacity(running.len());
            for r in running.drain(..) {
                if r.req.done {
                    finish(&mut t, &r.req, clock);
                } else {
                    still.push(r);
                }
            }
            running = still;
        }

        self.finalize(t, clock)
    }

    fn finalize(&self, mut t: Tally, clock: f64) -> Result<Metrics> {
        let cfg = self.config;
        let sm = &mut t.summary;
        sm.sim_time_ms = clock;
        sm.finished = t.requests.len();
        sm.total_tokens = t.requests.iter().map(|r| r.tokens).sum();
        let mut lat: Vec<f64> = t.requests.iter().map(RequestRecord::latency_ms).collect();
        lat.sort_by(f64::total_cmp);
        if !lat.is_empty() {
            sm.mean_latency_ms = lat.iter().sum::<f64>() / lat.len() as f64;
        }
        sm.p50_latency_ms = percentile(&lat, 0.5);
        sm.p99_latency_ms = percentile(&lat, 0.99);
        let per_token: Vec<f64> = t
            .requests
            .iter()
            .filter(|r| r.tokens > 0)
            .map(|r| r.latency_ms() / r.tokens as f64)
            .collect();
        if !per_token.is_empty() {
            sm.tpot_ms = per_token.iter().sum::<f64>() / per_token.len() as f64;
        }
        if clock > 0.0 {
            sm.throughput_tps = sm.total_tokens as f64 / (clock / 1000.0);
        }
        if sm.busy_ms > 0.0 {
            sm.draft_share = sm.draft_ms / sm.busy_ms;
            sm.verify_share = sm.verify_ms / sm.busy_ms;
        }
        if sm.drafted_tokens > 0 {
            sm.acceptance_ratio = sm.accepted_tokens as f64 / sm.drafted_tokens as f64;
            sm.rejection_ratio = 1.0 - sm.acceptance_ratio;
        }
        if sm.verify_layer_work_full > 0.0 {
            sm.layer_work_ratio = sm.verify_layer_work / sm.verify_layer_work_full;
        }
        if cfg.sim.oracle_check {
            let mut bad = 0;
            for (id, out) in &t.outputs {
                let (prompt, max_out) = &t.prompts[id];
                if self.model.autoregressive_decode(prompt, *max_out)? != *out {
                    bad += 1;
                }
            }
            sm.oracle_mismatches = Some(bad);
        }
        t.requests.sort_by_key(|r| r.id);
        Ok(Metrics {
            summary: t.summary,
            iterations: t.iterations,
            requests: t.requests,
            outputs: t.outputs,
        })
    }

    /// Every length in the batch saw the same iteration. Each length is
    /// charged the realized latency scaled by how a batch of the context's
    /// bucket size running only that length compares under the controller
    /// models.
    fn attribute_latency(
        &self,
        feedback: &mut [LengthFeedback],
        rows: &[RoundRow],
        b: f64,
        key: ContextKey,
        latency: f64,
    ) -> Result<()> {
        let s_max = rows.iter().map(|r| r.drafted.len()).max().unwrap_or(1) as f64;
        let s_mean = rows.iter().map(|r| r.drafted.len()).sum::<usize>() as f64 / b;
        let mixed = self.control.latency(StageKind::Draft, b, s_max, SmSplit::Serial)?
            + self.control.latency(StageKind::Target, b, s_mean, SmSplit::Serial)?;
        for f in feedback.iter_mut() {
            let uniform = serial_iteration_ms(&self.control, key.batch_bucket as f64, f.spec_length as f64)?;
            f.latency_ms = latency * uniform / mixed;
        }
        Ok(())
    }

    fn time_iteration(&self, plan: &OverlapPlan, rows: &[RoundRow], b: f64, layers: usize) -> Result<Timing> {
        let l = layers as f64;
        let split = plan.split();
        let prune_layers: BTreeSet<usize> = rows
            .iter()
            .flat_map(|r| r.outcome.prune_log.iter().map(|e| e.layer))
            .collect();
        let prune_ms = if prune_layers.is_empty() {
            0.0
        } else {
            let prunable: f64 = rows.iter().map(|r| r.outcome.prune_log.iter().map(|e| e.rows).sum::<usize>() as f64).sum();
            let per = self.truth.latency(StageKind::Prune, b, prunable / b, split)?;
            per * prune_layers.len() as f64
        };
        let s_max = rows.iter().map(|r| r.drafted.len()).max().unwrap_or(1);

        if !plan.enabled {
            let work: f64 = rows.iter().map(|r| r.outcome.full_layers_run).sum();
            let draft_ms = self.truth.latency(StageKind::Draft, b, s_max as f64, split)?;
            let verify_ms = self.truth.latency(StageKind::Target, b, work / (b * l), split)?;
            return Ok(Timing {
                latency: draft_ms + verify_ms + prune_ms,
                draft_ms,
                verify_ms,
                prune_ms,
                layer_work: work,
                wasted_tokens: 0,
            });
        }

        let c = plan.chunk_size;
        let lens = chunk_lengths(s_max, c);
        let n = lens.len();
        // chunk holding each row's stop index; rows past it are never verified
        let stops: Vec<usize> = rows
            .iter()
            .map(|r| {
                let stop = r.outcome.stop_index().min(r.drafted.len() - 1);
                stop / c
            })
            .collect();
        let last = stops.iter().copied().max().unwrap_or(0);
        let mut costs = Vec::with_capacity(n);
        let mut work_total = 0.0;
        for (k, &len) in lens.iter().enumerate() {
            let mut drafting = 0usize;
            let mut work = 0.0;
            for (r, &stop) in rows.iter().zip(&stops) {
                let start = k * c;
                if r.drafted.len() > start && stop + 1 >= k {
                    drafting += 1;
                }
                if k <= stop {
                    let end = (start + c).min(r.drafted.len());
                    if start < end {
                        work += r.outcome.row_layers[start..end].iter().sum::<f64>();
                    }
                }
            }
            if k <= last {
                work_total += work;
            }
            let draft_ms = if drafting == 0 {
                0.0
            } else {
                self.truth.latency(StageKind::Draft, drafting as f64, len as f64, split)?
            };
            costs.push(ChunkCost {
                draft_ms,
                verify_ms: self.truth.latency(StageKind::Target, b, work / (b * l), split)?,
            });
        }
        let timeline = build_timeline(&costs, last)?;
        let draft_ms = timeline
            .events
            .iter()
            .filter(|e| e.kind == EventKind::DraftChunk)
            .map(|e| e.end - e.start)
            .sum();
        let verify_ms = timeline
            .events
            .iter()
            .filter(|e| e.kind == EventKind::VerifyChunk)
            .map(|e| e.end - e.start)
            .sum();
        let mut wasted = 0;
        for (r, &stop) in rows.iter().zip(&stops) {
            let next = stop + 1;
            if next <= last + 1 && next < n {
                let start = next * c;
                let end = (start + c).min(r.drafted.len());
                wasted += end.saturating_sub(start);
            }
        }
        Ok(Timing {
            latency: timeline.makespan() + prune_ms,
            draft_ms,
            verify_ms,
            prune_ms,
            layer_work: work_total,
            wasted_tokens: wasted,
        })
    }
}

struct Timing {
    latency: f64,
    draft_ms: f64,
    verify_ms: f64,
    prune_ms: f64,
    layer_work: f64,
    wasted_tokens: usize,
}

fn serial_plan(s: usize) -> OverlapPlan {
    OverlapPlan {
        enabled: false,
        chunk_size: s,
        draft_fraction: 1.0,
        predicted_makespan: 0.0,
        serial_makespan: 0.0,
    }
}

fn finish(t: &mut Tally, req: &Request, at: f64) {
    t.requests.push(RequestRecord {
        id: req.id,
        arrival_ms: req.arrival_ms,
        finish_ms: at.max(req.arrival_ms),
        tokens: req.committed.len(),
    });
    t.outputs.insert(req.id, req.committed.clone());
}

/// Time of one full-GPU serial iteration with every row verified in full.
pub fn serial_iteration_ms(models: &LatencyModels, b: f64, s: f64) -> Result<f64> {
    Ok(models.latency(StageKind::Draft, b, s, SmSplit::Serial)?
        + models.latency(StageKind::Target, b, s, SmSplit::Serial)?)
}
