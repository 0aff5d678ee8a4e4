//! Speculative-decoding semantics: drafting, verification with or without
//! token-wise early exit, and commit.
//!
//! Verification is greedy. Row `j` of a verification pass predicts the token
//! at drafted position `j` from `prefix + drafted[..j]`; the accepted prefix
//! ends at the first row whose prediction differs from the drafted token,
//! and that prediction becomes the recovery token. A fully accepted draft
//! has no recovery token. Only verified tokens and target predictions are
//! ever committed, so no exit decision can change the output.

use std::collections::VecDeque;

use crate::error::{illegal, invalid, Result};
use crate::exitctl::{decide, ExitDecision, ExitPolicy, PruneGate};
use crate::toylm::{LayerProbe, LayeredToyLm, Token};

/// Default number of verification rounds in a request's acceptance window.
pub const DEFAULT_ACCEPT_WINDOW: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AcceptRecord {
    pub spec_length: usize,
    pub drafted: usize,
    pub accepted: usize,
}

impl AcceptRecord {
    pub fn ratio(&self) -> f64 {
        if self.drafted == 0 {
            0.0
        } else {
            self.accepted as f64 / self.drafted as f64
        }
    }
}

/// Ring buffer of the last `capacity` verification rounds.
#[derive(Clone, Debug, PartialEq)]
pub struct AcceptWindow {
    capacity: usize,
    rounds: VecDeque<AcceptRecord>,
}

impl AcceptWindow {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            rounds: VecDeque::with_capacity(capacity.max(1)),
        }
    }

    pub fn push(&mut self, rec: AcceptRecord) {
        if self.rounds.len() == self.capacity {
            self.rounds.pop_front();
        }
        self.rounds.push_back(rec);
    }

    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &AcceptRecord> {
        self.rounds.iter()
    }

    /// Mean acceptance ratio over all rounds in the window.
    pub fn mean_ratio(&self) -> Option<f64> {
        mean(self.rounds.iter().map(AcceptRecord::ratio))
    }

    /// Rounds in the window that used speculative length `s`.
    pub fn count_for(&self, s: usize) -> usize {
        self.rounds.iter().filter(|r| r.spec_length == s).count()
    }

    /// Mean acceptance ratio over rounds that used speculative length `s`.
    pub fn ratio_for(&self, s: usize) -> Option<f64> {
        mean(
            self.rounds
                .iter()
                .filter(|r| r.spec_length == s)
                .map(AcceptRecord::ratio),
        )
    }
}

fn mean(it: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = it.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// One serving request.
#[derive(Clone, Debug)]
pub struct Request {
    pub id: u64,
    pub arrival_ms: f64,
    pub prompt: Vec<Token>,
    pub max_out: usize,
    pub committed: Vec<Token>,
    pub spec_length: usize,
    pub accept_window: AcceptWindow,
    pub done: bool,
    /// End-of-sequence id; committing it finishes the request.
    pub eos: Option<Token>,
}

impl Request {
    pub fn new(id: u64, arrival_ms: f64, prompt: Vec<Token>, max_out: usize) -> Result<Self> {
        if prompt.is_empty() {
            return Err(invalid("prompt must be non-empty"));
        }
        Ok(Self {
            id,
            arrival_ms,
            prompt,
            max_out,
            committed: Vec::new(),
            spec_length: 1,
            accept_window: AcceptWindow::new(DEFAULT_ACCEPT_WINDOW),
            done: max_out == 0,
            eos: None,
        })
    }

    pub fn with_eos(mut self, eos: Token) -> Self {
        self.eos = Some(eos);
        self
    }

    pub fn with_window(mut self, rounds: usize) -> Self {
        self.accept_window = AcceptWindow::new(rounds);
        self
    }

    /// Prompt followed by the committed output.
    pub fn context(&self) -> Vec<Token> {
        let mut v = Vec::with_capacity(self.prompt.len() + self.committed.len() + 16);
        v.extend_from_slice(&self.prompt);
        v.extend_from_slice(&self.committed);
        v
    }

    pub fn remaining(&self) -> usize {
        self.max_out - self.committed.len()
    }
}

/// Where the earliest pruned row sits and the layer whose test pruned it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PruneMark {
    pub index: usize,
    pub layer: usize,
}

/// Rows removed by one exit decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PruneEvent {
    pub layer: usize,
    pub first_row: usize,
    pub rows: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyOutcome {
    /// Committed length the outcome was computed against.
    pub base_len: usize,
    pub submitted: usize,
    pub accepted: Vec<Token>,
    pub recovery_token: Option<Token>,
    pub pruned_at: Option<PruneMark>,
    /// Every exit decision in layer order.
    pub prune_log: Vec<PruneEvent>,
    /// Layers each submitted row consumed.
    pub row_layers: Vec<f64>,
    pub full_layers_run: f64,
    /// A pruned row held a token the target would have accepted.
    pub false_prune: bool,
}

impl VerifyOutcome {
    pub fn accepted_count(&self) -> usize {
        self.accepted.len()
    }

    /// Index of the row that ended this round: first mismatch or prune.
    pub fn stop_index(&self) -> usize {
        match (self.recovery_token, self.pruned_at) {
            (Some(_), _) => self.accepted.len(),
            (None, Some(p)) => p.index,
            (None, None) => self.submitted,
        }
    }
}

/// Draft up to `s` tokens from the request's current context.
///
/// Stops after an end-of-sequence token and never drafts past `max_out`.
pub fn draft_tokens(model: &LayeredToyLm, req: &Request, s: usize) -> Result<Vec<Token>> {
    if req.done {
        return Err(illegal(format!("request {} is already done", req.id)));
    }
    if s == 0 {
        return Err(invalid("speculative length must be at least 1"));
    }
    let n = s.min(req.remaining());
    let mut ctx = req.context();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let t = model.draft_next(&ctx)?;
        out.push(t);
        ctx.push(t);
        if t == model.eos() {
            break;
        }
    }
    Ok(out)
}

fn probes(model: &LayeredToyLm, req: &Request, drafted: &[Token]) -> Result<Vec<LayerProbe>> {
    let mut ctx = req.context();
    let mut out = Vec::with_capacity(drafted.len());
    for &t in drafted {
        out.push(model.layer_probe(&ctx)?);
        ctx.push(t);
    }
    Ok(out)
}

fn first_mismatch(targets: &[Token], drafted: &[Token]) -> usize {
    targets
        .iter()
        .zip(drafted)
        .position(|(t, d)| t != d)
        .unwrap_or(targets.len().min(drafted.len()))
}

/// Verify every drafted row through all layers.
pub fn full_verify(model: &LayeredToyLm, req: &Request, drafted: &[Token]) -> Result<VerifyOutcome> {
    verify_with_early_exit(model, req, drafted, &ExitPolicy::disabled(), &crate::exitctl::NeverPrune)
}

/// Layer-by-layer verification with token-wise exit.
///
/// At each layer at or past `policy.l_init` where `gate` is open, the
/// earliest active row whose drafted token fails the Top-`K_l` test flags
/// that token. Every later row was fed the flagged token, so those rows are
/// pruned; they stop consuming layers once the gate's decision delay has
/// elapsed. The flagged row itself runs to the final layer, which either
/// rejects the token and yields the recovery token or accepts it.
pub fn verify_with_early_exit(
    model: &LayeredToyLm,
    req: &Request,
    drafted: &[Token],
    policy: &ExitPolicy,
    gate: &dyn PruneGate,
) -> Result<VerifyOutcome> {
    if drafted.is_empty() {
        return Err(invalid("nothing to verify"));
    }
    let layers = model.layers();
    let n = drafted.len();
    let rows = probes(model, req, drafted)?;
    let full = layers as f64;
    let mut row_layers = vec![full; n];
    let mut active = n;
    let mut pruned_at = None;
    let mut prune_log = Vec::new();

    if policy.is_active(layers) {
        let delay = gate.decision_delay_layers().max(0.0);
        for layer in policy.l_init..layers {
            if active == 1 {
                break;
            }
            if !gate.should_prune(layer) {
                continue;
            }
            let k = policy.k_at(layer, layers);
            let flagged = (0..active - 1).find(|&j| {
                decide(rows[j].count_greater_at(layer, drafted[j]), k) == ExitDecision::PruneCandidate
            });
            if let Some(j) = flagged {
                let consumed = (layer as f64 + delay).min(full);
                for l in &mut row_layers[j + 1..active] {
                    *l = consumed;
                }
                prune_log.push(PruneEvent {
                    layer,
                    first_row: j + 1,
                    rows: active - j - 1,
                });
                active = j + 1;
                pruned_at = Some(PruneMark { index: active, layer });
            }
        }
    }

    let targets: Vec<Token> = rows.iter().map(LayerProbe::final_argmax).collect();
    let m = first_mismatch(&targets[..active], &drafted[..active]);
    let recovery_token = (m < active).then(|| targets[m]);
    if recovery_token.is_some() {
        pruned_at = None;
    }
    let false_prune = recovery_token.is_none() && active < n;

    Ok(VerifyOutcome {
        base_len: req.committed.len(),
        submitted: n,
        accepted: drafted[..m].to_vec(),
        recovery_token,
        pruned_at,
        prune_log,
        full_layers_run: row_layers.iter().sum(),
        row_layers,
        false_prune,
    })
}

/// Append the accepted prefix and recovery token; returns tokens committed.
pub fn commit(req: &mut Request, outcome: &VerifyOutcome) -> Result<usize> {
    if req.done {
        return Err(illegal(format!("request {} is already done", req.id)));
    }
    if outcome.base_len != req.committed.len() {
        return Err(illegal(format!(
            "stale outcome for request {}: computed at length {}, now {}",
            req.id,
            outcome.base_len,
            req.committed.len()
        )));
    }
    let before = req.committed.len();
    for &t in outcome.accepted.iter().chain(outcome.recovery_token.iter()) {
        if req.committed.len() == req.max_out {
            break;
        }
        req.committed.push(t);
        if Some(t) == req.eos {
            req.done = true;
            break;
        }
    }
    if req.committed.len() == req.max_out {
        req.done = true;
    }
    req.accept_window.push(AcceptRecord {
        spec_length: req.spec_length,
        drafted: outcome.submitted,
        accepted: outcome.accepted_count(),
    });
    Ok(req.committed.len() - before)
}

/// Incrementally verifiable drafted tokens beyond the committed prefix.
#[derive(Clone, Debug, PartialEq)]
pub struct Frontier {
    pub base: usize,
    pub drafted: Vec<Token>,
    pub chunk_size: usize,
    pub verified_upto: usize,
}

impl Frontier {
    pub fn new(base: usize, chunk_size: usize) -> Result<Self> {
        if chunk_size == 0 {
            return Err(invalid("chunk size must be at least 1"));
        }
        Ok(Self {
            base,
            drafted: Vec::new(),
            chunk_size,
            verified_upto: 0,
        })
    }

    pub fn extend(&mut self, tokens: &[Token]) {
        self.drafted.extend_from_slice(tokens);
    }

    pub fn chunk_count(&self) -> usize {
        self.drafted.len().div_ceil(self.chunk_size)
    }

    /// Index range of chunk `i` within `drafted`.
    pub fn chunk(&self, i: usize) -> Option<std::ops::Range<usize>> {
        let start = i * self.chunk_size;
        (start < self.drafted.len()).then(|| start..(start + self.chunk_size).min(self.drafted.len()))
    }

    pub fn mark_verified(&mut self, upto: usize) -> Result<()> {
        if upto > self.drafted.len() || upto < self.verified_upto {
            return Err(illegal(format!(
                "cannot mark {upto} verified (drafted {}, verified {})",
                self.drafted.len(),
                self.verified_upto
            )));
        }
        self.verified_upto = upto;
        Ok(())
    }

    /// Discard everything drafted and restart from `new_base`.
    pub fn reset(&mut self, new_base: usize) {
        self.base = new_base;
        self.drafted.clear();
        self.verified_upto = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exitctl::AlwaysPrune;
    use crate::toylm::ToyLmConfig;

    fn model(eta: f64) -> LayeredToyLm {
        LayeredToyLm::new(ToyLmConfig {
            draft_divergence: eta,
            ..Default::default()
        })
        .unwrap()
    }

    fn req(prompt: Vec<Token>, max_out: usize) -> Request {
        Request::new(1, 0.0, prompt, max_out).unwrap().with_eos(63)
    }

    #[test]
    fn perfect_draft_matches_oracle() {
        let m = model(0.0);
        let r = req(vec![4, 9, 11], 50);
        let d = draft_tokens(&m, &r, 4).unwrap();
        let oracle = m.autoregressive_decode(&r.prompt, 50).unwrap();
        assert_eq!(d, oracle[..d.len()]);
        let out = full_verify(&m, &r, &d).unwrap();
        assert_eq!(out.accepted_count(), d.len());
        assert_eq!(out.recovery_token, None);
    }

    #[test]
    fn draft_stops_at_eos() {
        let mut m = model(0.0);
        let mut eos = vec![0.0; 64];
        eos[63] = 5.0;
        // second drafted token is EOS
        let first = m.target_next(&[2, 3]).unwrap();
        m.set_entry(vec![3, first], eos).unwrap();
        let r = req(vec![2, 3], 20);
        let d = draft_tokens(&m, &r, 6).unwrap();
        assert_eq!(d, vec![first, 63]);
    }

    #[test]
    fn draft_replay_matches_step_by_step() {
        let m = model(0.5);
        let r = req(vec![1, 2, 3], 30);
        let d = draft_tokens(&m, &r, 8).unwrap();
        let mut ctx = r.context();
        for &t in &d {
            assert_eq!(m.draft_next(&ctx).unwrap(), t);
            ctx.push(t);
        }
        let mut done = r.clone();
        done.done = true;
        assert!(draft_tokens(&m, &done, 2).is_err());
        assert!(draft_tokens(&m, &r, 0).is_err());
    }

    #[test]
    fn immediate_mismatch_still_commits() {
        let m = model(0.0);
        let mut r = req(vec![7, 7], 10);
        let t0 = m.target_next(&r.context()).unwrap();
        let wrong = (t0 + 1) % 63;
        let out = full_verify(&m, &r, &[wrong, 5, 6]).unwrap();
        assert_eq!(out.accepted_count(), 0);
        assert_eq!(out.recovery_token, Some(t0));
        assert_eq!(out.full_layers_run, 96.0);
        assert_eq!(commit(&mut r, &out).unwrap(), 1);
    }

    #[test]
    fn commit_arithmetic_and_truncation() {
        let m = model(0.3);
        let mut r = req(vec![5, 1], 100);
        let out = VerifyOutcome {
            base_len: 0,
            submitted: 5,
            accepted: vec![1, 2, 3],
            recovery_token: Some(4),
            pruned_at: None,
            prune_log: Vec::new(),
            row_layers: vec![32.0; 5],
            full_layers_run: 160.0,
            false_prune: false,
        };
        assert_eq!(commit(&mut r, &out).unwrap(), 4);
        // same outcome again is stale
        assert!(commit(&mut r, &out).is_err());
        let all = VerifyOutcome {
            base_len: 4,
            accepted: vec![1, 2, 3, 4, 5],
            recovery_token: None,
            ..out.clone()
        };
        assert_eq!(commit(&mut r, &all).unwrap(), 5);

        let mut short = req(vec![5, 1], 2);
        assert_eq!(commit(&mut short, &out).unwrap(), 2);
        assert!(short.done);
        assert_eq!(short.committed.len(), 2);
        let _ = m;
    }

    #[test]
    fn disabled_policy_equals_full_verify() {
        let m = model(0.5);
        for p in 0..40u32 {
            let r = req(vec![p % 63, (p * 5) % 63], 40);
            let d = draft_tokens(&m, &r, 6).unwrap();
            let a = full_verify(&m, &r, &d).unwrap();
            let b = verify_with_early_exit(&m, &r, &d, &ExitPolicy { l_init: 33, ..Default::default() }, &AlwaysPrune)
                .unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn oracle_tokens_pass_the_final_layer_test() {
        let m = model(0.0);
        for p in 0..40u32 {
            let r = req(vec![p % 63, 3], 40);
            let d = draft_tokens(&m, &r, 6).unwrap();
            let rows = probes(&m, &r, &d).unwrap();
            for (probe, &t) in rows.iter().zip(&d) {
                for k in 1..=10 {
                    assert_eq!(decide(probe.count_greater_at(32, t), k), ExitDecision::Keep);
                }
            }
            let out = full_verify(&m, &r, &d).unwrap();
            assert_eq!(out.accepted_count(), d.len());
        }
    }

    #[test]
    fn flagged_row_keeps_its_recovery_token() {
        let m = model(1.0);
        let policy = ExitPolicy {
            l_init: 1,
            k_init: 1,
            k_final: 1,
        };
        let r = req(vec![10, 20], 30);
        let d = draft_tokens(&m, &r, 4).unwrap();
        let out = verify_with_early_exit(&m, &r, &d, &policy, &AlwaysPrune).unwrap();
        assert_eq!(out.row_layers[0], 32.0);
        let full = full_verify(&m, &r, &d).unwrap();
        if full.accepted_count() == 0 {
            assert_eq!(out.recovery_token, full.recovery_token);
        }
        let mut r2 = r.clone();
        assert!(commit(&mut r2, &out).unwrap() >= 1);
        let oracle = m.autoregressive_decode(&r.prompt, 30).unwrap();
        assert_eq!(r2.committed[..], oracle[..r2.committed.len()]);
    }

    #[test]
    fn false_prune_commits_through_the_flagged_token() {
        // a perfect draft, but every token fails a K = 1 test at layer 1
        // whenever it is not the layer-1 argmax
        let m = model(0.0);
        let policy = ExitPolicy {
            l_init: 1,
            k_init: 1,
            k_final: 1,
        };
        let mut hit = false;
        for p in 0..200u32 {
            let r = req(vec![p % 63, (p / 63) % 63 + 1], 40);
            let d = draft_tokens(&m, &r, 5).unwrap();
            let out = verify_with_early_exit(&m, &r, &d, &policy, &AlwaysPrune).unwrap();
            assert_eq!(out.recovery_token, None);
            if let Some(mark) = out.pruned_at {
                hit = true;
                assert!(out.false_prune);
                assert_eq!(out.accepted_count(), mark.index);
                assert!(out.row_layers[mark.index..].iter().all(|&l| l < 32.0));
                assert_eq!(out.accepted[..], d[..mark.index]);
            }
        }
        assert!(hit);
    }

    #[test]
    fn frontier_chunks_and_reset() {
        let mut f = Frontier::new(10, 2).unwrap();
        f.extend(&[1, 2, 3, 4, 5]);
        assert_eq!(f.chunk_count(), 3);
        assert_eq!(f.chunk(2), Some(4..5));
        assert_eq!(f.chunk(3), None);
        f.mark_verified(2).unwrap();
        assert!(f.mark_verified(1).is_err());
        f.reset(13);
        assert!(f.drafted.is_empty());
        assert_eq!(f.base, 13);
        assert_eq!(f.verified_upto, 0);
    }

    #[test]
    fn accept_window_semantics() {
        let mut w = AcceptWindow::new(2);
        w.push(AcceptRecord { spec_length: 4, drafted: 4, accepted: 0 });
        w.push(AcceptRecord { spec_length: 4, drafted: 4, accepted: 2 });
        w.push(AcceptRecord { spec_length: 2, drafted: 2, accepted: 2 });
        assert_eq!(w.len(), 2);
        assert_eq!(w.ratio_for(4), Some(0.5));
        assert_eq!(w.ratio_for(2), Some(1.0));
        assert_eq!(w.ratio_for(3), None);
        assert_eq!(w.mean_ratio(), Some(0.75));
    }
}
