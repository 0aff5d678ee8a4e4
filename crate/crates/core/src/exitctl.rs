//! Acceptance-aware early-exit gate.
//!
//! Two decisions are made during verification. The batch-level gate asks
//! whether pruning at layer `l` can still pay for itself:
//!
//! ```text
//! k_rej   = sum_i s_i * (1 - a_i)                  prunable-token estimate
//! dL_ee   = L * T_ee / T_t                         estimator latency in layers
//! L_r'    = max(L - l - dL_ee, 0)
//! T_save  = (L_r' / L) * T_t
//! prune  <=> T_save > T_pr
//! ```
//!
//! with `T_t`, `T_ee` and `T_pr` evaluated at `max(1, ceil(k_rej))` tokens.
//! The token-level test marks a drafted token as a prune candidate when at
//! least `K_l` vocabulary entries have a strictly larger intermediate logit,
//! i.e. it sits outside the Top-`K_l` set.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::latmodel::{LatencyModels, SmSplit, StageKind};
use crate::toylm::{LogitVector, Token};

/// Where token-wise exit applies and how strict the Top-K test is per layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExitPolicy {
    /// First layer whose hidden state may trigger an exit.
    pub l_init: usize,
    /// `K` at `l_init`.
    pub k_init: usize,
    /// `K` at the last layer.
    pub k_final: usize,
}

impl Default for ExitPolicy {
    fn default() -> Self {
        Self {
            l_init: 8,
            k_init: 10,
            k_final: 2,
        }
    }
}

impl ExitPolicy {
    /// A policy that never exits.
    pub fn disabled() -> Self {
        Self {
            l_init: usize::MAX,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.l_init == 0 {
            return Err(invalid("l_init must be at least 1"));
        }
        if self.k_final == 0 || self.k_init < self.k_final {
            return Err(invalid("K schedule must satisfy k_init >= k_final >= 1"));
        }
        Ok(())
    }

    pub fn is_active(&self, layers: usize) -> bool {
        self.l_init < layers
    }

    /// `K_l`: linear from `k_init` at `l_init` down to `k_final` at `layers`.
    pub fn k_at(&self, layer: usize, layers: usize) -> usize {
        if layer <= self.l_init || layers <= self.l_init {
            return self.k_init;
        }
        if layer >= layers {
            return self.k_final;
        }
        let t = (layer - self.l_init) as f64 / (layers - self.l_init) as f64;
        let k = self.k_init as f64 + t * (self.k_final as f64 - self.k_init as f64);
        (k.round() as usize).clamp(self.k_final, self.k_init)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitDecision {
    Keep,
    PruneCandidate,
}

/// Count-threshold form of the Top-K test.
pub fn token_exit_test(logits: &LogitVector, drafted: Token, k: usize) -> Result<ExitDecision> {
    if k == 0 {
        return Err(invalid("K must be at least 1"));
    }
    if drafted as usize >= logits.len() {
        return Err(invalid(format!("token {drafted} outside logit vector")));
    }
    Ok(decide(logits.count_greater(drafted), k))
}

pub(crate) fn decide(greater: usize, k: usize) -> ExitDecision {
    if greater >= k {
        ExitDecision::PruneCandidate
    } else {
        ExitDecision::Keep
    }
}

/// Speculative length and windowed acceptance of one request in the batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchEntry {
    pub spec_length: usize,
    pub acceptance: f64,
}

/// Expected number of drafted tokens in rejected suffixes across the batch.
pub fn estimate_prunable(batch: &[BatchEntry]) -> Result<f64> {
    batch.iter().try_fold(0.0, |acc, e| {
        if !(0.0..=1.0).contains(&e.acceptance) {
            return Err(invalid(format!("acceptance {} outside [0, 1]", e.acceptance)));
        }
        Ok(acc + e.spec_length as f64 * (1.0 - e.acceptance))
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Saving {
    /// Estimator latency expressed in verification layers.
    pub delta_layers_ee: f64,
    /// Remaining depth that pruning can still shorten.
    pub remaining_layers: f64,
    /// Verification time pruning can still save, ms.
    pub time_saved: f64,
}

/// Savings arithmetic from already-evaluated stage latencies.
pub fn saving_from_latencies(layer: usize, layers: usize, t_ee: f64, t_t: f64) -> Result<Saving> {
    if layer == 0 || layer > layers {
        return Err(invalid(format!("layer {layer} outside [1, {layers}]")));
    }
    if t_t <= 0.0 {
        return Err(invalid("target verification time must be positive"));
    }
    let l = layers as f64;
    let delta = l * t_ee / t_t;
    let remaining = (l - layer as f64 - delta).max(0.0);
    Ok(Saving {
        delta_layers_ee: delta,
        remaining_layers: remaining,
        time_saved: remaining / l * t_t,
    })
}

/// Token count used for the gate's latency lookups.
pub fn gate_token_count(prunable: f64) -> f64 {
    prunable.ceil().max(1.0)
}

pub fn effective_saving(
    layer: usize,
    layers: usize,
    b: f64,
    s_eff: f64,
    split: SmSplit,
    models: &LatencyModels,
) -> Result<Saving> {
    if s_eff < 0.0 {
        return Err(invalid("token count must be non-negative"));
    }
    let t_t = models.latency(StageKind::Target, b, s_eff, split)?;
    let t_ee = models.latency(StageKind::EarlyExitCheck, b, s_eff, split)?;
    saving_from_latencies(layer, layers, t_ee, t_t)
}

/// Strict comparison: equal saving and overhead does not prune.
pub fn prune_trigger(time_saved: f64, prune_overhead: f64) -> bool {
    time_saved > prune_overhead
}

pub fn should_prune(
    layer: usize,
    layers: usize,
    batch: &[BatchEntry],
    b: f64,
    split: SmSplit,
    models: &LatencyModels,
) -> Result<bool> {
    let s_eff = gate_token_count(estimate_prunable(batch)?);
    let saving = effective_saving(layer, layers, b, s_eff, split, models)?;
    let t_pr = models.latency(StageKind::Prune, b, s_eff, split)?;
    Ok(prune_trigger(saving.time_saved, t_pr))
}

/// Per-layer pruning permission consulted during one verification pass.
pub trait PruneGate {
    fn should_prune(&self, layer: usize) -> bool;

    /// Layers that elapse between an estimator invocation and its mask
    /// taking effect.
    fn decision_delay_layers(&self) -> f64 {
        0.0
    }
}

/// Gate that is open at every layer.
#[derive(Clone, Copy, Debug, Default)]
pub struct AlwaysPrune;

impl PruneGate for AlwaysPrune {
    fn should_prune(&self, _layer: usize) -> bool {
        true
    }
}

/// Gate that never opens.
#[derive(Clone, Copy, Debug, Default)]
pub struct NeverPrune;

impl PruneGate for NeverPrune {
    fn should_prune(&self, _layer: usize) -> bool {
        false
    }
}

/// The batch gate evaluated once per verification pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchGate {
    open: Vec<bool>,
    delay: f64,
    prunable: f64,
}

impl BatchGate {
    pub fn evaluate(
        policy: &ExitPolicy,
        layers: usize,
        batch: &[BatchEntry],
        b: f64,
        split: SmSplit,
        models: &LatencyModels,
    ) -> Result<Self> {
        let prunable = estimate_prunable(batch)?;
        let mut open = vec![false; layers + 1];
        let mut delay = 0.0;
        if policy.is_active(layers) && !batch.is_empty() {
            let s_eff = gate_token_count(prunable);
            let t_t = models.latency(StageKind::Target, b, s_eff, split)?;
            let t_ee = models.latency(StageKind::EarlyExitCheck, b, s_eff, split)?;
            let t_pr = models.latency(StageKind::Prune, b, s_eff, split)?;
            for (layer, slot) in open.iter_mut().enumerate().take(layers).skip(policy.l_init) {
                let saving = saving_from_latencies(layer, layers, t_ee, t_t)?;
                delay = saving.delta_layers_ee;
                *slot = prune_trigger(saving.time_saved, t_pr);
            }
        }
        Ok(Self {
            open,
            delay,
            prunable,
        })
    }

    pub fn prunable_estimate(&self) -> f64 {
        self.prunable
    }

    pub fn open_layers(&self) -> usize {
        self.open.iter().filter(|&&o| o).count()
    }
}

impl PruneGate for BatchGate {
    fn should_prune(&self, layer: usize) -> bool {
        self.open.get(layer).copied().unwrap_or(false)
    }

    fn decision_delay_layers(&self) -> f64 {
        self.delay
    }
}
