use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use speclab::exitctl::{estimate_prunable, token_exit_test, BatchEntry, BatchGate, ExitDecision, ExitPolicy, PruneGate};
use speclab::latmodel::{LatencyModels, SmSplit};
use speclab::sdcore::{draft_tokens, Request};
use speclab::toylm::{LayeredToyLm, LogitVector, ToyLmConfig, Token};

/// Sort descending with ties broken toward the drafted token, keep the first K.
fn top_k_oracle(logits: &[f64], drafted: Token, k: usize) -> ExitDecision {
    let mut idx: Vec<usize> = (0..logits.len()).collect();
    idx.sort_by(|&a, &b| {
        logits[b]
            .partial_cmp(&logits[a])
            .expect("finite logits")
            .then_with(|| (b == drafted as usize).cmp(&(a == drafted as usize)))
    });
    if idx[..k.min(idx.len())].contains(&(drafted as usize)) {
        ExitDecision::Keep
    } else {
        ExitDecision::PruneCandidate
    }
}

#[test]
fn count_threshold_matches_sorted_top_k() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for i in 0..2_000 {
        let v = rng.random_range(2..80);
        let mut z: Vec<f64> = (0..v).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        if i % 4 == 0 {
            // coarse values force ties
            z.iter_mut().for_each(|x| *x = (*x * 2.0).round());
        }
        let d = rng.random_range(0..v) as Token;
        let k = rng.random_range(1..=v);
        let lv = LogitVector(z.clone());
        assert_eq!(token_exit_test(&lv, d, k).unwrap(), top_k_oracle(&z, d, k), "vector {i}");
    }
}

#[test]
fn rank_examples() {
    let z: Vec<f64> = (0..20).map(|i| -(i as f64)).collect();
    let lv = LogitVector(z);
    assert_eq!(token_exit_test(&lv, 0, 1).unwrap(), ExitDecision::Keep);
    assert_eq!(token_exit_test(&lv, 10, 10).unwrap(), ExitDecision::PruneCandidate);
    assert_eq!(token_exit_test(&lv, 9, 10).unwrap(), ExitDecision::Keep);
    assert!(token_exit_test(&lv, 0, 0).is_err());
    assert!(token_exit_test(&lv, 20, 1).is_err());
}

#[test]
fn zero_acceptance_maximizes_prunable() {
    let lens = [3, 6, 1, 10];
    let max: f64 = lens.iter().sum::<usize>() as f64;
    let at = |a: f64| {
        estimate_prunable(&lens.map(|s| BatchEntry {
            spec_length: s,
            acceptance: a,
        }))
        .unwrap()
    };
    assert_eq!(at(0.0), max);
    for a in [0.1, 0.5, 0.9, 1.0] {
        assert!(at(a) < max);
    }
}

/// Fraction of target-accepted drafted tokens that the Top-K test would flag at `layer`.
fn false_prune_rate(m: &LayeredToyLm, policy: &ExitPolicy, layer: usize, episodes: usize) -> f64 {
    let (mut flagged, mut accepted) = (0usize, 0usize);
    let k = policy.k_at(layer, m.layers());
    for e in 0..episodes as u64 {
        let prompt = vec![(e % 63) as Token, ((e * 31 + 7) % 63) as Token];
        let req = Request::new(e, 0.0, prompt, 64).unwrap();
        let drafted = draft_tokens(m, &req, 8).unwrap();
        let mut ctx = req.context();
        for &t in &drafted {
            if m.target_next(&ctx).unwrap() == t {
                accepted += 1;
                let logits = m.target_logits(&ctx, layer).unwrap();
                if token_exit_test(&logits, t, k).unwrap() == ExitDecision::PruneCandidate {
                    flagged += 1;
                }
            }
            ctx.push(t);
        }
    }
    flagged as f64 / accepted.max(1) as f64
}

#[test]
fn early_layers_prune_accepted_tokens_at_least_as_often() {
    let m = LayeredToyLm::new(ToyLmConfig {
        draft_divergence: 0.5,
        ..ToyLmConfig::default()
    })
    .unwrap();
    let policy = ExitPolicy::default();
    let early = false_prune_rate(&m, &policy, policy.l_init, 1_500);
    let late = false_prune_rate(&m, &policy, m.layers() - 4, 1_500);
    assert!(early >= late, "false-prune rate {early} at l_init, {late} at L-4");
}

proptest! {
    #[test]
    fn gate_never_reopens_with_depth(
        b in 1.0f64..300.0,
        lens in prop::collection::vec((1usize..=10, 0.0f64..=1.0), 1..16),
        r in prop::sample::select(vec![0.0, 0.2, 0.5, 0.8]),
        l_init in 1usize..31,
    ) {
        let batch: Vec<BatchEntry> = lens.iter().map(|&(s, a)| BatchEntry { spec_length: s, acceptance: a }).collect();
        let split = if r == 0.0 { SmSplit::Serial } else { SmSplit::Split(r) };
        let policy = ExitPolicy { l_init, ..ExitPolicy::default() };
        let gate = BatchGate::evaluate(&policy, 32, &batch, b, split, &LatencyModels::default_ground_truth()).unwrap();
        let open: Vec<bool> = (0..=32).map(|l| gate.should_prune(l)).collect();
        prop_assert!(open[..l_init].iter().all(|&o| !o));
        if let Some(first_closed) = (l_init..=32).find(|&l| !open[l]) {
            prop_assert!(open[first_closed..].iter().all(|&o| !o), "{:?}", open);
        }
        prop_assert_eq!(gate.open_layers(), open.iter().filter(|&&o| o).count());
    }

    #[test]
    fn k_schedule_stays_within_endpoints(k_final in 1usize..6, extra in 0usize..10, l_init in 1usize..32, layer in 0usize..40) {
        let p = ExitPolicy { l_init, k_init: k_final + extra, k_final };
        let k = p.k_at(layer, 32);
        prop_assert!(k >= k_final && k <= k_final + extra);
        if layer + 1 < 32 {
            prop_assert!(p.k_at(layer + 1, 32) <= k);
        }
    }
}
