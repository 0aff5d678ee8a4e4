use proptest::prelude::*;
use speclab::exitctl::{AlwaysPrune, ExitPolicy, NeverPrune, PruneGate};
use speclab::sdcore::{commit, draft_tokens, full_verify, verify_with_early_exit, Frontier, Request};
use speclab::toylm::{LayeredToyLm, ToyLmConfig, Token};

fn model(eta: f64) -> LayeredToyLm {
    LayeredToyLm::new(ToyLmConfig {
        draft_divergence: eta,
        ..ToyLmConfig::default()
    })
    .unwrap()
}

/// Gate open from a fixed layer on, with a decision delay.
struct OpenFrom(usize, f64);

impl PruneGate for OpenFrom {
    fn should_prune(&self, layer: usize) -> bool {
        layer >= self.0
    }

    fn decision_delay_layers(&self) -> f64 {
        self.1
    }
}

/// Serve one request to completion; returns its output and the per-round commit counts.
fn serve(
    m: &LayeredToyLm,
    prompt: &[Token],
    max_out: usize,
    lengths: &[usize],
    policy: &ExitPolicy,
    gate: &dyn PruneGate,
) -> (Vec<Token>, Vec<usize>) {
    let mut req = Request::new(0, 0.0, prompt.to_vec(), max_out).unwrap().with_eos(m.eos());
    let mut per_round = vec![];
    let mut i = 0;
    while !req.done {
        let s = lengths[i % lengths.len()];
        i += 1;
        req.spec_length = s;
        let drafted = draft_tokens(m, &req, s).unwrap();
        let out = verify_with_early_exit(m, &req, &drafted, policy, gate).unwrap();
        per_round.push(commit(&mut req, &out).unwrap());
    }
    (req.committed, per_round)
}

#[test]
fn lossless_across_divergences_and_exit() {
    let policy = ExitPolicy::default();
    for eta in [0.0, 0.3, 0.5, 0.7, 1.0] {
        let m = model(eta);
        for seed in 0..40u32 {
            let prompt = vec![seed % 63, (seed * 7) % 63, 3];
            let want = m.autoregressive_decode(&prompt, 50).unwrap();
            let (plain, _) = serve(&m, &prompt, 50, &[4], &policy, &NeverPrune);
            let (ee, _) = serve(&m, &prompt, 50, &[1, 6, 3, 10], &policy, &AlwaysPrune);
            assert_eq!(plain, want, "eta {eta} prompt {prompt:?}");
            assert_eq!(ee, want, "eta {eta} prompt {prompt:?} with exit");
        }
    }
}

#[test]
fn length_one_commits_exactly_one_token() {
    let m = model(0.5);
    let (out, rounds) = serve(&m, &[1, 2, 3], 25, &[1], &ExitPolicy::default(), &AlwaysPrune);
    assert!(rounds.iter().all(|&c| c == 1));
    assert_eq!(out.len(), rounds.len());
}

#[test]
fn stale_and_finished_commits_are_rejected() {
    let m = model(0.35);
    let mut req = Request::new(1, 0.0, vec![4, 5], 3).unwrap();
    let d = draft_tokens(&m, &req, 2).unwrap();
    let out = full_verify(&m, &req, &d).unwrap();
    commit(&mut req, &out).unwrap();
    assert!(commit(&mut req, &out).is_err());
    while !req.done {
        let d = draft_tokens(&m, &req, 4).unwrap();
        let o = full_verify(&m, &req, &d).unwrap();
        commit(&mut req, &o).unwrap();
    }
    assert_eq!(req.committed.len(), 3);
    assert!(draft_tokens(&m, &req, 1).is_err());
    assert!(Request::new(2, 0.0, vec![], 3).is_err());
    assert!(full_verify(&m, &Request::new(3, 0.0, vec![1], 3).unwrap(), &[]).is_err());
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
    assert!(f.mark_verified(6).is_err());
    f.reset(13);
    assert_eq!((f.base, f.drafted.len(), f.verified_upto), (13, 0, 0));
    assert!(Frontier::new(0, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn speculative_output_equals_greedy(
        prompt in prop::collection::vec(0u32..63, 1..6),
        lengths in prop::collection::vec(1usize..=10, 1..5),
        eta in 0.0f64..=1.0,
        l_init in 1usize..31,
        open_from in 1usize..32,
        delay in 0.0f64..6.0,
        max_out in 1usize..40,
    ) {
        let m = model(eta);
        let policy = ExitPolicy { l_init, ..ExitPolicy::default() };
        let (out, rounds) = serve(&m, &prompt, max_out, &lengths, &policy, &OpenFrom(open_from, delay));
        prop_assert_eq!(out, m.autoregressive_decode(&prompt, max_out).unwrap());
        prop_assert!(rounds.iter().all(|&c| c >= 1));
    }

    #[test]
    fn verification_bookkeeping(
        prompt in prop::collection::vec(0u32..63, 1..6),
        s in 1usize..=10,
        eta in 0.0f64..=1.0,
        delay in 0.0f64..6.0,
    ) {
        let m = model(eta);
        let mut req = Request::new(0, 0.0, prompt, 64).unwrap();
        req.spec_length = s;
        let drafted = draft_tokens(&m, &req, s).unwrap();
        let out = verify_with_early_exit(&m, &req, &drafted, &ExitPolicy::default(), &OpenFrom(1, delay)).unwrap();
        let full = full_verify(&m, &req, &drafted).unwrap();
        let l = m.layers() as f64;

        // pruning shortens rows from the back, never the front
        for w in out.row_layers.windows(2) {
            prop_assert!(w[0] >= w[1]);
        }
        prop_assert!(out.row_layers.iter().all(|&x| x > 0.0 && x <= l));
        prop_assert!(out.full_layers_run <= full.full_layers_run);
        prop_assert_eq!(full.full_layers_run, l * drafted.len() as f64);
        let pruned_rows: usize = out.prune_log.iter().map(|e| e.rows).sum();
        prop_assert!(pruned_rows < drafted.len());
        for w in out.prune_log.windows(2) {
            prop_assert!(w[0].layer < w[1].layer && w[1].first_row < w[0].first_row);
        }

        // accepted tokens are a prefix of the draft matching the target
        prop_assert!(out.accepted_count() <= full.accepted_count());
        prop_assert_eq!(&out.accepted[..], &full.accepted[..out.accepted_count()]);
        if out.false_prune {
            prop_assert!(out.recovery_token.is_none());
        }
        if out.recovery_token.is_some() {
            prop_assert_eq!(out.recovery_token, full.recovery_token);
            prop_assert_eq!(out.accepted_count(), full.accepted_count());
        }

        let before = req.accept_window.len();
        let n = commit(&mut req, &out).unwrap();
        prop_assert_eq!(n, out.accepted_count() + usize::from(out.recovery_token.is_some()));
        let rec = req.accept_window.iter().last().copied().unwrap();
        prop_assert_eq!(req.accept_window.len(), before + 1);
        prop_assert_eq!((rec.spec_length, rec.drafted, rec.accepted), (s, drafted.len(), out.accepted_count()));
        prop_assert!(rec.ratio() >= 0.0 && rec.ratio() <= 1.0);
    }
}
