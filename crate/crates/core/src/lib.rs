//! Speculative-decoding serving lab.
//!
//! A deterministic toy model pair, latency models of the draft, verify and
//! pruning stages, three controllers (adaptive speculative length,
//! token-wise early exit, draft/verify overlap) and a discrete-event
//! simulator that runs them under continuous batching.

pub mod drafter;
pub mod error;
pub mod exitctl;
pub mod latmodel;
pub mod overlap;
pub mod sdcore;
pub mod simd;
pub mod toylm;

pub use error::{Error, Result};

// Book chapters, so `cargo test` runs their code blocks.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/toy-model.md")]
    mod toy_model {}
    #[doc = include_str!("../../../book/src/speculative-rounds.md")]
    mod speculative_rounds {}
    #[doc = include_str!("../../../book/src/latency-models.md")]
    mod latency_models {}
    #[doc = include_str!("../../../book/src/adaptive-drafting.md")]
    mod adaptive_drafting {}
    #[doc = include_str!("../../../book/src/early-exit.md")]
    mod early_exit {}
    #[doc = include_str!("../../../book/src/overlap.md")]
    mod overlap {}
    #[doc = include_str!("../../../book/src/simulator.md")]
    mod simulator {}
    #[doc = include_str!("../../../book/src/configuration.md")]
    mod configuration {}
    #[doc = include_str!("../../../book/src/metrics-schema.md")]
    mod metrics_schema {}
}
