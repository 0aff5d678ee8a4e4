//! Discrete-event serving simulator.
//!
//! Requests join the running batch only at iteration boundaries. Each
//! iteration drafts, optionally plans an overlapped pipeline, verifies with
//! or without token-wise exit, commits, and advances the clock by the
//! iteration's latency under the ground-truth models. Controllers consult
//! their own (usually fitted) copy of the models.

pub mod config;
pub mod engine;
pub mod metrics;
pub mod workload;

pub use config::{
    LatencyConfig, LenRange, Mode, ModelSource, OverlapConfig, OverlapSwitch, RateSegment, RateSpec,
    SimConfig, SimSettings, WorkloadConfig,
};
pub use engine::{controller_models, run, Simulator};
pub use metrics::{IterationRecord, Metrics, RequestRecord, Summary};
pub use workload::{arrivals_for, ingest_trace, parse_trace, synth_prompt, synth_workload, Arrival, TraceRecord};
