use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::drafter::DrafterConfig;
use crate::error::{Error, Result};
use crate::exitctl::ExitPolicy;
use crate::latmodel::{LatencyModels, ProfileGrid};
use crate::overlap::DEFAULT_R_GRID;
use crate::toylm::ToyLmConfig;

/// Which controllers run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Fixed speculative length, serial, no early exit.
    #[serde(rename = "VSD")]
    Vsd,
    /// Adds the adaptive drafter.
    #[serde(rename = "VSD_AD")]
    VsdAd,
    /// Adds token-wise early exit.
    #[serde(rename = "VSD_AD_EE")]
    VsdAdEe,
    /// Adds draft/verify overlap.
    #[serde(rename = "FULL")]
    Full,
}

impl Mode {
    pub const LADDER: [Mode; 4] = [Mode::Vsd, Mode::VsdAd, Mode::VsdAdEe, Mode::Full];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Vsd => "VSD",
            Mode::VsdAd => "VSD_AD",
            Mode::VsdAdEe => "VSD_AD_EE",
            Mode::Full => "FULL",
        }
    }

    pub fn adaptive(self) -> bool {
        self != Mode::Vsd
    }

    pub fn early_exit(self) -> bool {
        matches!(self, Mode::VsdAdEe | Mode::Full)
    }

    pub fn overlap(self) -> bool {
        self == Mode::Full
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::LADDER
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?}")))
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapSwitch {
    /// Overlap follows the mode.
    #[default]
    Auto,
    On,
    Off,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OverlapConfig {
    pub switch: OverlapSwitch,
    pub r_grid: Vec<f64>,
}

impl Default for OverlapConfig {
    fn default() -> Self {
        Self {
            switch: OverlapSwitch::Auto,
            r_grid: DEFAULT_R_GRID.to_vec(),
        }
    }
}

/// Models the controllers see.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSource {
    /// Fitted once per run from a synthetic profile of the ground truth.
    #[default]
    Fitted,
    /// The ground truth itself.
    GroundTruth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatencyConfig {
    pub source: ModelSource,
    /// Multiplicative profiling noise for the fit.
    pub profile_noise: f64,
    pub grid: ProfileGrid,
    /// Clock models; the fit profiles these.
    pub truth: LatencyModels,
}

impl Default for LatencyConfig {
    fn default() -> Self {
        Self {
            source: ModelSource::Fitted,
            profile_noise: 0.05,
            grid: ProfileGrid::default(),
            truth: LatencyModels::default_ground_truth(),
        }
    }
}

/// Inclusive integer range sampled uniformly.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LenRange {
    pub min: usize,
    pub max: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateSegment {
    pub duration_s: f64,
    pub rate: f64,
}

/// Arrival rate over time, in requests per second.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RateSpec {
    Constant { rate: f64 },
    /// Segments repeat until the duration is covered.
    Piecewise { segments: Vec<RateSegment> },
    Sinusoidal { mean: f64, amplitude: f64, period_s: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WorkloadConfig {
    Trace {
        path: PathBuf,
    },
    Synthetic {
        rate: RateSpec,
        duration_s: f64,
        input_len: LenRange,
        output_len: LenRange,
    },
    /// `requests` arrivals at time zero.
    Closed {
        requests: usize,
        input_len: usize,
        output_len: usize,
    },
}

impl Default for WorkloadConfig {
    /// Alternating 10 s peaks at 45 req/s and 10 s valleys at 7 req/s for
    /// 60 s, 26 req/s on average.
    fn default() -> Self {
        WorkloadConfig::Synthetic {
            rate: RateSpec::Piecewise {
                segments: vec![
                    RateSegment {
                        duration_s: 10.0,
                        rate: 45.0,
                    },
                    RateSegment {
                        duration_s: 10.0,
                        rate: 7.0,
                    },
                ],
            },
            duration_s: 60.0,
            input_len: LenRange { min: 8, max: 32 },
            output_len: LenRange { min: 16, max: 48 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSettings {
    pub mode: Mode,
    /// Length used when the drafter is off.
    pub fixed_spec_length: usize,
    pub max_batch: usize,
    /// Verification rounds in each request's acceptance window.
    pub accept_window: usize,
    /// Emit one record per iteration.
    pub record_iterations: bool,
    /// Compare every output against plain autoregressive decoding.
    pub oracle_check: bool,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            mode: Mode::Full,
            fixed_spec_length: 4,
            max_batch: 256,
            accept_window: crate::sdcore::DEFAULT_ACCEPT_WINDOW,
            record_iterations: false,
            oracle_check: false,
        }
    }
}

/// Everything a run needs, one section per module.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub sim: SimSettings,
    pub toylm: ToyLmConfig,
    pub latency: LatencyConfig,
    pub drafter: DrafterConfig,
    pub exit: ExitPolicy,
    pub overlap: OverlapConfig,
    pub workload: WorkloadConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            sim: SimSettings::default(),
            toylm: ToyLmConfig::default(),
            latency: LatencyConfig::default(),
            drafter: DrafterConfig::default(),
            exit: ExitPolicy::default(),
            overlap: OverlapConfig::default(),
            workload: WorkloadConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: &str| Err(Error::Config(m.to_string()));
        if self.sim.fixed_spec_length == 0 {
            return cfg("fixed_spec_length must be at least 1");
        }
        if self.sim.max_batch == 0 {
            return cfg("max_batch must be at least 1");
        }
        if self.sim.accept_window == 0 {
            return cfg("accept_window must be at least 1");
        }
        if self.overlap.r_grid.iter().any(|&r| !(r > 0.0 && r < 1.0)) {
            return cfg("overlap r_grid entries must lie in (0, 1)");
        }
        if self.overlap.r_grid.is_empty() {
            return cfg("overlap r_grid is empty");
        }
        if !(self.latency.profile_noise >= 0.0) {
            return cfg("profile_noise must be non-negative");
        }
        self.drafter.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.exit.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.exit.l_init > self.toylm.layers {
            return cfg("exit l_init exceeds the layer count");
        }
        if let WorkloadConfig::Synthetic {
            input_len,
            output_len,
            duration_s,
            ..
        } = &self.workload
        {
            if input_len.min == 0 || input_len.min > input_len.max || output_len.min > output_len.max {
                return cfg("length ranges must be non-empty with input length at least 1");
            }
            if !(*duration_s >= 0.0) {
                return cfg("duration must be non-negative");
            }
        }
        if let WorkloadConfig::Closed { input_len, .. } = &self.workload {
            if *input_len == 0 {
                return cfg("input length must be at least 1");
            }
        }
        Ok(())
    }

    /// Whether overlap planning runs in this configuration.
    pub fn overlap_active(&self) -> bool {
        match self.overlap.switch {
            OverlapSwitch::Auto => self.sim.mode.overlap(),
            OverlapSwitch::On => true,
            OverlapSwitch::Off => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let c = SimConfig::default();
        let text = c.to_toml().unwrap();
        assert_eq!(SimConfig::from_toml(&text).unwrap(), c);
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let c = SimConfig::from_toml("seed = 9\n[sim]\nmode = \"VSD\"\n").unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.sim.mode, Mode::Vsd);
        assert_eq!(c.sim.max_batch, 256);
        assert!(SimConfig::from_toml("[sim]\nbogus = 1\n").is_err());
    }

    #[test]
    fn mode_names() {
        for m in Mode::LADDER {
            assert_eq!(m.name().parse::<Mode>().unwrap(), m);
        }
        assert!("nope".parse::<Mode>().is_err());
    }
}
