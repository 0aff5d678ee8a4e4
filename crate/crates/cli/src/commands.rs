use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use speclab::latmodel::{models_from_fits, profile_and_fit, StageFit};
use speclab::simd::{arrivals_for, controller_models, Metrics, Mode, OverlapSwitch, SimConfig, Simulator, WorkloadConfig};
use speclab::toylm::LayeredToyLm;

use crate::output::{write_csv, write_run, RunManifest};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Axis {
    Batch,
    #[value(name = "spec_length")]
    SpecLength,
    #[value(name = "sm_split")]
    SmSplit,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Batch => "batch",
            Axis::SpecLength => "spec_length",
            Axis::SmSplit => "sm_split",
        }
    }

    pub fn default_values(self) -> Vec<f64> {
        match self {
            Axis::Batch => vec![16.0, 32.0, 64.0, 128.0, 256.0],
            Axis::SpecLength => (1..=10).map(f64::from).collect(),
            Axis::SmSplit => (1..=9).map(|i| f64::from(i) / 10.0).collect(),
        }
    }

    /// The configuration one sweep point runs.
    ///
    /// `batch` turns the workload into a closed batch of that many requests
    /// (keeping closed-workload lengths when the config already has them);
    /// `spec_length` runs VSD at that fixed length; `sm_split` forces overlap
    /// planning with a single draft fraction.
    pub fn apply(self, base: &SimConfig, value: f64) -> Result<SimConfig> {
        let mut c = base.clone();
        let count = |v: f64| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                bail!("{} value {v} must be a positive integer", self.name())
            }
        };
        match self {
            Axis::Batch => {
                let b = count(value)?;
                let (input_len, output_len) = match c.workload {
                    WorkloadConfig::Closed {
                        input_len,
                        output_len,
                        ..
                    } => (input_len, output_len),
                    _ => (16, 64),
                };
                c.workload = WorkloadConfig::Closed {
                    requests: b,
                    input_len,
                    output_len,
                };
                c.sim.max_batch = b;
            }
            Axis::SpecLength => {
                c.sim.mode = Mode::Vsd;
                c.sim.fixed_spec_length = count(value)?;
            }
            Axis::SmSplit => {
                c.overlap.switch = OverlapSwitch::On;
                c.overlap.r_grid = vec![value];
            }
        }
        c.validate()?;
        Ok(c)
    }
}

fn check_oracle(label: &str, m: &Metrics) -> Result<()> {
    match m.summary.oracle_mismatches {
        Some(n) if n > 0 => bail!("{label}: {n} request(s) differ from autoregressive decoding"),
        _ => Ok(()),
    }
}

fn load_fits(path: &Path) -> Result<Vec<StageFit>> {
    let text = fs::read_to_string(path).with_context(|| format!("config error: cannot read params file {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("config error: bad params file {}", path.display()))
}

fn simulate_once(config: &SimConfig, params: Option<&[StageFit]>) -> Result<Metrics> {
    let model = LayeredToyLm::new(config.toylm.clone())?;
    let arrivals = arrivals_for(&config.workload, config.seed)?;
    let control = match params {
        Some(f) => models_from_fits(f)?,
        None => controller_models(config)?.0,
    };
    Ok(Simulator::new(config, &model, control)?.run(&arrivals)?)
}

#[derive(Serialize)]
struct SampleRow {
    stage: &'static str,
    b: f64,
    s: f64,
    share: f64,
    latency_ms: f64,
}

#[derive(Serialize)]
struct MapeRow {
    stage: &'static str,
    train_samples: usize,
    heldout_samples: usize,
    heldout_mape: f64,
}

pub fn profile(config: &SimConfig, out: &Path) -> Result<()> {
    RunManifest::new("profile", vec![], config)?.write(out)?;
    let lat = &config.latency;
    let (samples, fits) = profile_and_fit(&lat.truth, &lat.grid, lat.profile_noise, config.seed)?;
    write_csv(
        &out.join("profile.csv"),
        samples.iter().map(|s| SampleRow {
            stage: s.stage.name(),
            b: s.b,
            s: s.s,
            share: s.share,
            latency_ms: s.latency,
        }),
    )?;
    write_csv(
        &out.join("mape.csv"),
        fits.iter().map(|f| MapeRow {
            stage: f.params.stage.name(),
            train_samples: f.train_samples,
            heldout_samples: f.heldout_samples,
            heldout_mape: f.heldout_mape,
        }),
    )?;
    fs::write(out.join("fits.json"), serde_json::to_string_pretty(&fits)? + "\n")?;
    Ok(())
}

pub fn simulate(config: &SimConfig, params: Option<&Path>, out: &Path) -> Result<Metrics> {
    let mut args = vec![];
    let fits = match params {
        Some(p) => {
            let f = load_fits(p)?;
            args.push(("params".to_string(), serde_json::to_string(&f)?));
            Some(f)
        }
        None => None,
    };
    RunManifest::new("simulate", args, config)?.write(out)?;
    let m = simulate_once(config, fits.as_deref())?;
    write_run(out, &m)?;
    check_oracle("simulate", &m)?;
    Ok(m)
}

#[derive(Debug, Serialize)]
struct SweepRow<'a> {
    axis: &'a str,
    value: f64,
    mean_latency_ms: f64,
    tpot_ms: f64,
    throughput_tps: f64,
    verify_share: f64,
    acceptance_ratio: f64,
}

fn point_dir(out: &Path, label: &str) -> PathBuf {
    out.join("runs").join(label)
}

pub fn sweep(config: &SimConfig, axis: Axis, values: &[f64], out: &Path) -> Result<()> {
    if values.is_empty() {
        bail!("sweep needs at least one value");
    }
    let listed = values.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
    RunManifest::new(
        "sweep",
        vec![("axis".into(), axis.name().into()), ("values".into(), listed)],
        config,
    )?
    .write(out)?;
    let configs = values
        .iter()
        .map(|&v| axis.apply(config, v))
        .collect::<Result<Vec<_>>>()?;
    let runs: Vec<Metrics> = configs
        .par_iter()
        .zip(values)
        .map(|(c, v)| {
            let dir = point_dir(out, &format!("{}={v}", axis.name()));
            RunManifest::new("simulate", vec![], c)?.write(&dir)?;
            let m = simulate_once(c, None)?;
            write_run(&dir, &m)?;
            Ok(m)
        })
        .collect::<Result<_>>()?;
    write_csv(
        &out.join("sweep.csv"),
        runs.iter().zip(values).map(|(m, &value)| SweepRow {
            axis: axis.name(),
            value,
            mean_latency_ms: m.summary.mean_latency_ms,
            tpot_ms: m.summary.tpot_ms,
            throughput_tps: m.summary.throughput_tps,
            verify_share: m.summary.verify_share,
            acceptance_ratio: m.summary.acceptance_ratio,
        }),
    )?;
    for (m, v) in runs.iter().zip(values) {
        check_oracle(&format!("{}={v}", axis.name()), m)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct AblationRow<'a> {
    mode: &'a str,
    mean_latency_ms: f64,
    p99_latency_ms: f64,
    tpot_ms: f64,
    throughput_tps: f64,
    acceptance_ratio: f64,
    layer_work_ratio: f64,
}

pub fn ablate(config: &SimConfig, out: &Path) -> Result<Vec<Metrics>> {
    RunManifest::new("ablate", vec![], config)?.write(out)?;
    let runs: Vec<Metrics> = Mode::LADDER
        .par_iter()
        .map(|&mode| {
            let mut c = config.clone();
            c.sim.mode = mode;
            let dir = point_dir(out, mode.name());
            RunManifest::new("simulate", vec![], &c)?.write(&dir)?;
            let m = simulate_once(&c, None)?;
            write_run(&dir, &m)?;
            Ok(m)
        })
        .collect::<Result<_>>()?;
    write_csv(
        &out.join("ablation.csv"),
        runs.iter().map(|m| AblationRow {
            mode: &m.summary.mode,
            mean_latency_ms: m.summary.mean_latency_ms,
            p99_latency_ms: m.summary.p99_latency_ms,
            tpot_ms: m.summary.tpot_ms,
            throughput_tps: m.summary.throughput_tps,
            acceptance_ratio: m.summary.acceptance_ratio,
            layer_work_ratio: m.summary.layer_work_ratio,
        }),
    )?;
    for m in &runs {
        check_oracle(&m.summary.mode, m)?;
    }
    Ok(runs)
}
