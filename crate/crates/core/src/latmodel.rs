//! Piecewise-linear stage latency models and the offline profiler.
//!
//! Every stage latency is a resource factor times a load term:
//!
//! ```text
//! T(b, s, x) = f(x) * load(b, s)
//! f(x) = a1 - g1 * x          for 0 < x <= R
//!        a2 - g2 * x          for R < x <= 1
//! ```
//!
//! where `x` is the SM share the stage itself runs on. The draft and the
//! prune stage run on the draft share `r`; the target and the early-exit
//! check run on the target share `1 - r`. Load terms:
//!
//! | stage            | load(b, s)                  |
//! |------------------|-----------------------------|
//! | `Draft`          | `alpha_q*b + beta_q*s + c_q` |
//! | `Target`         | `(alpha_p*b + lambda_p)*s + c_p` |
//! | `EarlyExitCheck` | `alpha*b*s + beta`          |
//! | `Prune`          | `alpha*b*s + beta`          |
//!
//! Fitted models are continuous at the knee (`a2 = a1 - (g1 - g2) * R`), and
//! the factor/load scale ambiguity is removed by normalizing `f(1) = 1`, so
//! the load term reads as the full-GPU latency.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StageKind {
    Draft,
    Target,
    EarlyExitCheck,
    Prune,
}

impl StageKind {
    pub const ALL: [StageKind; 4] = [
        StageKind::Draft,
        StageKind::Target,
        StageKind::EarlyExitCheck,
        StageKind::Prune,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StageKind::Draft => "draft",
            StageKind::Target => "target",
            StageKind::EarlyExitCheck => "early_exit_check",
            StageKind::Prune => "prune",
        }
    }

    /// The stage's own SM share when the draft side holds fraction `r`.
    pub fn share_for_draft_fraction(self, r: f64) -> f64 {
        match self {
            StageKind::Draft | StageKind::Prune => r,
            StageKind::Target | StageKind::EarlyExitCheck => 1.0 - r,
        }
    }

    fn load_features(self, b: f64, s: f64) -> Vec<f64> {
        match self {
            StageKind::Draft => vec![b, s, 1.0],
            StageKind::Target => vec![b * s, s, 1.0],
            StageKind::EarlyExitCheck | StageKind::Prune => vec![b * s, 1.0],
        }
    }

    fn load_labels(self) -> &'static [&'static str] {
        match self {
            StageKind::Draft => &["b", "s", "1"],
            StageKind::Target => &["b*s", "s", "1"],
            StageKind::EarlyExitCheck | StageKind::Prune => &["b*s", "1"],
        }
    }
}

impl std::fmt::Display for StageKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Load coefficients in the per-stage form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum LoadCoeffs {
    Draft { alpha_q: f64, beta_q: f64, c_q: f64 },
    Target { alpha_p: f64, lambda_p: f64, c_p: f64 },
    Overhead { alpha: f64, beta: f64 },
}

impl LoadCoeffs {
    fn to_vec(self) -> Vec<f64> {
        match self {
            LoadCoeffs::Draft { alpha_q, beta_q, c_q } => vec![alpha_q, beta_q, c_q],
            LoadCoeffs::Target {
                alpha_p,
                lambda_p,
                c_p,
            } => vec![alpha_p, lambda_p, c_p],
            LoadCoeffs::Overhead { alpha, beta } => vec![alpha, beta],
        }
    }

    fn from_vec(stage: StageKind, v: &[f64]) -> Self {
        match stage {
            StageKind::Draft => LoadCoeffs::Draft {
                alpha_q: v[0],
                beta_q: v[1],
                c_q: v[2],
            },
            StageKind::Target => LoadCoeffs::Target {
                alpha_p: v[0],
                lambda_p: v[1],
                c_p: v[2],
            },
            StageKind::EarlyExitCheck | StageKind::Prune => LoadCoeffs::Overhead {
                alpha: v[0],
                beta: v[1],
            },
        }
    }

    fn matches(self, stage: StageKind) -> bool {
        matches!(
            (self, stage),
            (LoadCoeffs::Draft { .. }, StageKind::Draft)
                | (LoadCoeffs::Target { .. }, StageKind::Target)
                | (LoadCoeffs::Overhead { .. }, StageKind::EarlyExitCheck)
                | (LoadCoeffs::Overhead { .. }, StageKind::Prune)
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLatencyParams {
    pub stage: StageKind,
    /// Knee `R` in the stage's own share.
    pub knee: f64,
    pub a1: f64,
    pub gamma1: f64,
    pub a2: f64,
    pub gamma2: f64,
    pub load: LoadCoeffs,
}

impl PiecewiseLatencyParams {
    /// Parameters whose second segment is pinned by continuity at the knee.
    pub fn continuous(
        stage: StageKind,
        knee: f64,
        a1: f64,
        gamma1: f64,
        gamma2: f64,
        load: LoadCoeffs,
    ) -> Result<Self> {
        if !(knee > 0.0 && knee < 1.0) {
            return Err(invalid(format!("knee must lie in (0, 1), got {knee}")));
        }
        if !load.matches(stage) {
            return Err(invalid(format!("load form does not match stage {stage}")));
        }
        Ok(Self {
            stage,
            knee,
            a1,
            gamma1,
            a2: a1 - (gamma1 - gamma2) * knee,
            gamma2,
            load,
        })
    }

    pub fn resource_factor(&self, share: f64) -> f64 {
        if share <= self.knee {
            self.a1 - self.gamma1 * share
        } else {
            self.a2 - self.gamma2 * share
        }
    }

    pub fn load_term(&self, b: f64, s: f64) -> f64 {
        let f = self.stage.load_features(b, s);
        self.load
            .to_vec()
            .iter()
            .zip(&f)
            .map(|(c, x)| c * x)
            .sum()
    }

    /// Latency in ms with the stage running on SM share `share`.
    pub fn eval_at_share(&self, b: f64, s: f64, share: f64) -> Result<f64> {
        if !(share > 0.0 && share <= 1.0) {
            return Err(invalid(format!(
                "{} stage SM share {share} outside (0, 1]",
                self.stage
            )));
        }
        if !(b >= 0.0 && s >= 0.0) {
            return Err(invalid("batch size and token length must be non-negative"));
        }
        Ok(self.resource_factor(share) * self.load_term(b, s))
    }

    /// Same model with `f(1) = 1`; predictions are unchanged.
    pub fn canonical(&self) -> Self {
        let scale = self.resource_factor(1.0);
        if !(scale.is_finite() && scale.abs() > 1e-300) {
            return *self;
        }
        let load: Vec<f64> = self.load.to_vec().iter().map(|c| c * scale).collect();
        Self {
            a1: self.a1 / scale,
            gamma1: self.gamma1 / scale,
            a2: self.a2 / scale,
            gamma2: self.gamma2 / scale,
            load: LoadCoeffs::from_vec(self.stage, &load),
            ..*self
        }
    }

    /// All coefficients in a fixed order, for comparisons.
    pub fn coefficient_vector(&self) -> Vec<f64> {
        let mut v = vec![self.knee, self.a1, self.gamma1, self.a2, self.gamma2];
        v.extend(self.load.to_vec());
        v
    }

    fn check_stage(&self, want: &[StageKind]) -> Result<()> {
        if want.contains(&self.stage) {
            Ok(())
        } else {
            Err(invalid(format!(
                "parameters are for the {} stage, expected {:?}",
                self.stage, want
            )))
        }
    }
}

fn check_fraction(r: f64) -> Result<()> {
    if r > 0.0 && r <= 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("draft SM fraction {r} outside (0, 1]")))
    }
}

/// Draft latency with draft SM fraction `r`.
pub fn eval_draft_latency(params: &PiecewiseLatencyParams, b: f64, s: f64, r: f64) -> Result<f64> {
    params.check_stage(&[StageKind::Draft])?;
    check_fraction(r)?;
    params.eval_at_share(b, s, r)
}

/// Target latency when the draft holds `r`; the target runs on `1 - r`.
pub fn eval_target_latency(
    params: &PiecewiseLatencyParams,
    b: f64,
    s: f64,
    r: f64,
) -> Result<f64> {
    params.check_stage(&[StageKind::Target])?;
    params.eval_at_share(b, s, 1.0 - r)
}

/// Early-exit check (target side, `1 - r`) or prune (draft side, `r`) latency.
pub fn eval_overhead_latency(
    params: &PiecewiseLatencyParams,
    b: f64,
    s: f64,
    r: f64,
) -> Result<f64> {
    params.check_stage(&[StageKind::EarlyExitCheck, StageKind::Prune])?;
    if params.stage == StageKind::Prune {
        check_fraction(r)?;
    }
    params.eval_at_share(b, s, params.stage.share_for_draft_fraction(r))
}

/// How the GPU is divided for one stage invocation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SmSplit {
    /// Stages run one after another, each on the whole GPU.
    Serial,
    /// Draft side holds fraction `r`, target side `1 - r`.
    Split(f64),
}

impl SmSplit {
    pub fn share(self, stage: StageKind) -> f64 {
        match self {
            SmSplit::Serial => 1.0,
            SmSplit::Split(r) => stage.share_for_draft_fraction(r),
        }
    }

    /// Draft fraction used for context bucketing; serial counts as 1.
    pub fn draft_fraction(self) -> f64 {
        match self {
            SmSplit::Serial => 1.0,
            SmSplit::Split(r) => r,
        }
    }
}

/// The four stage models used together.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyModels {
    pub draft: PiecewiseLatencyParams,
    pub target: PiecewiseLatencyParams,
    pub early_exit: PiecewiseLatencyParams,
    pub prune: PiecewiseLatencyParams,
}

impl LatencyModels {
    pub fn stage(&self, kind: StageKind) -> &PiecewiseLatencyParams {
        match kind {
            StageKind::Draft => &self.draft,
            StageKind::Target => &self.target,
            StageKind::EarlyExitCheck => &self.early_exit,
            StageKind::Prune => &self.prune,
        }
    }

    pub fn from_stages(stages: [PiecewiseLatencyParams; 4]) -> Result<Self> {
        let [draft, target, early_exit, prune] = stages;
        for (p, want) in [
            (&draft, StageKind::Draft),
            (&target, StageKind::Target),
            (&early_exit, StageKind::EarlyExitCheck),
            (&prune, StageKind::Prune),
        ] {
            if p.stage != want {
                return Err(invalid(format!("expected {want} parameters, got {}", p.stage)));
            }
        }
        Ok(Self {
            draft,
            target,
            early_exit,
            prune,
        })
    }

    pub fn latency(&self, kind: StageKind, b: f64, s: f64, split: SmSplit) -> Result<f64> {
        self.stage(kind).eval_at_share(b, s, split.share(kind))
    }

    /// Default ground truth for the simulator clock.
    ///
    /// At full GPU and `s = 6` the target's share of a serial iteration
    /// rises from about 57% at `b = 16` to about 90% at `b = 256`.
    pub fn default_ground_truth() -> Self {
        let factor = |stage, knee, at_low: f64, at_knee: f64, load| {
            // f(0.1) = at_low, f(knee) = at_knee, f(1) = 1
            let gamma2 = (at_knee - 1.0) / (1.0 - knee);
            let gamma1 = (at_low - at_knee) / (knee - 0.1);
            let a1 = at_knee + gamma1 * knee;
            PiecewiseLatencyParams::continuous(stage, knee, a1, gamma1, gamma2, load)
                .expect("valid default parameters")
        };
        Self {
            draft: factor(
                StageKind::Draft,
                0.3,
                1.6,
                1.1,
                LoadCoeffs::Draft {
                    alpha_q: 0.1,
                    beta_q: 6.0,
                    c_q: 4.0,
                },
            ),
            target: factor(
                StageKind::Target,
                0.5,
                2.5,
                1.1,
                LoadCoeffs::Target {
                    alpha_p: 0.4,
                    lambda_p: 2.0,
                    c_p: 4.0,
                },
            ),
            early_exit: factor(
                StageKind::EarlyExitCheck,
                0.5,
                2.0,
                1.2,
                LoadCoeffs::Overhead {
                    alpha: 0.02,
                    beta: 0.5,
                },
            ),
            prune: factor(
                StageKind::Prune,
                0.5,
                2.0,
                1.2,
                LoadCoeffs::Overhead {
                    alpha: 0.002,
                    beta: 0.1,
                },
            ),
        }
    }
}

/// One profiled latency. `share` is the SM fraction the stage ran on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileSample {
    pub stage: StageKind,
    pub b: f64,
    pub s: f64,
    pub share: f64,
    pub latency: f64,
}

/// Profiling grid over batch size, token length and SM share.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileGrid {
    pub batch: Vec<f64>,
    pub tokens: Vec<f64>,
    pub shares: Vec<f64>,
}

impl Default for ProfileGrid {
    /// b in {4, 8, ..., 256} (powers of two), s in {2, 4, 6, 8, 10},
    /// shares in {0.1, ..., 1.0}.
    fn default() -> Self {
        Self {
            batch: (2..=8).map(|k| f64::from(1u32 << k)).collect(),
            tokens: vec![2.0, 4.0, 6.0, 8.0, 10.0],
            shares: (1..=10).map(|i| f64::from(i) / 10.0).collect(),
        }
    }
}

/// Evaluate `truth` over `grid` with multiplicative lognormal noise.
pub fn generate_synthetic_profile(
    truth: &PiecewiseLatencyParams,
    grid: &ProfileGrid,
    sigma: f64,
    seed: u64,
) -> Result<Vec<ProfileSample>> {
    if sigma < 0.0 {
        return Err(invalid("noise sigma must be non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(grid.batch.len() * grid.tokens.len() * grid.shares.len());
    for &b in &grid.batch {
        for &s in &grid.tokens {
            for &share in &grid.shares {
                let clean = truth.eval_at_share(b, s, share)?;
                let latency = if sigma == 0.0 {
                    clean
                } else {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    clean * (sigma * z).exp()
                };
                out.push(ProfileSample {
                    stage: truth.stage,
                    b,
                    s,
                    share,
                    latency,
                });
            }
        }
    }
    Ok(out)
}

/// Seeded shuffle and split; `holdout` is the held-out fraction.
pub fn split_holdout(
    samples: &[ProfileSample],
    holdout: f64,
    seed: u64,
) -> (Vec<ProfileSample>, Vec<ProfileSample>) {
    let mut v = samples.to_vec();
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = ((v.len() as f64) * holdout).round() as usize;
    let test = v.split_off(v.len() - n_test);
    (v, test)
}

/// Mean absolute percentage error on held-out samples, as a fraction.
pub fn mape(params: &PiecewiseLatencyParams, heldout: &[ProfileSample]) -> Result<f64> {
    if heldout.is_empty() {
        return Err(invalid("held-out set is empty"));
    }
    let mut total = 0.0;
    for smp in heldout {
        if smp.latency <= 0.0 {
            return Err(invalid("observed latency must be positive"));
        }
        let pred = params.eval_at_share(smp.b, smp.s, smp.share)?;
        total += (pred - smp.latency).abs() / smp.latency;
    }
    Ok(total / heldout.len() as f64)
}

fn fit_error(stage: StageKind, reason: impl Into<String>) -> Error {
    Error::Fit {
        stage: stage.name().to_string(),
        reason: reason.into(),
    }
}

fn factor_features(share: f64, knee: f64) -> [f64; 3] {
    [1.0, -share.min(knee), -(share - knee).max(0.0)]
}

const FACTOR_LABELS: [&str; 3] = ["const", "slope_low", "slope_high"];

fn lstsq(a: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    a.clone()
        .svd(true, true)
        .solve(y, 1e-12)
        .expect("svd computed with both factors")
}

/// Names of design columns that are linear combinations of earlier ones.
fn collinear_columns(a: &DMatrix<f64>, labels: &[String]) -> Vec<String> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut bad = Vec::new();
    for (j, label) in labels.iter().enumerate() {
        let col = a.column(j).into_owned();
        let norm = col.norm();
        let mut r = col.clone();
        for q in &basis {
            let d = q.dot(&r);
            r -= q * d;
        }
        if norm == 0.0 || r.norm() <= 1e-9 * norm {
            bad.push(label.clone());
        } else {
            let n = r.norm();
            basis.push(r / n);
        }
    }
    bad
}

struct KneeFit {
    factor: [f64; 3],
    load: Vec<f64>,
    rss: f64,
}

fn fit_with_knee(stage: StageKind, samples: &[ProfileSample], knee: f64) -> KneeFit {
    let n = samples.len();
    let h: Vec<[f64; 3]> = samples
        .iter()
        .map(|s| factor_features(s.share, knee))
        .collect();
    let g: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| stage.load_features(s.b, s.s))
        .collect();
    let m = g[0].len();
    let y = DVector::from_iterator(n, samples.iter().map(|s| s.latency));

    // Unconstrained bilinear relaxation, then its best rank-one factorization.
    let design = DMatrix::from_fn(n, 3 * m, |k, c| h[k][c / m] * g[k][c % m]);
    let coef = lstsq(&design, &y);
    let mat = DMatrix::from_fn(3, m, |i, j| coef[i * m + j]);
    let svd = mat.svd(true, true);
    let (u_mat, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let sigma0 = svd.singular_values[0];
    let mut u: Vec<f64> = (0..3).map(|i| u_mat[(i, 0)] * sigma0).collect();
    let mut v: Vec<f64> = (0..m).map(|j| v_t[(0, j)]).collect();

    let rss_of = |u: &[f64], v: &[f64]| -> f64 {
        (0..n)
            .map(|k| {
                let f: f64 = (0..3).map(|i| u[i] * h[k][i]).sum();
                let l: f64 = (0..m).map(|j| v[j] * g[k][j]).sum();
                let e = f * l - y[k];
                e * e
            })
            .sum()
    };

    // Alternating least squares on the exact product model.
    let mut rss = rss_of(&u, &v);
    for _ in 0..500 {
        let fu: Vec<f64> = (0..n)
            .map(|k| (0..3).map(|i| u[i] * h[k][i]).sum())
            .collect();
        let av = DMatrix::from_fn(n, m, |k, j| fu[k] * g[k][j]);
        v = lstsq(&av, &y).iter().copied().collect();
        let lv: Vec<f64> = (0..n)
            .map(|k| (0..m).map(|j| v[j] * g[k][j]).sum())
            .collect();
        let au = DMatrix::from_fn(n, 3, |k, i| lv[k] * h[k][i]);
        u = lstsq(&au, &y).iter().copied().collect();
        let next = rss_of(&u, &v);
        let done = rss - next <= 1e-14 * rss.max(1e-300);
        rss = next;
        if done {
            break;
        }
    }
    KneeFit {
        factor: [u[0], u[1], u[2]],
        load: v,
        rss,
    }
}

/// Fit one stage's piecewise model by exhaustive knee search.
///
/// Each candidate knee is an observed share with at least two distinct
/// shares on either side. For a candidate, the continuous factor
/// `[a1, g1, g2]` and the load coefficients are fitted jointly by least
/// squares; the candidate with the smallest residual sum of squares wins.
pub fn fit(stage: StageKind, samples: &[ProfileSample]) -> Result<PiecewiseLatencyParams> {
    if samples.len() < 8 {
        return Err(fit_error(
            stage,
            format!("need at least 8 samples, got {}", samples.len()),
        ));
    }
    if let Some(bad) = samples
        .iter()
        .find(|s| s.stage != stage || !(s.latency > 0.0) || !(s.share > 0.0 && s.share <= 1.0))
    {
        return Err(fit_error(stage, format!("invalid sample {bad:?}")));
    }
    let mut shares: Vec<f64> = samples.iter().map(|s| s.share).collect();
    shares.sort_by(|a, b| a.partial_cmp(b).unwrap());
    shares.dedup();
    let candidates: Vec<f64> = shares
        .iter()
        .enumerate()
        .filter(|&(i, _)| i >= 1 && i + 3 <= shares.len())
        .map(|(_, &k)| k)
        .collect();
    if candidates.is_empty() {
        return Err(fit_error(
            stage,
            format!(
                "need two distinct SM shares on each side of a knee, got {} distinct",
                shares.len()
            ),
        ));
    }

    let load_labels = stage.load_labels();
    let labels: Vec<String> = FACTOR_LABELS
        .iter()
        .flat_map(|h| load_labels.iter().map(move |g| format!("{h}*{g}")))
        .collect();
    let m = load_labels.len();

    let mut best: Option<(f64, KneeFit)> = None;
    let mut degenerate = None;
    for &knee in &candidates {
        let design = DMatrix::from_fn(samples.len(), 3 * m, |k, c| {
            let s = &samples[k];
            factor_features(s.share, knee)[c / m] * stage.load_features(s.b, s.s)[c % m]
        });
        let bad = collinear_columns(&design, &labels);
        if !bad.is_empty() {
            degenerate = Some(bad);
            continue;
        }
        let kf = fit_with_knee(stage, samples, knee);
        if best.as_ref().is_none_or(|(_, b)| kf.rss < b.rss) {
            best = Some((knee, kf));
        }
    }
    let Some((knee, kf)) = best else {
        return Err(fit_error(
            stage,
            format!(
                "rank-deficient design; collinear columns: {}",
                degenerate.unwrap_or_default().join(", ")
            ),
        ));
    };
    let [a1, gamma1, gamma2] = kf.factor;
    let params = PiecewiseLatencyParams::continuous(
        stage,
        knee,
        a1,
        gamma1,
        gamma2,
        LoadCoeffs::from_vec(stage, &kf.load),
    )?;
    Ok(params.canonical())
}

/// Fit result of one stage with its held-out error.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageFit {
    pub params: PiecewiseLatencyParams,
    pub train_samples: usize,
    pub heldout_samples: usize,
    pub heldout_mape: f64,
}

/// Profile every stage of `truth`, fit on 80% and score MAPE on the rest.
pub fn profile_and_fit(
    truth: &LatencyModels,
    grid: &ProfileGrid,
    sigma: f64,
    seed: u64,
) -> Result<(Vec<ProfileSample>, Vec<StageFit>)> {
    let mut all = Vec::new();
    let mut fits = Vec::new();
    for (i, kind) in StageKind::ALL.into_iter().enumerate() {
        let stage_seed = seed.wrapping_mul(4).wrapping_add(i as u64);
        let samples = generate_synthetic_profile(truth.stage(kind), grid, sigma, stage_seed)?;
        let (train, test) = split_holdout(&samples, 0.2, stage_seed ^ 0x5EED);
        let params = fit(kind, &train)?;
        let heldout_mape = mape(&params, &test)?;
        fits.push(StageFit {
            params,
            train_samples: train.len(),
            heldout_samples: test.len(),
            heldout_mape,
        });
        all.extend(samples);
    }
    Ok((all, fits))
}

/// The fitted model set from `profile_and_fit` output.
pub fn models_from_fits(fits: &[StageFit]) -> Result<LatencyModels> {
    if fits.len() != 4 {
        return Err(invalid("expected one fit per stage"));
    }
    LatencyModels::from_stages([fits[0].params, fits[1].params, fits[2].params, fits[3].params])
}
