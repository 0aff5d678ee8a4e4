//! Deterministic layered toy language-model pair.
//!
//! The target model is an order-`n` table: the last `n` tokens of a prefix
//! select a final logit vector. Intermediate layers are a blend of those
//! final logits and a frozen per-prefix noise vector,
//!
//! ```text
//! z_l(prefix) = (l / L) * z_final(context) + (1 - l / L) * z_noise(prefix)
//! ```
//!
//! so a token's rank under the intermediate logits becomes more reliable
//! with depth and is exact at `l = L`.
//!
//! The draft model mixes the target's next-token distribution with a
//! distribution that moves from a per-prefix random draw toward uniform as
//! the divergence `eta` grows:
//!
//! ```text
//! q = (1 - eta) * softmax(z_final) + eta * ((1 - eta) * xi(prefix) + eta / V)
//! ```
//!
//! `eta = 0` reproduces the target argmax, `eta = 1` is exactly uniform.
//!
//! All pseudorandom values come from SplitMix64 over a fold of
//! `(seed, stream tag, tokens)`; gaussians are Irwin-Hall sums of four
//! uniforms so logits are pure integer/float arithmetic and bit-reproducible.
//! Both models decode greedily with ties going to the lowest token id. The
//! end-of-sequence token is `V - 1`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub type Token = u32;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const TAG_BASE: u64 = 1;
const TAG_NOISE: u64 = 2;
const TAG_DRAFT: u64 = 3;

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fold(seed: u64, tag: u64, tokens: &[Token]) -> u64 {
    let mut h = splitmix64(seed ^ tag.wrapping_mul(GOLDEN));
    for &t in tokens {
        h = splitmix64(h ^ (u64::from(t) + 1));
    }
    splitmix64(h ^ (tokens.len() as u64).rotate_left(32))
}

/// Uniform in the open interval (0, 1).
fn unit(h: u64, i: u64) -> f64 {
    let bits = splitmix64(h ^ (i + 1).wrapping_mul(GOLDEN)) >> 11;
    (bits as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Approximately standard normal: centered Irwin-Hall sum of four uniforms.
fn gaussian(h: u64, v: usize) -> f64 {
    let base = 4 * v as u64;
    let s = unit(h, base) + unit(h, base + 1) + unit(h, base + 2) + unit(h, base + 3);
    (s - 2.0) * 3.0_f64.sqrt()
}

/// Token alphabet `[0, size)`; the highest id is end-of-sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub size: usize,
}

impl Vocab {
    pub fn new(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(invalid(format!("vocabulary size must be >= 2, got {size}")));
        }
        Ok(Self { size })
    }

    pub fn eos(&self) -> Token {
        (self.size - 1) as Token
    }

    pub fn contains(&self, t: Token) -> bool {
        (t as usize) < self.size
    }
}

/// A logit vector over the vocabulary. Argmax ties resolve to the lowest id.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitVector(pub Vec<f64>);

impl LogitVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn argmax(&self) -> Token {
        argmax(&self.0)
    }

    /// Number of tokens whose logit is strictly greater than `token`'s.
    pub fn count_greater(&self, token: Token) -> usize {
        let x = self.0[token as usize];
        self.0.iter().filter(|&&v| v > x).count()
    }
}

fn argmax(values: &[f64]) -> Token {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best as Token
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|&v| (v - m).exp()).collect();
    let sum: f64 = e.iter().sum();
    e.into_iter().map(|v| v / sum).collect()
}

/// Construction parameters of the toy model pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyLmConfig {
    pub seed: u64,
    pub vocab: usize,
    pub layers: usize,
    /// Context order `n` of the base table.
    pub order: usize,
    /// Draft divergence `eta` in `[0, 1]`.
    pub draft_divergence: f64,
    /// Standard deviation of the final logits.
    pub logit_scale: f64,
    /// Standard deviation of the frozen intermediate-layer noise.
    pub layer_noise_scale: f64,
    /// Standard deviation of the logits behind the draft's random component.
    pub draft_noise_scale: f64,
}

impl Default for ToyLmConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            vocab: 64,
            layers: 32,
            order: 2,
            draft_divergence: 0.35,
            logit_scale: 2.0,
            layer_noise_scale: 0.3,
            draft_noise_scale: 3.0,
        }
    }
}

/// Final and noise logits of one prefix, from which any layer can be read.
#[derive(Clone, Debug)]
pub struct LayerProbe {
    final_logits: Vec<f64>,
    noise: Vec<f64>,
    layers: usize,
}

impl LayerProbe {
    pub fn logits_at(&self, layer: usize) -> LogitVector {
        if layer >= self.layers {
            return LogitVector(self.final_logits.clone());
        }
        let w = layer as f64 / self.layers as f64;
        LogitVector(
            self.final_logits
                .iter()
                .zip(&self.noise)
                .map(|(&f, &n)| w * f + (1.0 - w) * n)
                .collect(),
        )
    }

    /// `count_greater` at `layer` without materializing the vector.
    pub fn count_greater_at(&self, layer: usize, token: Token) -> usize {
        if layer >= self.layers {
            let x = self.final_logits[token as usize];
            return self.final_logits.iter().filter(|&&v| v > x).count();
        }
        let w = layer as f64 / self.layers as f64;
        let at = |i: usize| w * self.final_logits[i] + (1.0 - w) * self.noise[i];
        let x = at(token as usize);
        (0..self.final_logits.len()).filter(|&i| at(i) > x).count()
    }

    pub fn final_argmax(&self) -> Token {
        argmax(&self.final_logits)
    }
}

/// Deterministic `L`-layer table model plus its divergence-controlled draft.
#[derive(Clone, Debug)]
pub struct LayeredToyLm {
    config: ToyLmConfig,
    vocab: Vocab,
    overrides: BTreeMap<Vec<Token>, Vec<f64>>,
}

impl LayeredToyLm {
    pub fn new(config: ToyLmConfig) -> Result<Self> {
        let vocab = Vocab::new(config.vocab)?;
        if config.layers == 0 {
            return Err(invalid("layer count must be positive"));
        }
        if config.order == 0 {
            return Err(invalid("context order must be positive"));
        }
        if !(0.0..=1.0).contains(&config.draft_divergence) {
            return Err(invalid(format!(
                "draft divergence must lie in [0, 1], got {}",
                config.draft_divergence
            )));
        }
        Ok(Self {
            config,
            vocab,
            overrides: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &ToyLmConfig {
        &self.config
    }

    pub fn vocab(&self) -> Vocab {
        self.vocab
    }

    pub fn layers(&self) -> usize {
        self.config.layers
    }

    pub fn eos(&self) -> Token {
        self.vocab.eos()
    }

    /// Replace the table entry for `context` (the last `order` tokens of a
    /// prefix, or the whole prefix when shorter).
    pub fn set_entry(&mut self, context: Vec<Token>, logits: Vec<f64>) -> Result<()> {
        if logits.len() != self.vocab.size {
            return Err(invalid("table entry length must equal the vocabulary size"));
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(invalid("table entries must be finite"));
        }
        self.overrides.insert(context, logits);
        Ok(())
    }

    /// Copy of this model with a different draft divergence.
    pub fn with_divergence(&self, eta: f64) -> Result<Self> {
        let mut config = self.config.clone();
        config.draft_divergence = eta;
        let mut m = Self::new(config)?;
        m.overrides = self.overrides.clone();
        Ok(m)
    }

    fn check_prefix(&self, prefix: &[Token]) -> Result<()> {
        if prefix.is_empty() {
            return Err(invalid("prefix must be non-empty"));
        }
        if let Some(&t) = prefix.iter().find(|&&t| !self.vocab.contains(t)) {
            return Err(invalid(format!("token {t} outside vocabulary")));
        }
        Ok(())
    }

    fn context<'a>(&self, prefix: &'a [Token]) -> &'a [Token] {
        &prefix[prefix.len().saturating_sub(self.config.order)..]
    }

    fn final_logits(&self, prefix: &[Token]) -> Vec<f64> {
        let ctx = self.context(prefix);
        if let Some(v) = self.overrides.get(ctx) {
            return v.clone();
        }
        let h = fold(self.config.seed, TAG_BASE, ctx);
        (0..self.vocab.size)
            .map(|v| self.config.logit_scale * gaussian(h, v))
            .collect()
    }

    fn noise_logits(&self, prefix: &[Token]) -> Vec<f64> {
        let h = fold(self.config.seed, TAG_NOISE, prefix);
        (0..self.vocab.size)
            .map(|v| self.config.layer_noise_scale * gaussian(h, v))
            .collect()
    }

    pub fn layer_probe(&self, prefix: &[Token]) -> Result<LayerProbe> {
        self.check_prefix(prefix)?;
        Ok(LayerProbe {
            final_logits: self.final_logits(prefix),
            noise: self.noise_logits(prefix),
            layers: self.config.layers,
        })
    }

    pub fn target_logits(&self, prefix: &[Token], layer: usize) -> Result<LogitVector> {
        if layer == 0 || layer > self.config.layers {
            return Err(invalid(format!(
                "layer {layer} outside [1, {}]",
                self.config.layers
            )));
        }
        self.check_prefix(prefix)?;
        if layer == self.config.layers {
            return Ok(LogitVector(self.final_logits(prefix)));
        }
        Ok(self.layer_probe(prefix)?.logits_at(layer))
    }

    pub fn target_next(&self, prefix: &[Token]) -> Result<Token> {
        self.check_prefix(prefix)?;
        Ok(argmax(&self.final_logits(prefix)))
    }

    /// The draft's next-token distribution.
    pub fn draft_distribution(&self, prefix: &[Token]) -> Result<Vec<f64>> {
        self.check_prefix(prefix)?;
        let eta = self.config.draft_divergence;
        let v = self.vocab.size as f64;
        let p = softmax(&self.final_logits(prefix));
        let h = fold(self.config.seed, TAG_DRAFT, prefix);
        let xi_logits: Vec<f64> = (0..self.vocab.size)
            .map(|i| self.config.draft_noise_scale * gaussian(h, i))
            .collect();
        let xi = softmax(&xi_logits);
        Ok(p.iter()
            .zip(&xi)
            .map(|(&pt, &x)| (1.0 - eta) * pt + eta * ((1.0 - eta) * x + eta / v))
            .collect())
    }

    pub fn draft_next(&self, prefix: &[Token]) -> Result<Token> {
        if self.config.draft_divergence == 0.0 {
            return self.target_next(prefix);
        }
        Ok(argmax(&self.draft_distribution(prefix)?))
    }

    /// Greedy target decoding: the reference output every serving
    /// configuration must reproduce.
    pub fn autoregressive_decode(&self, prompt: &[Token], max_out: usize) -> Result<Vec<Token>> {
        self.check_prefix(prompt)?;
        let mut seq = prompt.to_vec();
        let mut out = Vec::with_capacity(max_out);
        while out.len() < max_out {
            let t = argmax(&self.final_logits(&seq));
            out.push(t);
            seq.push(t);
            if t == self.eos() {
                break;
            }
        }
        Ok(out)
    }
}
