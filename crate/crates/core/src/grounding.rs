//! Semantic co-occurrence grounding: prior token embeddings `λ_w` are pulled
//! toward the pooled visual features of observations whose episode goal
//! contains `w` and pushed away otherwise.

use crate::error::{EtherError, Result};
use crate::nn::encoder::FEATURE_DIM;
use crate::vocab::Goal;
use candle_core::{Tensor, D};
use candle_nn::{Init, VarBuilder};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const NOISE_MAX: f64 = 0.2;
pub const NORM_FLOOR: f64 = 1e-8;
pub const TABLE_INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroundingConfig {
    pub enabled: bool,
    pub weight: f64,
    pub noise_max: f64,
    pub batch_size: usize,
}

impl Default for GroundingConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            weight: 1.0,
            noise_max: NOISE_MAX,
            batch_size: 32,
        }
    }
}

impl GroundingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=NOISE_MAX).contains(&self.noise_max) || !(self.weight >= 0.0) || self.batch_size == 0 {
            return Err(EtherError::Config(format!(
                "grounding: noise_max must lie in [0, {NOISE_MAX}], weight ≥ 0, batch_size ≥ 1"
            )));
        }
        Ok(())
    }
}

/// `(1 − noise) · (+1 if w = w' else −1)`.
pub fn noisy_indicator(w: u32, w_prime: u32, noise: f64) -> Result<f64> {
    if !(0.0..=NOISE_MAX).contains(&noise) {
        return Err(EtherError::Domain(format!("noise {noise} outside [0, {NOISE_MAX}]")));
    }
    let sign = if w == w_prime { 1.0 } else { -1.0 };
    Ok((1.0 - noise) * sign)
}

/// Binary entropy (nats) of each token's presence across the minibatch goals.
pub fn entropy_mask(goals: &[&Goal], vocab_size: usize) -> Result<Vec<f64>> {
    if goals.is_empty() {
        return Err(EtherError::Usage("entropy mask of an empty minibatch".into()));
    }
    let mut present = vec![0usize; vocab_size];
    for g in goals {
        let mut seen = vec![false; vocab_size];
        for &t in g.tokens() {
            let t = t as usize;
            if t >= vocab_size {
                return Err(EtherError::Domain(format!("token {t} outside vocabulary of {vocab_size}")));
            }
            if !seen[t] {
                seen[t] = true;
                present[t] += 1;
            }
        }
    }
    let n = goals.len() as f64;
    Ok(present
        .into_iter()
        .map(|c| {
            let p = c as f64 / n;
            if c == 0 || c == goals.len() {
                0.0
            } else {
                -(p * p.ln() + (1.0 - p) * (1.0 - p).ln())
            }
        })
        .collect())
}

/// The `|V| × 64` table of prior semantic embeddings.
#[derive(Debug, Clone)]
pub struct SemanticTable {
    table: Tensor,
}

impl SemanticTable {
    pub fn new(vocab_size: usize, vb: VarBuilder) -> Result<Self> {
        let table = vb.get_with_hints(
            (vocab_size, FEATURE_DIM),
            "lambda",
            Init::Randn {
                mean: 0.0,
                stdev: TABLE_INIT_STD,
            },
        )?;
        Ok(Self { table })
    }

    pub fn from_tensor(table: Tensor) -> Self {
        Self { table }
    }

    pub fn tensor(&self) -> &Tensor {
        &self.table
    }

    pub fn loss(&self, features: &Tensor, goals: &[&Goal], noise: Option<(&mut dyn rand::RngCore, f64)>) -> Result<Tensor> {
        grounding_loss(&self.table, features, goals, noise)
    }
}

fn normalise_rows(x: &Tensor) -> Result<Tensor> {
    let norm = x.sqr()?.sum_keepdim(D::Minus1)?.sqrt()?.maximum(NORM_FLOOR)?;
    Ok(x.broadcast_div(&norm)?)
}

/// `mean_b Σ_w H(w) Σ_i (1_w(g_i) − cos(λ_w, f(s_b)))²`.
///
/// `table`: `(V, D)`; `features`: `(B, D)`; `noise`: a source and its upper
/// bound, one uniform draw per `(b, w, i)` term, or `None` for exact labels.
pub fn grounding_loss(
    table: &Tensor,
    features: &Tensor,
    goals: &[&Goal],
    noise: Option<(&mut dyn rand::RngCore, f64)>,
) -> Result<Tensor> {
    let (v, d) = table.dims2()?;
    let (b, fd) = features.dims2()?;
    if fd != d || goals.len() != b {
        return Err(EtherError::shape(format!("features ({}, {d})", goals.len()), features.dims()));
    }
    let weights = entropy_mask(goals, v)?;
    let lg = goals.iter().map(|g| g.len()).max().unwrap_or(0).max(1);
    let mut labels = vec![0f64; b * v * lg];
    let mut valid = vec![0f64; b * v * lg];
    let mut noise = noise;
    if let Some((_, max)) = &noise {
        if !(0.0..=NOISE_MAX).contains(max) {
            return Err(EtherError::Domain(format!("noise bound {max} outside [0, {NOISE_MAX}]")));
        }
    }
    for (bi, g) in goals.iter().enumerate() {
        for w in 0..v {
            for (i, &tok) in g.tokens().iter().enumerate() {
                let eps = match &mut noise {
                    Some((rng, max)) if *max > 0.0 => rng.random_range(0.0..=*max),
                    _ => 0.0,
                };
                let at = (bi * v + w) * lg + i;
                labels[at] = noisy_indicator(w as u32, tok, eps)?;
                valid[at] = weights[w];
            }
        }
    }
    let (dtype, device) = (table.dtype(), table.device());
    let labels = Tensor::from_vec(labels, (b, v, lg), device)?.to_dtype(dtype)?;
    let valid = Tensor::from_vec(valid, (b, v, lg), device)?.to_dtype(dtype)?;
    let cos = normalise_rows(features)?.matmul(&normalise_rows(table)?.t()?)?;
    let residual = labels.broadcast_sub(&cos.unsqueeze(2)?)?;
    Ok((residual.sqr()? * valid)?.sum_all()?.affine(1.0 / b as f64, 0.0)?)
}
