//! LazImpa objective: the lazy speaker term and the impatient listener term.

use crate::error::{EtherError, Result};
use crate::nn::params::to_device_tensor;
use crate::vocab::EOS;
use candle_core::{DType, Tensor, D};

/// Floor applied to probabilities inside logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// `β(l) = β0 · l` for 1-based step `l`.
pub fn beta(beta0: f64, step: usize) -> f64 {
    beta0 * step as f64
}

/// `KL(p ‖ q)` over the last axis with `0 · log 0 = 0` and `q` floored.
pub fn kl_divergence(p: &Tensor, q: &Tensor) -> Result<Tensor> {
    let log_ratio = (p.maximum(PROB_FLOOR)?.log()? - q.maximum(PROB_FLOOR)?.log()?)?;
    Ok((p * log_ratio)?.sum(D::Minus1)?)
}

fn step_weights(mask: &Tensor, beta0: f64) -> Result<Tensor> {
    let (b, l) = mask.dims2()?;
    // built in f64 so an f64 mask keeps full precision
    let w: Vec<f64> = (0..b).flat_map(|_| (1..=l).map(|s| beta(beta0, s))).collect();
    Ok((Tensor::from_vec(w, (b, l), mask.device())?.to_dtype(mask.dtype())? * mask)?)
}

/// `mean_b Σ_l β(l) · (−log W_l(EoS))` over valid steps. `distributions`:
/// `(B, L, V)`; `mask`: `(B, L)`.
pub fn lazy_loss(distributions: &Tensor, mask: &Tensor, beta0: f64) -> Result<Tensor> {
    let (b, l, _) = distributions.dims3()?;
    if mask.dims() != [b, l] {
        return Err(EtherError::shape(format!("mask ({b}, {l})"), mask.dims()));
    }
    let eos = distributions.narrow(2, EOS as usize, 1)?.squeeze(2)?;
    let nll = eos.maximum(PROB_FLOOR)?.log()?.neg()?;
    Ok(((nll * step_weights(mask, beta0)?)?.sum(1)?.mean(0))?)
}

/// The same objective computed as `Σ_l β(l) · KL(W_EoS ‖ W_l)` with a
/// generic divergence.
pub fn lazy_loss_via_kl(distributions: &Tensor, mask: &Tensor, beta0: f64) -> Result<Tensor> {
    let (b, l, v) = distributions.dims3()?;
    let mut point = vec![0f32; b * l * v];
    for i in 0..b * l {
        point[i * v + EOS as usize] = 1.0;
    }
    let point = to_device_tensor(point, &[b, l, v], distributions.dtype(), distributions.device())?;
    let kl = kl_divergence(&point, distributions)?;
    Ok(((kl * step_weights(mask, beta0)?)?.sum(1)?.mean(0))?)
}

/// Hinge loss per row: `Σ_{j≠t} max(0, margin − z_t + z_j)`. `logits`: `(R, N)`.
pub fn hinge_loss(logits: &Tensor, targets: &[usize], margin: f64) -> Result<Tensor> {
    let (r, n) = logits.dims2()?;
    if targets.len() != r || targets.iter().any(|&t| t >= n) {
        return Err(EtherError::shape(format!("{r} targets in [0, {n})"), targets.len()));
    }
    let ids: Vec<u32> = targets.iter().map(|&t| t as u32).collect();
    let ids = Tensor::from_vec(ids, (r, 1), logits.device())?;
    let target_logit = logits.gather(&ids, 1)?;
    let terms = (logits.broadcast_sub(&target_logit)? + margin)?.relu()?;
    let mut others = vec![1f32; r * n];
    for (i, &t) in targets.iter().enumerate() {
        others[i * n + t] = 0.0;
    }
    let others = to_device_tensor(others, &[r, n], logits.dtype(), logits.device())?;
    Ok((terms * others)?.sum(1)?)
}

/// Mean over each message's prefixes of the hinge loss, then mean over the
/// batch. `prefix_logits`: `(B, L, N)`; `mask`: `(B, L)`.
pub fn impatient_loss(prefix_logits: &Tensor, mask: &Tensor, targets: &[usize], margin: f64) -> Result<Tensor> {
    let (b, l, n) = prefix_logits.dims3()?;
    if mask.dims() != [b, l] || targets.len() != b {
        return Err(EtherError::shape(format!("mask ({b}, {l}) and {b} targets"), mask.dims()));
    }
    let flat = prefix_logits.reshape((b * l, n))?;
    let repeated: Vec<usize> = targets.iter().flat_map(|&t| std::iter::repeat_n(t, l)).collect();
    let per_prefix = hinge_loss(&flat, &repeated, margin)?.reshape((b, l))?;
    let lengths = mask.sum(1)?.maximum(1.0)?;
    Ok(((per_prefix * mask)?.sum(1)? / lengths)?.mean(0)?)
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}
