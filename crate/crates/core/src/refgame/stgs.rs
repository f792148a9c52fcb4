//! Straight-through Gumbel-Softmax channel.
//!
//! The forward value is the exact one-hot argmax of the relaxed sample
//! `softmax((log p + g) / τ)`; gradients flow through the relaxed sample.

use crate::error::{EtherError, Result};
use crate::nn::params::to_device_tensor;
use candle_core::{DType, Device, Tensor, D};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

#[derive(Debug, Clone)]
pub struct StgsSample {
    /// Exact one-hot in the forward pass, relaxed gradient in the backward pass.
    pub hard: Tensor,
    pub relaxed: Tensor,
    pub tokens: Vec<u32>,
}

/// Standard Gumbel noise `−log(−log u)`, `u ~ U(0, 1)`.
pub fn gumbel_noise(rows: usize, cols: usize, rng: &mut impl Rng, dtype: DType, device: &Device) -> Result<Tensor> {
    let vals: Vec<f32> = (0..rows * cols)
        .map(|_| {
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            (-(-u.ln()).ln()) as f32
        })
        .collect();
    to_device_tensor(vals, &[rows, cols], dtype, device)
}

pub fn one_hot(tokens: &[u32], width: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let mut rows = vec![0f32; tokens.len() * width];
    for (i, &t) in tokens.iter().enumerate() {
        rows[i * width + t as usize] = 1.0;
    }
    to_device_tensor(rows, &[tokens.len(), width], dtype, device)
}

/// `logits`: `(B, V)`; `temperature`: `(B, 1)` positive; `gumbel`: `(B, V)`.
pub fn stgs_sample(logits: &Tensor, temperature: &Tensor, gumbel: &Tensor) -> Result<StgsSample> {
    let (b, v) = logits.dims2()?;
    if temperature.dims() != [b, 1] || gumbel.dims() != [b, v] {
        return Err(EtherError::shape(format!("temperature ({b}, 1), noise ({b}, {v})"), temperature.dims()));
    }
    let taus: Vec<f64> = temperature.flatten_all()?.to_dtype(DType::F64)?.to_vec1()?;
    if let Some(t) = taus.iter().find(|t| !(**t > 0.0)) {
        return Err(EtherError::Domain(format!("temperature must be positive, got {t}")));
    }
    let log_p = candle_nn::ops::log_softmax(logits, D::Minus1)?;
    let perturbed = (log_p + gumbel)?.broadcast_div(temperature)?;
    let relaxed = candle_nn::ops::softmax(&perturbed, D::Minus1)?;
    let tokens: Vec<u32> = relaxed.argmax(D::Minus1)?.to_vec1()?;
    let hard_values = one_hot(&tokens, v, logits.dtype(), logits.device())?;
    // value: hard exactly (r − r = 0); gradient: that of r
    let hard = (hard_values + (&relaxed - relaxed.detach())?)?;
    Ok(StgsSample { hard, relaxed, tokens })
}

/// Convenience wrapper drawing the noise from `noise_seed`.
pub fn stgs_sample_seeded(logits: &Tensor, temperature: f64, noise_seed: u64) -> Result<StgsSample> {
    let (b, v) = logits.dims2()?;
    if !(temperature > 0.0) {
        return Err(EtherError::Domain(format!("temperature must be positive, got {temperature}")));
    }
    let mut rng = StdRng::seed_from_u64(noise_seed);
    let g = gumbel_noise(b, v, &mut rng, logits.dtype(), logits.device())?;
    let tau = Tensor::full(temperature, (b, 1), logits.device())?.to_dtype(logits.dtype())?;
    stgs_sample(logits, &tau, &g)
}

/// `log(1 + exp(x))`, stable for large |x|.
pub fn softplus(x: &Tensor) -> Result<Tensor> {
    Ok((x.relu()? + (x.abs()?.neg()?.exp()? + 1.0)?.log()?)?)
}

/// Learned temperature `1 / (τ0 + softplus(α(h)))` from the temperature
/// head's output.
pub fn learned_temperature(alpha: &Tensor, tau0: f64) -> Result<Tensor> {
    Ok((softplus(alpha)? + tau0)?.recip()?)
}

pub fn temperature_value(alpha: f64, tau0: f64) -> f64 {
    let sp = alpha.max(0.0) + (-alpha.abs()).exp().ln_1p();
    1.0 / (tau0 + sp)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cpu() -> Device {
        Device::Cpu
    }

    #[test]
    fn point_mass_always_samples_its_token() {
        let mut logits = vec![f32::NEG_INFINITY; 8];
        logits[5] = 0.0;
        let logits = Tensor::from_vec(logits, (1, 8), &cpu()).unwrap();
        for seed in 0..200 {
            let s = stgs_sample_seeded(&logits, 0.7, seed).unwrap();
            assert_eq!(s.tokens, vec![5]);
        }
    }

    #[test]
    fn forward_value_is_exact_one_hot() {
        let logits = Tensor::randn(0f32, 2., (64, 16), &cpu()).unwrap();
        let s = stgs_sample_seeded(&logits, 1.3, 3).unwrap();
        let rows: Vec<Vec<f32>> = s.hard.to_vec2().unwrap();
        for (row, &t) in rows.iter().zip(&s.tokens) {
            assert_eq!(row.iter().sum::<f32>(), 1.0);
            assert_eq!(row.iter().filter(|&&x| x != 0.0).count(), 1);
            assert_eq!(row[t as usize], 1.0);
        }
    }

    #[test]
    fn non_positive_temperature_is_a_domain_error() {
        let logits = Tensor::zeros((1, 4), DType::F32, &cpu()).unwrap();
        assert!(matches!(stgs_sample_seeded(&logits, 0.0, 1), Err(EtherError::Domain(_))));
        assert!(matches!(stgs_sample_seeded(&logits, -1.0, 1), Err(EtherError::Domain(_))));
    }

    #[test]
    fn straight_through_gradient_is_the_relaxed_gradient() {
        let logits = candle_core::Var::from_tensor(&Tensor::randn(0f64, 1., (4, 6), &cpu()).unwrap()).unwrap();
        let weights = Tensor::randn(0f64, 1., (4, 6), &cpu()).unwrap();
        let mut rng = StdRng::seed_from_u64(11);
        let g = gumbel_noise(4, 6, &mut rng, DType::F64, &cpu()).unwrap();
        let tau = Tensor::full(0.8f64, (4, 1), &cpu()).unwrap();
        let s = stgs_sample(logits.as_tensor(), &tau, &g).unwrap();
        let st_grad = (&s.hard * &weights).unwrap().sum_all().unwrap().backward().unwrap();
        // explicit relaxed path, recomputed from scratch
        let lp = candle_nn::ops::log_softmax(logits.as_tensor(), D::Minus1).unwrap();
        let relaxed = candle_nn::ops::softmax(&((lp + &g).unwrap() / 0.8).unwrap(), D::Minus1).unwrap();
        let rel_grad = (relaxed * &weights).unwrap().sum_all().unwrap().backward().unwrap();
        let a: Vec<f64> = st_grad.get(logits.as_tensor()).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let b: Vec<f64> = rel_grad.get(logits.as_tensor()).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-5, "{x} vs {y}");
        }
    }

    #[test]
    fn temperature_values_and_limits() {
        assert!((temperature_value(0.0, 0.2) - 1.0 / (0.2 + std::f64::consts::LN_2)).abs() < 1e-12);
        assert!((temperature_value(0.0, 0.2) - 1.1196).abs() < 1e-4);
        assert!(temperature_value(1e6, 0.2) < 1e-5);
        assert!((temperature_value(-1e6, 0.2) - 5.0).abs() < 1e-9);
        let alpha = Tensor::from_slice(&[-3.0f64, 0.0, 2.0, 50.0], (4, 1), &cpu()).unwrap();
        let tau: Vec<f64> = learned_temperature(&alpha, 0.2).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        for (t, a) in tau.iter().zip([-3.0, 0.0, 2.0, 50.0]) {
            assert!((t - temperature_value(a, 0.2)).abs() < 1e-12);
            assert!(*t > 0.0 && *t <= 5.0);
        }
        assert!(tau.windows(2).all(|w| w[0] > w[1]));
    }
}
