use crate::error::{EtherError, Result};
use candle_core::{Module, Tensor};
use candle_nn::{Linear, VarBuilder};

pub const FILM_LAYERS: usize = 2;

/// Feature-wise linear modulation: per-channel `scale·x + shift`, with scale
/// and shift predicted from a conditioning vector. Each generator predicts
/// `scale - 1` so a zero-initialised generator is the identity.
#[derive(Debug, Clone)]
pub struct FiLMAdapter {
    channels: usize,
    cond_dim: usize,
    generators: Vec<Linear>,
}

impl FiLMAdapter {
    pub fn new(channels: usize, cond_dim: usize, vb: VarBuilder) -> Result<Self> {
        let generators = (0..FILM_LAYERS)
            .map(|i| candle_nn::linear(cond_dim, 2 * channels, vb.pp(format!("gen{i}"))))
            .collect::<candle_core::Result<Vec<_>>>()?;
        Ok(Self {
            channels,
            cond_dim,
            generators,
        })
    }

    /// Apply one modulation with explicit `(B, C)` scale and shift.
    pub fn modulate(features: &Tensor, scale: &Tensor, shift: &Tensor) -> Result<Tensor> {
        let (b, c) = scale.dims2()?;
        if features.dims().len() != 4 || features.dims()[..2] != [b, c] || shift.dims() != [b, c] {
            return Err(EtherError::shape(format!("features (B={b}, C={c}, H, W)"), features.dims()));
        }
        let scale = scale.reshape((b, c, 1, 1))?;
        let shift = shift.reshape((b, c, 1, 1))?;
        Ok(features.broadcast_mul(&scale)?.broadcast_add(&shift)?)
    }

    /// Per-layer `(scale, shift)` pairs for a `(B, cond_dim)` conditioning batch.
    pub fn parameters_for(&self, cond: &Tensor) -> Result<Vec<(Tensor, Tensor)>> {
        let (_, d) = cond.dims2()?;
        if d != self.cond_dim {
            return Err(EtherError::shape(format!("(B, {})", self.cond_dim), cond.dims()));
        }
        self.generators
            .iter()
            .map(|g| {
                let out = g.forward(cond)?;
                let scale = (out.narrow(1, 0, self.channels)? + 1.0)?;
                let shift = out.narrow(1, self.channels, self.channels)?;
                Ok((scale, shift))
            })
            .collect()
    }

    pub fn forward(&self, features: &Tensor, cond: &Tensor) -> Result<Tensor> {
        let mut x = features.clone();
        for (scale, shift) in self.parameters_for(cond)? {
            x = Self::modulate(&x, &scale, &shift)?;
        }
        Ok(x)
    }
}
