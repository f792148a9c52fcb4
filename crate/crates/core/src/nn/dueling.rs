use crate::error::Result;
use candle_core::{Module, Tensor, D};
use candle_nn::{Linear, VarBuilder};

/// Single-layer value and advantage heads combined as `V + A − mean(A)`.
#[derive(Debug, Clone)]
pub struct DuelingHead {
    value: Linear,
    advantage: Linear,
}

impl DuelingHead {
    pub fn new(input: usize, actions: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            value: candle_nn::linear(input, 1, vb.pp("value"))?,
            advantage: candle_nn::linear(input, actions, vb.pp("advantage"))?,
        })
    }

    pub fn combine(value: &Tensor, advantage: &Tensor) -> Result<Tensor> {
        let mean = advantage.mean_keepdim(D::Minus1)?;
        Ok(advantage.broadcast_sub(&mean)?.broadcast_add(value)?)
    }

    pub fn forward(&self, core: &Tensor) -> Result<Tensor> {
        Self::combine(&self.value.forward(core)?, &self.advantage.forward(core)?)
    }
}
