use crate::error::{EtherError, Result};
use crate::nn::encoder::FEATURE_DIM;
use crate::nn::language::MessageEncoder;
use candle_core::{Module, Tensor};
use candle_nn::{Init, Linear, VarBuilder};

/// Listener: message encoder from a zero state, per-candidate adapter, and
/// dot-product scores. In descriptive mode a learned "no target" logit is
/// appended after the candidates.
#[derive(Debug, Clone)]
pub struct Listener {
    adapter: Linear,
    encoder: MessageEncoder,
    no_target: Option<Tensor>,
}

impl Listener {
    pub fn new(vocab_size: usize, hidden: usize, descriptive: bool, vb: VarBuilder) -> Result<Self> {
        let no_target = if descriptive {
            Some(vb.get_with_hints(1, "no_target", Init::Const(0.0))?)
        } else {
            None
        };
        Ok(Self {
            adapter: candle_nn::linear(FEATURE_DIM, hidden, vb.pp("adapter"))?,
            encoder: MessageEncoder::new(vocab_size, hidden, vb.pp("encoder"))?,
            no_target,
        })
    }

    pub fn descriptive(&self) -> bool {
        self.no_target.is_some()
    }

    /// The no-target logit: learned when descriptive, constant zero otherwise.
    pub fn no_target_logit(&self) -> Result<f64> {
        match &self.no_target {
            Some(t) => Ok(t.to_dtype(candle_core::DType::F64)?.to_vec1::<f64>()?[0]),
            None => Ok(0.0),
        }
    }

    /// `symbols` `(B, L, V)`, `mask` `(B, L)`, `candidates` `(B, N, 64)` →
    /// logits `(B, L, N)` (or `(B, L, N + 1)` descriptive), one row per prefix.
    pub fn prefix_logits(&self, symbols: &Tensor, mask: &Tensor, candidates: &Tensor) -> Result<Tensor> {
        let (b, l, _) = symbols.dims3()?;
        let (cb, n, d) = candidates.dims3()?;
        if cb != b || d != FEATURE_DIM {
            return Err(EtherError::shape(format!("candidates ({b}, N, {FEATURE_DIM})"), candidates.dims()));
        }
        let states = self.encoder.prefix_states(symbols, mask)?;
        let keys = self.adapter.forward(&candidates.reshape((b * n, d))?)?.reshape((b, n, ()))?;
        let logits = states.matmul(&keys.transpose(1, 2)?.contiguous()?)?;
        match &self.no_target {
            Some(z) => {
                let extra = z.reshape((1, 1, 1))?.broadcast_as((b, l, 1))?.to_dtype(logits.dtype())?;
                Ok(Tensor::cat(&[logits, extra], 2)?)
            }
            None => Ok(logits),
        }
    }
}
