use crate::error::{EtherError, Result};
use crate::nn::encoder::FEATURE_DIM;
use crate::nn::language::{masked_update, pad_tokens, TokenEmbedding};
use crate::nn::params::to_device_tensor;
use crate::refgame::stgs::{gumbel_noise, learned_temperature, one_hot, stgs_sample};
use crate::vocab::{TokenId, EOS, SOS};
use candle_core::{Module, Tensor, D};
use candle_nn::rnn::{LSTMState, LSTM, RNN};
use candle_nn::{Linear, VarBuilder};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeakerConfig {
    pub vocab_size: usize,
    pub max_len: usize,
    pub hidden: usize,
    pub tau0: f64,
}

/// How the speaker turns per-step distributions into symbols.
pub enum Decoding<'a, R: Rng> {
    /// Straight-through Gumbel-Softmax with the learned temperature.
    Stgs(&'a mut R),
    /// Argmax, no noise, no gradient through the symbols.
    Greedy,
}

#[derive(Debug, Clone)]
pub struct SpeakerOutput {
    /// `(B, T, V)` symbols, exact one-hot forward; zero rows after a message ends.
    pub symbols: Tensor,
    /// `(B, T)` 1 where the position belongs to the message (EoS included).
    pub mask: Tensor,
    /// `(B, T, V)` per-step token distributions `W_l`.
    pub distributions: Tensor,
    /// Emitted tokens per sample, EoS included when emitted.
    pub tokens: Vec<Vec<TokenId>>,
}

impl SpeakerOutput {
    pub fn lengths(&self) -> Vec<usize> {
        self.tokens.iter().map(Vec::len).collect()
    }
}

/// Recurrent speaker: the decoder state starts from the adapted visual
/// features, reads the previous symbol, and emits a vocabulary distribution
/// and a temperature at every step.
#[derive(Debug, Clone)]
pub struct Speaker {
    cfg: SpeakerConfig,
    adapter: Linear,
    embedding: TokenEmbedding,
    lstm: LSTM,
    head: Linear,
    temperature: Linear,
}

impl Speaker {
    pub fn new(cfg: SpeakerConfig, vb: VarBuilder) -> Result<Self> {
        if cfg.max_len == 0 || !(cfg.tau0 > 0.0) {
            return Err(EtherError::Config("speaker needs max_len ≥ 1 and τ0 > 0".into()));
        }
        Ok(Self {
            cfg,
            adapter: candle_nn::linear(FEATURE_DIM, cfg.hidden, vb.pp("adapter"))?,
            embedding: TokenEmbedding::new(cfg.vocab_size, vb.pp("embedding"))?,
            lstm: candle_nn::lstm(crate::nn::language::EMBED_DIM, cfg.hidden, Default::default(), vb.pp("lstm"))?,
            head: candle_nn::linear(cfg.hidden, cfg.vocab_size, vb.pp("head"))?,
            temperature: candle_nn::linear(cfg.hidden, 1, vb.pp("temperature"))?,
        })
    }

    pub fn config(&self) -> &SpeakerConfig {
        &self.cfg
    }

    fn initial_state(&self, features: &Tensor) -> Result<LSTMState> {
        let (b, d) = features.dims2()?;
        if d != FEATURE_DIM {
            return Err(EtherError::shape(format!("(B, {FEATURE_DIM})"), features.dims()));
        }
        let h = self.adapter.forward(features)?;
        let c = h.zeros_like()?;
        debug_assert_eq!(h.dims(), &[b, self.cfg.hidden]);
        Ok(LSTMState::new(h, c))
    }

    /// Generate messages for `(B, 64)` pooled features.
    pub fn forward<R: Rng>(&self, features: &Tensor, mut decoding: Decoding<'_, R>) -> Result<SpeakerOutput> {
        let (b, _) = features.dims2()?;
        let (dtype, device) = (features.dtype(), features.device().clone());
        let v = self.cfg.vocab_size;
        let mut state = self.initial_state(features)?;
        let mut input = self.embedding.one_hot(&one_hot(&vec![SOS; b], v, dtype, &device)?)?;
        let mut finished = vec![false; b];
        let mut tokens: Vec<Vec<TokenId>> = vec![Vec::new(); b];
        let (mut symbols, mut masks, mut dists) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..self.cfg.max_len {
            if finished.iter().all(|&f| f) {
                break;
            }
            state = self.lstm.step(&input, &state)?;
            let logits = self.head.forward(state.h())?;
            dists.push(candle_nn::ops::softmax(&logits, D::Minus1)?);
            let (sym, toks) = match &mut decoding {
                Decoding::Stgs(rng) => {
                    let tau = learned_temperature(&self.temperature.forward(state.h())?, self.cfg.tau0)?;
                    let g = gumbel_noise(b, v, *rng, dtype, &device)?;
                    let s = stgs_sample(&logits, &tau, &g)?;
                    (s.hard, s.tokens)
                }
                Decoding::Greedy => {
                    let toks: Vec<u32> = logits.argmax(D::Minus1)?.to_vec1()?;
                    (one_hot(&toks, v, dtype, &device)?, toks)
                }
            };
            let alive: Vec<f32> = finished.iter().map(|&f| if f { 0.0 } else { 1.0 }).collect();
            let alive = to_device_tensor(alive, &[b, 1], dtype, &device)?;
            let sym = sym.broadcast_mul(&alive)?;
            for (i, &t) in toks.iter().enumerate() {
                if !finished[i] {
                    tokens[i].push(t);
                    finished[i] = t == EOS;
                }
            }
            input = self.embedding.one_hot(&sym)?;
            symbols.push(sym);
            masks.push(alive);
        }
        Ok(SpeakerOutput {
            symbols: Tensor::stack(&symbols, 1)?,
            mask: Tensor::cat(&masks, 1)?,
            distributions: Tensor::stack(&dists, 1)?,
            tokens,
        })
    }

    /// Mean per-token negative log-likelihood of `targets` (each ending in
    /// EoS, truncated to `max_len`) under teacher forcing.
    pub fn teacher_forced_nll(&self, features: &Tensor, targets: &[Vec<TokenId>]) -> Result<Tensor> {
        let (b, _) = features.dims2()?;
        if targets.len() != b {
            return Err(EtherError::shape(format!("{b} targets"), targets.len()));
        }
        let (dtype, device) = (features.dtype(), features.device().clone());
        let targets: Vec<Vec<TokenId>> = targets
            .iter()
            .map(|t| t.iter().copied().take(self.cfg.max_len).collect())
            .collect();
        let inputs: Vec<Vec<TokenId>> = targets
            .iter()
            .map(|t| std::iter::once(SOS).chain(t.iter().copied()).take(t.len().max(1)).collect())
            .collect();
        let (in_ids, _, _) = pad_tokens(&inputs, dtype, &device)?;
        let (tgt_ids, mask, _) = pad_tokens(&targets, dtype, &device)?;
        let emb = self.embedding_for_ids(&in_ids)?;
        let mut state = self.initial_state(features)?;
        let mut nll = Vec::new();
        for t in 0..tgt_ids.dims()[1] {
            let x = emb.narrow(1, t, 1)?.squeeze(1)?;
            let next = self.lstm.step(&x, &state)?;
            let m = mask.narrow(1, t, 1)?;
            state = LSTMState::new(masked_update(&m, next.h(), state.h())?, masked_update(&m, next.c(), state.c())?);
            let logp = candle_nn::ops::log_softmax(&self.head.forward(next.h())?, D::Minus1)?;
            let picked = logp.gather(&tgt_ids.narrow(1, t, 1)?.contiguous()?, 1)?;
            nll.push((picked.neg()? * m)?);
        }
        let total = Tensor::cat(&nll, 1)?.sum_all()?;
        Ok((total / mask.sum_all()?.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)?)
    }

    fn embedding_for_ids(&self, ids: &Tensor) -> Result<Tensor> {
        self.embedding.ids(ids)
    }

    /// Greedy decode, returning EoS-truncated token sequences.
    pub fn greedy(&self, features: &Tensor) -> Result<Vec<Vec<TokenId>>> {
        Ok(self.forward::<rand::rngs::StdRng>(features, Decoding::Greedy)?.tokens)
    }
}
