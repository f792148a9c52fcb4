use crate::error::{EtherError, Result};
use crate::nn::params::to_device_tensor;
use crate::vocab::{Goal, TokenId, EOS};
use candle_core::{DType, Device, Tensor, D};
use candle_nn::rnn::{GRUState, LSTMState, GRU, LSTM, RNN};
use candle_nn::{Init, VarBuilder};

pub const EMBED_DIM: usize = 64;

/// Learned token embedding usable with ids or with (relaxed) one-hot rows.
#[derive(Debug, Clone)]
pub struct TokenEmbedding {
    table: Tensor,
}

impl TokenEmbedding {
    pub fn new(vocab_size: usize, vb: VarBuilder) -> Result<Self> {
        let table = vb.get_with_hints(
            (vocab_size, EMBED_DIM),
            "weight",
            Init::Randn {
                mean: 0.0,
                stdev: 1.0,
            },
        )?;
        Ok(Self { table })
    }

    pub fn vocab_size(&self) -> usize {
        self.table.dims()[0]
    }

    pub fn ids(&self, ids: &Tensor) -> Result<Tensor> {
        let shape = ids.dims().to_vec();
        let flat = self.table.index_select(&ids.flatten_all()?, 0)?;
        let mut out = shape;
        out.push(EMBED_DIM);
        Ok(flat.reshape(out)?)
    }

    /// `(..., V)` one-hot or relaxed rows to `(..., 64)`.
    pub fn one_hot(&self, rows: &Tensor) -> Result<Tensor> {
        Ok(rows.broadcast_matmul(&self.table)?)
    }
}

/// Padded `(B, L)` token ids and a `(B, L)` validity mask. Empty sequences
/// are read as a single EoS.
pub fn pad_tokens(seqs: &[Vec<TokenId>], dtype: DType, device: &Device) -> Result<(Tensor, Tensor, Vec<usize>)> {
    let lens: Vec<usize> = seqs.iter().map(|s| s.len().max(1)).collect();
    let max_len = lens.iter().copied().max().unwrap_or(1);
    let mut ids = Vec::with_capacity(seqs.len() * max_len);
    let mut mask = Vec::with_capacity(seqs.len() * max_len);
    for (s, &len) in seqs.iter().zip(&lens) {
        for t in 0..max_len {
            ids.push(s.get(t).copied().unwrap_or(EOS));
            mask.push(if t < len { 1.0 } else { 0.0 });
        }
    }
    let ids = Tensor::from_vec(ids, (seqs.len(), max_len), device)?;
    let mask = to_device_tensor(mask, &[seqs.len(), max_len], dtype, device)?;
    Ok((ids, mask, lens))
}

/// `m·new + (1 − m)·old` for a `(B, 1)` mask.
pub fn masked_update(mask: &Tensor, new: &Tensor, old: &Tensor) -> Result<Tensor> {
    let keep = (1.0 - mask)?;
    Ok((new.broadcast_mul(mask)? + old.broadcast_mul(&keep)?)?)
}

/// Goal encoder of the RL agent: embedding + single-layer GRU, returning the
/// hidden state after the last token of each goal.
#[derive(Debug, Clone)]
pub struct GoalEncoder {
    embedding: TokenEmbedding,
    gru: GRU,
    hidden: usize,
}

impl GoalEncoder {
    pub fn new(vocab_size: usize, hidden: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            embedding: TokenEmbedding::new(vocab_size, vb.pp("embedding"))?,
            gru: candle_nn::gru(EMBED_DIM, hidden, Default::default(), vb.pp("gru"))?,
            hidden,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.hidden
    }

    pub fn encode(&self, goals: &[&Goal], dtype: DType, device: &Device) -> Result<Tensor> {
        let seqs: Vec<Vec<TokenId>> = goals.iter().map(|g| g.tokens().to_vec()).collect();
        let (ids, mask, _) = pad_tokens(&seqs, dtype, device)?;
        let emb = self.embedding.ids(&ids)?;
        let mut state = self.gru.zero_state(goals.len())?;
        for t in 0..ids.dims()[1] {
            let x = emb.narrow(1, t, 1)?.squeeze(1)?;
            let next = self.gru.step(&x, &state)?;
            let m = mask.narrow(1, t, 1)?;
            state = GRUState {
                h: masked_update(&m, next.h(), state.h())?,
            };
        }
        Ok(state.h)
    }
}

/// Message encoder of the listener: embedding of one-hot symbols + LSTM from
/// a zero state. Returns the hidden state after every prefix.
#[derive(Debug, Clone)]
pub struct MessageEncoder {
    embedding: TokenEmbedding,
    lstm: LSTM,
    hidden: usize,
}

impl MessageEncoder {
    pub fn new(vocab_size: usize, hidden: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self {
            embedding: TokenEmbedding::new(vocab_size, vb.pp("embedding"))?,
            lstm: candle_nn::lstm(EMBED_DIM, hidden, Default::default(), vb.pp("lstm"))?,
            hidden,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// `symbols`: `(B, L, V)` one-hot rows; `mask`: `(B, L)` validity.
    /// Returns `(B, L, H)` prefix states, frozen after each message ends.
    pub fn prefix_states(&self, symbols: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let (b, l, v) = symbols.dims3()?;
        if v != self.embedding.vocab_size() || mask.dims() != [b, l] {
            return Err(EtherError::shape(
                format!("symbols (B, L, {}) with mask (B, L)", self.embedding.vocab_size()),
                symbols.dims(),
            ));
        }
        let emb = self.embedding.one_hot(symbols)?;
        let mut state = self.lstm.zero_state(b)?;
        let mut outs = Vec::with_capacity(l);
        for t in 0..l {
            let x = emb.narrow(1, t, 1)?.squeeze(1)?;
            let next = self.lstm.step(&x, &state)?;
            let m = mask.narrow(1, t, 1)?;
            state = LSTMState::new(masked_update(&m, next.h(), state.h())?, masked_update(&m, next.c(), state.c())?);
            outs.push(state.h.clone());
        }
        Ok(Tensor::stack(&outs, 1)?)
    }

    /// Hidden state after the full message.
    pub fn final_state(&self, symbols: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let states = self.prefix_states(symbols, mask)?;
        let l = states.dim(1)?;
        Ok(states.narrow(1, l - 1, 1)?.squeeze(1)?)
    }
}

/// One-hot `(B, L, V)` rows and `(B, L)` mask for token sequences; an empty
/// message is encoded as a lone EoS.
pub fn one_hot_messages(messages: &[Vec<TokenId>], vocab_size: usize, dtype: DType, device: &Device) -> Result<(Tensor, Tensor)> {
    let (ids, mask, _) = pad_tokens(messages, dtype, device)?;
    let (b, l) = ids.dims2()?;
    let ids: Vec<u32> = ids.flatten_all()?.to_vec1()?;
    let mut rows = vec![0f32; b * l * vocab_size];
    for (i, &t) in ids.iter().enumerate() {
        rows[i * vocab_size + t as usize] = 1.0;
    }
    let rows = to_device_tensor(rows, &[b, l, vocab_size], dtype, device)?;
    Ok((rows, mask))
}

pub fn argmax_rows(t: &Tensor) -> Result<Vec<u32>> {
    Ok(t.argmax(D::Minus1)?.flatten_all()?.to_vec1()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::ParameterStore;

    #[test]
    fn goal_encoding_ignores_padding() {
        let store = ParameterStore::new(DType::F64);
        let enc = GoalEncoder::new(16, 12, store.var_builder()).unwrap();
        let short = Goal::new([3, 4]);
        let long = Goal::new([3, 4, 5, 6, 7]);
        let alone = enc.encode(&[&short], DType::F64, &Device::Cpu).unwrap();
        let batched = enc.encode(&[&short, &long], DType::F64, &Device::Cpu).unwrap();
        let a: Vec<f64> = alone.flatten_all().unwrap().to_vec1().unwrap();
        let b: Vec<f64> = batched.narrow(0, 0, 1).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn listener_state_starts_at_zero_and_freezes_after_end() {
        let store = ParameterStore::new(DType::F64);
        let enc = MessageEncoder::new(10, 8, store.var_builder()).unwrap();
        let (rows, mask) = one_hot_messages(&[vec![2, 0], vec![2, 3, 4, 0]], 10, DType::F64, &Device::Cpu).unwrap();
        let states = enc.prefix_states(&rows, &mask).unwrap();
        assert_eq!(states.dims(), &[2, 4, 8]);
        let s0: Vec<f64> = states.get(0).unwrap().get(1).unwrap().to_vec1().unwrap();
        let s3: Vec<f64> = states.get(0).unwrap().get(3).unwrap().to_vec1().unwrap();
        assert_eq!(s0, s3);
        // first prefix state of both messages matches since they share token 2
        let a: Vec<f64> = states.get(0).unwrap().get(0).unwrap().to_vec1().unwrap();
        let b: Vec<f64> = states.get(1).unwrap().get(0).unwrap().to_vec1().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_message_reads_as_eos() {
        let (rows, mask) = one_hot_messages(&[vec![]], 5, DType::F32, &Device::Cpu).unwrap();
        assert_eq!(rows.dims(), &[1, 1, 5]);
        let r: Vec<f32> = rows.flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(r, vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(mask.flatten_all().unwrap().to_vec1::<f32>().unwrap(), vec![1.0]);
    }
}
