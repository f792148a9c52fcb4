//! Goal-conditioned recurrent Q-network.

use crate::error::{EtherError, Result};
use crate::gridworld::Action;
use crate::nn::encoder::{VisualEncoder, ENCODER_WIDTHS, OUTPUT_SIZE};
use crate::nn::language::masked_update;
use crate::nn::{DuelingHead, FiLMAdapter, GoalEncoder};
use crate::replay::RecurrentState;
use crate::vocab::Goal;
use candle_core::{DType, Device, Module, Tensor};
use candle_nn::rnn::{LSTMState, LSTM, RNN};
use candle_nn::{Linear, VarBuilder};
use serde::{Deserialize, Serialize};

pub const TRUNK_WIDTHS: [usize; 3] = [256, 128, 64];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QNetConfig {
    pub vocab_size: usize,
    pub core_size: usize,
    pub goal_hidden: usize,
}

impl Default for QNetConfig {
    fn default() -> Self {
        Self {
            vocab_size: crate::vocab::DEFAULT_VOCAB_SIZE,
            core_size: 1024,
            goal_hidden: 128,
        }
    }
}

impl QNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.core_size == 0 || self.goal_hidden == 0 {
            return Err(EtherError::Config("network: sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn core_input(&self) -> usize {
        TRUNK_WIDTHS[2] + Action::COUNT + 1
    }
}

/// Encoder → FiLM(goal) → 256/128/64 trunk → ⊕ (previous action, previous
/// reward) → LSTM core → dueling head. The encoder lives under `encoder`,
/// everything else under `agent`.
#[derive(Debug, Clone)]
pub struct QNetwork {
    cfg: QNetConfig,
    encoder: VisualEncoder,
    goal: GoalEncoder,
    film: FiLMAdapter,
    trunk: Vec<Linear>,
    core: LSTM,
    head: DuelingHead,
    dtype: DType,
    device: Device,
}

/// Inputs of `B` sequences of `T` positions, flattened batch-major.
#[derive(Debug, Clone)]
pub struct SequenceInput {
    /// `(B·T, 4·C, 64, 64)`.
    pub pixels: Tensor,
    pub goals: Vec<Goal>,
    /// Previous action per position, batch-major.
    pub prev_actions: Vec<Option<usize>>,
    pub prev_rewards: Vec<f32>,
    pub initial: Vec<Option<RecurrentState>>,
    pub batch: usize,
    pub steps: usize,
}

impl QNetwork {
    /// `vb` is the store root.
    pub fn new(cfg: QNetConfig, in_channels: usize, vb: VarBuilder) -> Result<Self> {
        cfg.validate()?;
        let agent = vb.pp("agent");
        let flat = ENCODER_WIDTHS[2] * OUTPUT_SIZE * OUTPUT_SIZE;
        let mut trunk = Vec::with_capacity(TRUNK_WIDTHS.len());
        let mut width = flat;
        for (i, &w) in TRUNK_WIDTHS.iter().enumerate() {
            trunk.push(candle_nn::linear(width, w, agent.pp(format!("fc{i}")))?);
            width = w;
        }
        Ok(Self {
            encoder: VisualEncoder::new(in_channels, vb.pp("encoder"))?,
            goal: GoalEncoder::new(cfg.vocab_size, cfg.goal_hidden, agent.pp("goal"))?,
            film: FiLMAdapter::new(ENCODER_WIDTHS[2], cfg.goal_hidden, agent.pp("film"))?,
            trunk,
            core: candle_nn::lstm(cfg.core_input(), cfg.core_size, Default::default(), agent.pp("core"))?,
            head: DuelingHead::new(cfg.core_size, Action::COUNT, agent.pp("head"))?,
            cfg,
            dtype: vb.dtype(),
            device: vb.device().clone(),
        })
    }

    pub fn config(&self) -> &QNetConfig {
        &self.cfg
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn encoder(&self) -> &VisualEncoder {
        &self.encoder
    }

    pub fn goal_embedding(&self, goals: &[&Goal]) -> Result<Tensor> {
        self.goal.encode(goals, self.dtype, &self.device)
    }

    /// `(N, 64)` trunk output for pixels and per-row goal embeddings. The
    /// encoder's normalisation statistics stay frozen here.
    pub fn torso(&self, pixels: &Tensor, cond: &Tensor) -> Result<Tensor> {
        let maps = self.encoder.forward_t(pixels, false)?;
        let mut x = self.film.forward(&maps, cond)?.flatten_from(1)?;
        for layer in &self.trunk {
            x = layer.forward(&x)?.relu()?;
        }
        Ok(x)
    }

    /// Append the one-hot previous action and the previous reward.
    pub fn core_input(&self, torso: &Tensor, prev_actions: &[Option<usize>], prev_rewards: &[f32]) -> Result<Tensor> {
        let n = torso.dims()[0];
        if prev_actions.len() != n || prev_rewards.len() != n {
            return Err(EtherError::shape(format!("{n} previous actions and rewards"), (prev_actions.len(), prev_rewards.len())));
        }
        let mut extra = vec![0f32; n * (Action::COUNT + 1)];
        for (i, (a, r)) in prev_actions.iter().zip(prev_rewards).enumerate() {
            let row = &mut extra[i * (Action::COUNT + 1)..(i + 1) * (Action::COUNT + 1)];
            if let Some(a) = a {
                row[*a] = 1.0;
            }
            row[Action::COUNT] = *r;
        }
        let extra = Tensor::from_vec(extra, (n, Action::COUNT + 1), &self.device)?.to_dtype(self.dtype)?;
        Ok(Tensor::cat(&[torso, &extra], 1)?)
    }

    pub fn state_tensor(&self, states: &[Option<RecurrentState>]) -> Result<LSTMState> {
        let h_size = self.cfg.core_size;
        let mut h = Vec::with_capacity(states.len() * h_size);
        let mut c = Vec::with_capacity(states.len() * h_size);
        for s in states {
            match s {
                Some(s) if s.h.len() == h_size && s.c.len() == h_size => {
                    h.extend_from_slice(&s.h);
                    c.extend_from_slice(&s.c);
                }
                Some(s) => return Err(EtherError::shape(format!("recurrent state of {h_size}"), s.h.len())),
                None => {
                    h.extend(std::iter::repeat_n(0.0, h_size));
                    c.extend(std::iter::repeat_n(0.0, h_size));
                }
            }
        }
        let b = states.len();
        let h = Tensor::from_vec(h, (b, h_size), &self.device)?.to_dtype(self.dtype)?;
        let c = Tensor::from_vec(c, (b, h_size), &self.device)?.to_dtype(self.dtype)?;
        Ok(LSTMState::new(h, c))
    }

    pub fn state_rows(&self, state: &LSTMState) -> Result<Vec<RecurrentState>> {
        let h: Vec<Vec<f32>> = state.h().to_dtype(DType::F32)?.to_vec2()?;
        let c: Vec<Vec<f32>> = state.c().to_dtype(DType::F32)?.to_vec2()?;
        Ok(h.into_iter().zip(c).map(|(h, c)| RecurrentState { h, c }).collect())
    }

    /// One acting step: `(B, A)` Q-values and the advanced state.
    pub fn step(&self, core_input: &Tensor, state: &LSTMState) -> Result<(Tensor, LSTMState)> {
        let next = self.core.step(core_input, state)?;
        let q = self.head.forward(next.h())?;
        Ok((q, next))
    }

    /// Unroll `B` sequences; returns `(B, T, A)` Q-values. For sample `b`
    /// the recurrent state entering position `detach_at[b]` is cut from the
    /// graph, so earlier positions receive no gradient through later ones.
    pub fn unroll(&self, input: &SequenceInput, detach_at: &[usize]) -> Result<Tensor> {
        let (b, t) = (input.batch, input.steps);
        if input.goals.len() != b || input.initial.len() != b || detach_at.len() != b {
            return Err(EtherError::shape(format!("{b} goals, initial states and burn-in lengths"), input.goals.len()));
        }
        let goal_refs: Vec<&Goal> = input.goals.iter().collect();
        let cond = self.goal_embedding(&goal_refs)?;
        let cond = cond.unsqueeze(1)?.repeat((1, t, 1))?.reshape((b * t, self.cfg.goal_hidden))?;
        let torso = self.torso(&input.pixels, &cond)?;
        let x = self.core_input(&torso, &input.prev_actions, &input.prev_rewards)?.reshape((b, t, self.cfg.core_input()))?;
        let mut state = self.state_tensor(&input.initial)?;
        let mut outs = Vec::with_capacity(t);
        for step in 0..t {
            let cut: Vec<f32> = detach_at.iter().map(|&d| if d == step && step > 0 { 1.0 } else { 0.0 }).collect();
            if cut.iter().any(|&c| c > 0.0) {
                let m = Tensor::from_vec(cut, (b, 1), &self.device)?.to_dtype(self.dtype)?;
                state = LSTMState::new(
                    masked_update(&m, &state.h().detach(), state.h())?,
                    masked_update(&m, &state.c().detach(), state.c())?,
                );
            }
            let (q, next) = self.step(&x.narrow(1, step, 1)?.squeeze(1)?, &state)?;
            outs.push(q);
            state = next;
        }
        Ok(Tensor::stack(&outs, 1)?)
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f32]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f32::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

pub fn q_rows(q: &Tensor) -> Result<Vec<Vec<f32>>> {
    Ok(q.to_dtype(DType::F32)?.to_vec2()?)
}
