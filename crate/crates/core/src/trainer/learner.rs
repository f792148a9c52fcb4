use crate::error::{EtherError, Result};
use crate::nn::params::{to_device_tensor, ParameterStore};
use crate::refgame::Stimulus;
use crate::replay::{SampledBatch, Segment};
use crate::trainer::network::{QNetConfig, QNetwork, SequenceInput};
use crate::trainer::targets::n_step_targets;
use crate::trainer::TrainerConfig;
use candle_core::{DType, Tensor, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use std::sync::Arc;

/// Parameter prefixes the RL loss trains.
pub const AGENT_PREFIXES: [&str; 2] = ["encoder", "agent"];

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateReport {
    pub loss: f64,
    /// `|δ|` over each segment's trainable steps.
    pub td_errors: Vec<Vec<f64>>,
    pub grad_norm: f64,
    pub synced: bool,
}

/// Loss, TD errors and targets of one batch, before any optimizer step.
pub struct BatchLoss {
    pub loss: Tensor,
    pub td_errors: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    pub q_taken: Vec<Vec<f64>>,
}

pub struct Learner {
    cfg: TrainerConfig,
    online: Arc<ParameterStore>,
    target: ParameterStore,
    net: QNetwork,
    target_net: QNetwork,
    vars: Vec<Var>,
    optimizer: AdamW,
    updates: u64,
}

impl Learner {
    /// Builds (or reuses) the online network in `online` and a target copy.
    pub fn new(cfg: TrainerConfig, in_channels: usize, online: Arc<ParameterStore>) -> Result<Self> {
        cfg.validate()?;
        let net = QNetwork::new(cfg.network, in_channels, online.var_builder())?;
        let target = ParameterStore::new(online.dtype());
        let target_net = QNetwork::new(cfg.network, in_channels, target.var_builder())?;
        target.copy_from(&online, &AGENT_PREFIXES)?;
        let vars = online.trainable(&AGENT_PREFIXES);
        let optimizer = AdamW::new(
            vars.clone(),
            ParamsAdamW {
                lr: cfg.learning_rate,
                eps: cfg.adam_eps,
                weight_decay: 0.0,
                ..Default::default()
            },
        )?;
        Ok(Self {
            cfg,
            online,
            target,
            net,
            target_net,
            vars,
            optimizer,
            updates: 0,
        })
    }

    pub fn network(&self) -> &QNetwork {
        &self.net
    }

    pub fn network_config(&self) -> &QNetConfig {
        self.net.config()
    }

    pub fn online(&self) -> &Arc<ParameterStore> {
        &self.online
    }

    pub fn target(&self) -> &ParameterStore {
        &self.target
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn set_updates(&mut self, updates: u64) {
        self.updates = updates;
    }

    /// Burn-in length of a segment: none for segments that open an episode
    /// when configured so.
    pub fn burn_in_for<S>(&self, seg: &Segment<S>) -> usize {
        if self.cfg.burn_in_from_episode_start && seg.at_episode_start() {
            0
        } else {
            self.cfg.burn_in
        }
    }

    /// Pad the segments to a common length and stack their inputs.
    pub fn prepare<S: Stimulus>(&self, segments: &[Arc<Segment<S>>]) -> Result<SequenceInput> {
        if segments.is_empty() {
            return Err(EtherError::Usage("empty learner batch".into()));
        }
        let steps = segments.iter().map(|s| s.valid_len + 1).max().unwrap_or(1);
        let b = segments.len();
        let mut flat = Vec::new();
        let mut prev_actions = Vec::with_capacity(b * steps);
        let mut prev_rewards = Vec::with_capacity(b * steps);
        let mut per = 0;
        for seg in segments {
            let inputs: Vec<Vec<f32>> = seg.states.iter().map(|s| s.input()).collect::<Result<_>>()?;
            per = inputs[0].len();
            for j in 0..steps {
                flat.extend_from_slice(&inputs[j.min(seg.valid_len)]);
                let (a, r) = match j {
                    0 => (seg.prev_action, seg.prev_reward),
                    j if j <= seg.valid_len => (Some(seg.actions[j - 1]), seg.rewards[j - 1]),
                    _ => (None, 0.0),
                };
                prev_actions.push(a);
                prev_rewards.push(r);
            }
        }
        let channels = per / (crate::nn::encoder::INPUT_SIZE * crate::nn::encoder::INPUT_SIZE);
        let shape = [b * steps, channels, crate::nn::encoder::INPUT_SIZE, crate::nn::encoder::INPUT_SIZE];
        Ok(SequenceInput {
            pixels: to_device_tensor(flat, &shape, self.online.dtype(), self.online.device())?,
            goals: segments.iter().map(|s| s.goal.clone()).collect(),
            prev_actions,
            prev_rewards,
            initial: segments.iter().map(|s| s.initial_state.as_deref().cloned()).collect(),
            batch: b,
            steps,
        })
    }

    /// IS-weighted squared TD loss over trainable steps
    /// `burn_in ≤ t < valid_len`, each segment averaged over its own steps.
    pub fn batch_loss<S: Stimulus>(&self, segments: &[Arc<Segment<S>>], weights: &[f64]) -> Result<BatchLoss> {
        if weights.len() != segments.len() {
            return Err(EtherError::shape(format!("{} weights", segments.len()), weights.len()));
        }
        let input = self.prepare(segments)?;
        let burn: Vec<usize> = segments.iter().map(|s| self.burn_in_for(s)).collect();
        let q = self.net.unroll(&input, &burn)?;
        let q_target = self.target_net.unroll(&input, &vec![0; segments.len()])?.detach();
        let q_rows: Vec<Vec<Vec<f32>>> = q.detach().to_dtype(DType::F32)?.to_vec3()?;
        let qt_rows: Vec<Vec<Vec<f32>>> = q_target.to_dtype(DType::F32)?.to_vec3()?;
        let (b, t) = (input.batch, input.steps);
        let actions_n = q.dims()[2];
        let mut y_flat = vec![0f32; b * t];
        let mut mask = vec![0f32; b * t];
        let mut onehot = vec![0f32; b * t * actions_n];
        let mut targets = Vec::with_capacity(b);
        for (i, seg) in segments.iter().enumerate() {
            let y = n_step_targets(&seg.rewards, &seg.dones, seg.valid_len, &q_rows[i], &qt_rows[i], self.cfg.gamma, self.cfg.n_step)?;
            let trainable = seg.valid_len.saturating_sub(burn[i]);
            for (step, &target) in y.iter().enumerate() {
                let k = i * t + step;
                y_flat[k] = target as f32;
                onehot[k * actions_n + seg.actions[step]] = 1.0;
                if step >= burn[i] {
                    mask[k] = (weights[i] / trainable as f64 / b as f64) as f32;
                }
            }
            targets.push(y);
        }
        let dev = self.online.device();
        let dtype = self.online.dtype();
        let onehot = to_device_tensor(onehot, &[b, t, actions_n], dtype, dev)?;
        let taken = (q * onehot)?.sum(2)?;
        let y_t = to_device_tensor(y_flat, &[b, t], dtype, dev)?;
        let delta = (y_t - &taken)?;
        let mask_t = to_device_tensor(mask, &[b, t], dtype, dev)?;
        let loss = (delta.sqr()? * mask_t)?.sum_all()?;
        let delta_rows: Vec<Vec<f32>> = delta.detach().to_dtype(DType::F32)?.to_vec2()?;
        let taken_rows: Vec<Vec<f32>> = taken.detach().to_dtype(DType::F32)?.to_vec2()?;
        let mut td_errors = Vec::with_capacity(b);
        let mut q_taken = Vec::with_capacity(b);
        for (i, seg) in segments.iter().enumerate() {
            td_errors.push((burn[i]..seg.valid_len).map(|s| (delta_rows[i][s] as f64).abs()).collect());
            q_taken.push((0..seg.valid_len).map(|s| taken_rows[i][s] as f64).collect());
        }
        Ok(BatchLoss {
            loss,
            td_errors,
            targets,
            q_taken,
        })
    }

    /// One optimizer step on a sampled batch; syncs the target network every
    /// `target_update_interval` updates.
    pub fn update<S: Stimulus>(&mut self, batch: &SampledBatch<S>) -> Result<UpdateReport> {
        let out = self.batch_loss(&batch.segments, &batch.weights)?;
        let loss = out.loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        if !loss.is_finite() {
            return Err(EtherError::NonFinite(format!("TD loss at update {}", self.updates + 1)));
        }
        let mut grads = out.loss.backward()?;
        let grad_norm = clip_gradients(&mut grads, &self.vars, self.cfg.grad_clip_norm)?;
        self.online.update(|| Ok(self.optimizer.step(&grads)?))?;
        self.updates += 1;
        let synced = self.updates % self.cfg.target_update_interval == 0;
        if synced {
            self.sync_target()?;
        }
        Ok(UpdateReport {
            loss,
            td_errors: out.td_errors,
            grad_norm,
            synced,
        })
    }

    pub fn sync_target(&mut self) -> Result<()> {
        self.target.copy_from(&self.online, &AGENT_PREFIXES)
    }
}

/// Scale gradients so their global norm is at most `max_norm` (`0` leaves
/// them untouched). Returns the norm before clipping.
pub fn clip_gradients(grads: &mut candle_core::backprop::GradStore, vars: &[Var], max_norm: f64) -> Result<f64> {
    let mut sq = 0.0;
    for v in vars {
        if let Some(g) = grads.get(v.as_tensor()) {
            sq += g.sqr()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        }
    }
    let norm = sq.sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let scale = max_norm / norm;
        for v in vars {
            if let Some(g) = grads.remove(v.as_tensor()) {
                grads.insert(v.as_tensor(), (g * scale)?);
            }
        }
    }
    Ok(norm)
}
