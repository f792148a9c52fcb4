use super::{MappingFunction, PredicateFunction};
use crate::error::{EtherError, Result};
use crate::nn::speaker::{Speaker, SpeakerConfig};
use crate::refgame::losses::scalar;
use crate::refgame::{RefGame, Stimulus, StimulusEncoder};
use crate::vocab::Goal;
use candle_core::{DType, Device, Var};
use candle_nn::{AdamW, Optimizer, ParamsAdamW, VarBuilder};

fn inputs_of<S: Stimulus>(states: &[&S]) -> Result<Vec<Vec<f32>>> {
    states.iter().map(|s| s.input()).collect()
}

/// The game speaker as a relabelling function (greedy decoding).
pub struct SpeakerMapping<'a>(pub &'a RefGame);

impl<S: Stimulus> MappingFunction<S> for SpeakerMapping<'_> {
    fn map_batch(&self, states: &[&S]) -> Result<Vec<Goal>> {
        Ok(self.0.describe(&inputs_of(states)?)?.into_iter().map(Goal::new).collect())
    }
}

/// The game listener as a predicate: the goal holds when its logit beats the
/// no-target logit.
pub struct ListenerPredicate<'a>(pub &'a RefGame);

impl<S: Stimulus> PredicateFunction<S> for ListenerPredicate<'_> {
    fn evaluate_batch(&self, states: &[&S], goals: &[&Goal]) -> Result<Vec<bool>> {
        if !self.0.config().descriptive {
            return Err(EtherError::Usage("listener predicate needs a descriptive game".into()));
        }
        Ok(self.0.predicate_margins(&inputs_of(states)?, goals)?.into_iter().map(|m| m > 0.0).collect())
    }
}

/// Supervised instruction generator: a speaker trained by teacher forcing
/// on `(state, goal)` pairs, decoded greedily.
pub struct InstructionGenerator {
    encoder: StimulusEncoder,
    speaker: Speaker,
    optimizer: AdamW,
    dtype: DType,
    device: Device,
}

impl InstructionGenerator {
    /// `trainable` covers the speaker variables and whichever encoder
    /// variables this generator may update.
    pub fn new(encoder: StimulusEncoder, cfg: SpeakerConfig, vb: VarBuilder, trainable: impl FnOnce() -> Vec<Var>, lr: f64) -> Result<Self> {
        let (dtype, device) = (vb.dtype(), vb.device().clone());
        let speaker = Speaker::new(cfg, vb)?;
        let optimizer = AdamW::new(
            trainable(),
            ParamsAdamW {
                lr,
                weight_decay: 0.0,
                ..Default::default()
            },
        )?;
        Ok(Self {
            encoder,
            speaker,
            optimizer,
            dtype,
            device,
        })
    }

    pub fn describe(&self, inputs: &[Vec<f32>]) -> Result<Vec<Goal>> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let feats = self.encoder.features(inputs, false, self.dtype, &self.device)?;
        Ok(self.speaker.greedy(&feats)?.into_iter().map(Goal::new).collect())
    }

    /// One optimizer step on the mean per-token NLL of `goals` (each read
    /// with its trailing EoS). Returns the loss before the step.
    pub fn train_step(&mut self, inputs: &[Vec<f32>], goals: &[&Goal]) -> Result<f64> {
        if inputs.is_empty() || inputs.len() != goals.len() {
            return Err(EtherError::shape(format!("{} goals (non-empty)", inputs.len()), goals.len()));
        }
        let feats = self.encoder.features(inputs, true, self.dtype, &self.device)?;
        let targets: Vec<_> = goals.iter().map(|g| g.with_eos()).collect();
        let loss = self.speaker.teacher_forced_nll(&feats, &targets)?;
        let value = scalar(&loss)?;
        if !value.is_finite() {
            return Err(EtherError::NonFinite("instruction generator loss".into()));
        }
        self.optimizer.backward_step(&loss)?;
        Ok(value)
    }

    /// Exact-match accuracy of greedy descriptions; `None` on an empty set.
    pub fn accuracy<S: Stimulus>(&self, pairs: &[(S, Goal)]) -> Result<Option<f64>> {
        if pairs.is_empty() {
            return Ok(None);
        }
        let mut hits = 0usize;
        for chunk in pairs.chunks(64) {
            let inputs: Vec<Vec<f32>> = chunk.iter().map(|(s, _)| s.input()).collect::<Result<_>>()?;
            let out = self.describe(&inputs)?;
            hits += out.iter().zip(chunk).filter(|(m, (_, g))| *m == g).count();
        }
        Ok(Some(hits as f64 / pairs.len() as f64))
    }
}

impl<S: Stimulus> MappingFunction<S> for InstructionGenerator {
    fn map_batch(&self, states: &[&S]) -> Result<Vec<Goal>> {
        self.describe(&inputs_of(states)?)
    }
}
