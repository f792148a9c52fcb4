//! Discriminative, object-centric referential game between a speaker and a
//! listener, trained with the LazImpa objective through the STGS channel.

use crate::error::{EtherError, Result};
use crate::gridworld::Observation;
use crate::nn::encoder::{VisualEncoder, FEATURE_DIM, INPUT_SIZE};
use crate::nn::language::one_hot_messages;
use crate::nn::params::to_device_tensor;
use crate::nn::speaker::{Decoding, Speaker, SpeakerConfig};
use crate::refgame::augment::{augment, AugmentConfig};
use crate::refgame::listener::Listener;
use crate::refgame::losses::{impatient_loss, lazy_loss, scalar};
use crate::vocab::{Goal, TokenId};
use candle_core::{DType, Device, Module, Tensor, Var, D};
use candle_nn::{AdamW, Linear, Optimizer, ParamsAdamW, VarBuilder};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GameConfig {
    pub vocab_size: usize,
    /// Maximum message length, EoS included.
    pub max_len: usize,
    pub distractors: usize,
    pub descriptive: bool,
    /// Probability that the target is withheld from the listener when descriptive.
    pub descriptive_prob: f64,
    pub tau0: f64,
    pub beta0: f64,
    pub margin: f64,
    pub hidden: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// RG epochs per environment episode.
    pub epochs_per_episode: usize,
    pub augmentation: AugmentConfig,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self {
            vocab_size: crate::vocab::DEFAULT_VOCAB_SIZE,
            max_len: 10,
            distractors: 3,
            descriptive: false,
            descriptive_prob: 0.5,
            tau0: 0.2,
            beta0: 0.01,
            margin: 1.0,
            hidden: 128,
            learning_rate: 1e-3,
            batch_size: 32,
            epochs_per_episode: 1,
            augmentation: AugmentConfig::default(),
        }
    }
}

impl GameConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(EtherError::Config(format!("refgame: {m}")));
        if self.vocab_size < crate::vocab::GROUNDED_TOKENS + 2 {
            return bad("vocab_size must cover the instruction tokens plus SoS and EoS");
        }
        if self.max_len == 0 || self.hidden == 0 || self.batch_size == 0 {
            return bad("max_len, hidden and batch_size must be positive");
        }
        if !(self.tau0 > 0.0) || !(self.beta0 > 0.0) || !(self.margin >= 0.0) || !(self.learning_rate > 0.0) {
            return bad("tau0, beta0 and learning_rate must be positive, margin non-negative");
        }
        if !(0.0..=1.0).contains(&self.descriptive_prob) {
            return bad("descriptive_prob must lie in [0, 1]");
        }
        self.augmentation.validate()
    }

    pub fn speaker(&self) -> SpeakerConfig {
        SpeakerConfig {
            vocab_size: self.vocab_size,
            max_len: self.max_len,
            hidden: self.hidden,
            tau0: self.tau0,
        }
    }

    /// Candidates shown to the listener per game.
    pub fn candidates(&self) -> usize {
        self.distractors + 1
    }
}

/// Anything the game can show: a flat input vector for the stimulus encoder.
pub trait Stimulus {
    fn input(&self) -> Result<Vec<f32>>;
}

impl Stimulus for Observation {
    fn input(&self) -> Result<Vec<f32>> {
        self.pixels()
    }
}

/// An attribute-vector stimulus fed through a linear encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolicStimulus(pub Vec<f32>);

impl Stimulus for SymbolicStimulus {
    fn input(&self) -> Result<Vec<f32>> {
        Ok(self.0.clone())
    }
}

impl<S: Stimulus> Stimulus for &S {
    fn input(&self) -> Result<Vec<f32>> {
        (*self).input()
    }
}

/// Maps raw stimuli to `(N, 64)` features.
#[derive(Debug, Clone)]
pub enum StimulusEncoder {
    Visual(VisualEncoder),
    Symbolic { layer: Linear, dim: usize },
}

impl StimulusEncoder {
    pub fn symbolic(dim: usize, vb: VarBuilder) -> Result<Self> {
        Ok(Self::Symbolic {
            layer: candle_nn::linear(dim, FEATURE_DIM, vb)?,
            dim,
        })
    }

    fn input_shape(&self, n: usize) -> Vec<usize> {
        match self {
            Self::Visual(e) => vec![n, e.in_channels(), INPUT_SIZE, INPUT_SIZE],
            Self::Symbolic { dim, .. } => vec![n, *dim],
        }
    }

    /// `(channels, size)` when the stimuli are images.
    pub fn image_layout(&self) -> Option<(usize, usize)> {
        match self {
            Self::Visual(e) => Some((e.in_channels(), INPUT_SIZE)),
            Self::Symbolic { .. } => None,
        }
    }

    pub fn features(&self, inputs: &[Vec<f32>], train: bool, dtype: DType, device: &Device) -> Result<Tensor> {
        let shape = self.input_shape(inputs.len());
        let per: usize = shape[1..].iter().product();
        if let Some(bad) = inputs.iter().find(|x| x.len() != per) {
            return Err(EtherError::shape(format!("stimulus of {per} values"), bad.len()));
        }
        let flat: Vec<f32> = inputs.iter().flatten().copied().collect();
        let x = to_device_tensor(flat, &shape, dtype, device)?;
        self.features_of(&x, train)
    }

    pub fn features_of(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        match self {
            Self::Visual(e) => e.pooled(x, train),
            Self::Symbolic { layer, .. } => Ok(layer.forward(x)?),
        }
    }
}

/// One batch of games. `targets[b]` indexes the listener candidates, or
/// equals the candidate count when the target was withheld.
#[derive(Debug, Clone)]
pub struct StimulusBatch {
    pub speaker_inputs: Vec<Vec<f32>>,
    pub listener_inputs: Vec<Vec<Vec<f32>>>,
    pub targets: Vec<usize>,
    /// Pool index of each game's target.
    pub target_ids: Vec<usize>,
}

impl StimulusBatch {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Draw `batch_size` games from `pool`: uniform targets, distractors uniform
/// without replacement excluding the target, shuffled target position, and
/// independent augmentation draws for every view.
pub fn sample_games<S: Stimulus>(
    pool: &[S],
    batch_size: usize,
    cfg: &GameConfig,
    image_layout: Option<(usize, usize)>,
    rng: &mut impl Rng,
) -> Result<StimulusBatch> {
    let targets: Vec<usize> = (0..batch_size).map(|_| rng.random_range(0..pool.len().max(1))).collect();
    build_games(pool, &targets, cfg, image_layout, rng)
}

/// Same as [`sample_games`] with the targets fixed by the caller.
pub fn build_games<S: Stimulus>(
    pool: &[S],
    target_ids: &[usize],
    cfg: &GameConfig,
    image_layout: Option<(usize, usize)>,
    rng: &mut impl Rng,
) -> Result<StimulusBatch> {
    let k = cfg.distractors;
    let needed = k + 1 + usize::from(cfg.descriptive);
    if pool.len() < needed {
        return Err(EtherError::Usage(format!(
            "referential game needs at least {needed} stimuli, pool has {}",
            pool.len()
        )));
    }
    let view = |s: &S, rng: &mut dyn rand::RngCore| -> Result<Vec<f32>> {
        let x = s.input()?;
        Ok(match image_layout {
            Some((c, size)) if !cfg.augmentation.is_identity() => augment(&x, c, size, &cfg.augmentation, rng.next_u64()),
            _ => x,
        })
    };
    let mut batch = StimulusBatch {
        speaker_inputs: Vec::with_capacity(target_ids.len()),
        listener_inputs: Vec::with_capacity(target_ids.len()),
        targets: Vec::with_capacity(target_ids.len()),
        target_ids: target_ids.to_vec(),
    };
    for &t in target_ids {
        let withheld = cfg.descriptive && rng.random_bool(cfg.descriptive_prob);
        let n_distractors = if withheld { k + 1 } else { k };
        let others: Vec<usize> = sample(rng, pool.len() - 1, n_distractors)
            .into_iter()
            .map(|i| if i >= t { i + 1 } else { i })
            .collect();
        let position = rng.random_range(0..=k);
        let mut candidates: Vec<usize> = others;
        let label = if withheld {
            k + 1
        } else {
            candidates.insert(position, t);
            position
        };
        batch.speaker_inputs.push(view(&pool[t], rng)?);
        batch.listener_inputs.push(candidates.iter().map(|&i| view(&pool[i], rng)).collect::<Result<_>>()?);
        batch.targets.push(label);
    }
    Ok(batch)
}

#[derive(Debug, Clone)]
pub struct GameOutput {
    pub lazy: Tensor,
    pub impatient: Tensor,
    pub total: Tensor,
    pub accuracy: f64,
    pub mean_length: f64,
    pub messages: Vec<Vec<TokenId>>,
}

/// Speaker, listener and the stimulus encoder they share.
#[derive(Debug, Clone)]
pub struct RefGame {
    cfg: GameConfig,
    encoder: StimulusEncoder,
    speaker: Speaker,
    listener: Listener,
    dtype: DType,
    device: Device,
}

impl RefGame {
    pub fn new(cfg: GameConfig, encoder: StimulusEncoder, speaker_vb: VarBuilder, listener_vb: VarBuilder) -> Result<Self> {
        cfg.validate()?;
        let (dtype, device) = (speaker_vb.dtype(), speaker_vb.device().clone());
        Ok(Self {
            speaker: Speaker::new(cfg.speaker(), speaker_vb)?,
            listener: Listener::new(cfg.vocab_size, cfg.hidden, cfg.descriptive, listener_vb)?,
            cfg,
            encoder,
            dtype,
            device,
        })
    }

    pub fn config(&self) -> &GameConfig {
        &self.cfg
    }

    pub fn encoder(&self) -> &StimulusEncoder {
        &self.encoder
    }

    pub fn speaker(&self) -> &Speaker {
        &self.speaker
    }

    pub fn listener(&self) -> &Listener {
        &self.listener
    }

    pub fn features(&self, inputs: &[Vec<f32>], train: bool) -> Result<Tensor> {
        self.encoder.features(inputs, train, self.dtype, &self.device)
    }

    /// Play one batch. With `rng` the speaker samples through the STGS
    /// channel; without it the speaker decodes greedily.
    pub fn play<R: Rng>(&self, batch: &StimulusBatch, rng: Option<&mut R>, train: bool) -> Result<GameOutput> {
        let b = batch.len();
        let n = self.cfg.candidates();
        if batch.listener_inputs.iter().any(|c| c.len() != n) {
            return Err(EtherError::shape(format!("{n} candidates per game"), batch.listener_inputs.len()));
        }
        let mut all: Vec<Vec<f32>> = batch.speaker_inputs.clone();
        all.extend(batch.listener_inputs.iter().flatten().cloned());
        let feats = self.features(&all, train)?;
        let speaker_feats = feats.narrow(0, 0, b)?;
        let candidate_feats = feats.narrow(0, b, b * n)?.reshape((b, n, FEATURE_DIM))?;
        let decoding = match rng {
            Some(r) => Decoding::Stgs(r),
            None => Decoding::Greedy,
        };
        let out = self.speaker.forward(&speaker_feats, decoding)?;
        let logits = self.listener.prefix_logits(&out.symbols, &out.mask, &candidate_feats)?;
        let lazy = lazy_loss(&out.distributions, &out.mask, self.cfg.beta0)?;
        let impatient = impatient_loss(&logits, &out.mask, &batch.targets, self.cfg.margin)?;
        let total = (&lazy + &impatient)?;
        let last = logits.dim(1)? - 1;
        let choice: Vec<u32> = logits.narrow(1, last, 1)?.squeeze(1)?.argmax(D::Minus1)?.to_vec1()?;
        let correct = choice.iter().zip(&batch.targets).filter(|(c, t)| **c as usize == **t).count();
        let lengths = out.lengths();
        Ok(GameOutput {
            lazy,
            impatient,
            total,
            accuracy: correct as f64 / b as f64,
            mean_length: lengths.iter().sum::<usize>() as f64 / b as f64,
            messages: out.tokens,
        })
    }

    /// Greedy messages for a set of stimuli (evaluation mode).
    pub fn describe(&self, inputs: &[Vec<f32>]) -> Result<Vec<Vec<TokenId>>> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        self.speaker.greedy(&self.features(inputs, false)?)
    }

    /// Listener score of each stimulus against its goal read as a message,
    /// minus the no-target logit. Positive means "the goal holds".
    pub fn predicate_margins(&self, inputs: &[Vec<f32>], goals: &[&Goal]) -> Result<Vec<f64>> {
        if inputs.len() != goals.len() {
            return Err(EtherError::shape(format!("{} goals", inputs.len()), goals.len()));
        }
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let b = inputs.len();
        let messages: Vec<Vec<TokenId>> = goals.iter().map(|g| g.with_eos()).collect();
        let (sym, mask) = one_hot_messages(&messages, self.cfg.vocab_size, self.dtype, &self.device)?;
        let feats = self.features(inputs, false)?.reshape((b, 1, FEATURE_DIM))?;
        let logits = self.listener.prefix_logits(&sym, &mask, &feats)?;
        let last = logits.dim(1)? - 1;
        let z: Vec<f64> = logits.narrow(1, last, 1)?.narrow(2, 0, 1)?.flatten_all()?.to_dtype(DType::F64)?.to_vec1()?;
        let no_target = self.listener.no_target_logit()?;
        Ok(z.into_iter().map(|v| v - no_target).collect())
    }

    /// Greedy-speaker accuracy over games drawn from `pool`.
    pub fn evaluate<S: Stimulus>(&self, pool: &[S], games: usize, rng: &mut impl Rng) -> Result<f64> {
        let mut correct = 0.0;
        let mut played = 0usize;
        while played < games {
            let size = (games - played).min(self.cfg.batch_size.max(1));
            let batch = sample_games(pool, size, &self.cfg, self.encoder.image_layout(), rng)?;
            let out = self.play::<rand::rngs::StdRng>(&batch, None, false)?;
            correct += out.accuracy * size as f64;
            played += size;
        }
        Ok(correct / games as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GameStepReport {
    pub lazy: f64,
    pub impatient: f64,
    pub total: f64,
    pub extra: f64,
    pub accuracy: f64,
    pub mean_length: f64,
    pub speaker_grad_norm: f64,
}

/// Owns the optimizer over every parameter the game trains.
pub struct GameLearner {
    game: RefGame,
    optimizer: AdamW,
    speaker_vars: Vec<Var>,
}

impl GameLearner {
    /// `trainable` must include the speaker, listener and encoder variables
    /// (and any auxiliary variables an extra loss touches); `speaker_vars` is
    /// the subset used for the gradient-norm report.
    pub fn new(game: RefGame, trainable: Vec<Var>, speaker_vars: Vec<Var>) -> Result<Self> {
        let optimizer = AdamW::new(
            trainable,
            ParamsAdamW {
                lr: game.cfg.learning_rate,
                weight_decay: 0.0,
                ..Default::default()
            },
        )?;
        Ok(Self {
            game,
            optimizer,
            speaker_vars,
        })
    }

    pub fn game(&self) -> &RefGame {
        &self.game
    }

    /// One optimizer step on the speaker's teacher-forced NLL of `goals`
    /// (each read with its trailing EoS). Returns the loss before the step.
    pub fn supervised_step(&mut self, inputs: &[Vec<f32>], goals: &[&Goal]) -> Result<f64> {
        if inputs.is_empty() || inputs.len() != goals.len() {
            return Err(EtherError::shape(format!("{} goals (non-empty)", inputs.len()), goals.len()));
        }
        let feats = self.game.features(inputs, true)?;
        let targets: Vec<Vec<TokenId>> = goals.iter().map(|g| g.with_eos()).collect();
        let loss = self.game.speaker.teacher_forced_nll(&feats, &targets)?;
        let value = scalar(&loss)?;
        if !value.is_finite() {
            return Err(EtherError::NonFinite("speaker supervised loss".into()));
        }
        self.optimizer.backward_step(&loss)?;
        Ok(value)
    }

    /// One optimizer step on `lazy + impatient (+ extra)`.
    pub fn play_game_step<R: Rng>(
        &mut self,
        batch: &StimulusBatch,
        rng: &mut R,
        extra: impl FnOnce(&RefGame) -> Result<Option<Tensor>>,
    ) -> Result<GameStepReport> {
        let out = self.game.play(batch, Some(rng), true)?;
        let extra = extra(&self.game)?;
        let objective = match &extra {
            Some(e) => (&out.total + e)?,
            None => out.total.clone(),
        };
        let total = scalar(&objective)?;
        if !total.is_finite() {
            return Err(EtherError::NonFinite(format!(
                "referential game loss (lazy {}, impatient {})",
                scalar(&out.lazy)?,
                scalar(&out.impatient)?
            )));
        }
        let grads = objective.backward()?;
        let mut norm = 0.0;
        for v in &self.speaker_vars {
            if let Some(g) = grads.get(v.as_tensor()) {
                norm += scalar(&g.sqr()?.sum_all()?)?;
            }
        }
        self.optimizer.step(&grads)?;
        Ok(GameStepReport {
            lazy: scalar(&out.lazy)?,
            impatient: scalar(&out.impatient)?,
            total,
            extra: match &extra {
                Some(e) => scalar(e)?,
                None => 0.0,
            },
            accuracy: out.accuracy,
            mean_length: out.mean_length,
            speaker_grad_norm: norm.sqrt(),
        })
    }
}

/// `values^attributes` one-hot attribute vectors, each `attributes·values` wide.
pub fn symbolic_stimuli(attributes: usize, values: usize) -> Vec<SymbolicStimulus> {
    let count = values.pow(attributes as u32);
    (0..count)
        .map(|mut code| {
            let mut v = vec![0f32; attributes * values];
            for a in 0..attributes {
                v[a * values + code % values] = 1.0;
                code /= values;
            }
            SymbolicStimulus(v)
        })
        .collect()
}
