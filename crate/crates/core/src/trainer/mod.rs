//! Recurrent prioritized-replay DQN with hindsight relabelling: acting,
//! n-step double-Q learning, and the per-episode orchestration of every
//! algorithm variant.

mod actor;
mod learner;
mod network;
mod run;
mod targets;

pub use actor::{act_batch, actor_epsilon, epsilon_greedy, Actor, ActorStep, GreedyQPolicy};
pub use learner::{clip_gradients, BatchLoss, Learner, UpdateReport, AGENT_PREFIXES};
pub use network::{argmax, q_rows, QNetConfig, QNetwork, SequenceInput, TRUNK_WIDTHS};
pub use run::{run_training, MemorySink, Trainer, TrainingSink, TrainingSummary};
pub use targets::n_step_targets;

use crate::error::{EtherError, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// How actors are scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorMode {
    /// All actors stepped round-robin in the calling thread, batched.
    Sync,
    /// One thread per actor, stepped in lockstep rounds.
    Threaded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub n_actors: usize,
    /// Environment steps between actor parameter refreshes.
    pub actor_update_interval: usize,
    pub n_step: usize,
    pub gamma: f64,
    pub learning_rate: f64,
    pub adam_eps: f64,
    pub target_update_interval: u64,
    /// `0` or `10`.
    pub burn_in: usize,
    /// Segments that open an episode start from the true zero state and
    /// need no burn-in.
    pub burn_in_from_episode_start: bool,
    pub observation_budget: u64,
    /// Global gradient-norm clip; `0` disables it.
    pub grad_clip_norm: f64,
    pub epsilon: f64,
    pub epsilon_alpha: f64,
    /// Environment steps (all actors) per learner update.
    pub learn_every: usize,
    /// Replay observations required before the first update.
    pub learning_starts: usize,
    pub mode: ActorMode,
    pub network: QNetConfig,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            n_actors: 32,
            actor_update_interval: 1,
            n_step: 3,
            gamma: 0.98,
            learning_rate: 6.25e-5,
            adam_eps: 1e-12,
            target_update_interval: 2500,
            burn_in: crate::replay::BURN_IN,
            burn_in_from_episode_start: true,
            observation_budget: 200_000,
            grad_clip_norm: 40.0,
            epsilon: 0.4,
            epsilon_alpha: 7.0,
            learn_every: 32,
            learning_starts: 2000,
            mode: ActorMode::Sync,
            network: QNetConfig::default(),
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(EtherError::Config(format!("trainer: {m}")));
        if self.n_actors == 0 || self.actor_update_interval == 0 || self.n_step == 0 || self.learn_every == 0 {
            return bad("n_actors, actor_update_interval, n_step and learn_every must be positive");
        }
        if self.burn_in != 0 && self.burn_in != crate::replay::BURN_IN {
            return bad("burn_in must be 0 or 10");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(self.learning_rate > 0.0) || !(self.adam_eps > 0.0) || self.target_update_interval == 0 {
            return bad("learning_rate, adam_eps and target_update_interval must be positive");
        }
        if self.observation_budget == 0 {
            return bad("observation_budget must be positive");
        }
        if !(self.grad_clip_norm >= 0.0) {
            return bad("grad_clip_norm must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.epsilon) || !(self.epsilon_alpha >= 0.0) {
            return bad("epsilon must lie in [0, 1] and epsilon_alpha be non-negative");
        }
        self.network.validate()
    }
}

/// The algorithm being trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    R2d2,
    /// Learned instruction generator with the derived predicate.
    HigherPlus,
    /// `HigherPlus` plus `n` contrastive negatives per success.
    HigherPp(usize),
    /// Referential-game speaker and listener as mapping and predicate.
    Ether,
    /// `Ether` plus the semantic grounding loss.
    EtherPlus,
}

impl Variant {
    pub fn is_higher(self) -> bool {
        matches!(self, Self::HigherPlus | Self::HigherPp(_))
    }

    pub fn is_ether(self) -> bool {
        matches!(self, Self::Ether | Self::EtherPlus)
    }

    pub fn negatives(self) -> usize {
        match self {
            Self::HigherPp(n) => n,
            _ => 0,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::R2d2 => f.write_str("r2d2"),
            Self::HigherPlus => f.write_str("higher_plus"),
            Self::HigherPp(n) => write!(f, "higher_pp({n})"),
            Self::Ether => f.write_str("ether"),
            Self::EtherPlus => f.write_str("ether_plus"),
        }
    }
}

impl FromStr for Variant {
    type Err = EtherError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let unknown = || EtherError::Config(format!("unknown variant `{s}` (r2d2, higher_plus, higher_pp(n), ether, ether_plus)"));
        match s {
            "r2d2" => Ok(Self::R2d2),
            "higher_plus" => Ok(Self::HigherPlus),
            "ether" => Ok(Self::Ether),
            "ether_plus" => Ok(Self::EtherPlus),
            _ => {
                let n = s
                    .strip_prefix("higher_pp(")
                    .and_then(|r| r.strip_suffix(')'))
                    .ok_or_else(unknown)?
                    .trim()
                    .parse::<usize>()
                    .map_err(|_| unknown())?;
                if n == 0 {
                    return Err(EtherError::Config("higher_pp needs at least one negative".into()));
                }
                Ok(Self::HigherPp(n))
            }
        }
    }
}

impl Serialize for Variant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Variant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Relabelling and dataset settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HindsightConfig {
    /// Duplicates per failed episode for the referential-game variants;
    /// `0` selects the final strategy.
    pub k_her: usize,
    pub val_fraction: f64,
    /// Per-split cap of the referential-game stimulus dataset.
    pub rg_capacity: usize,
    /// Episodes between gate re-evaluations.
    pub gate_interval: usize,
    /// Games played to score the referential game on its validation split.
    pub gate_games: usize,
    pub gate: crate::hindsight::GateConfig,
    pub generator_learning_rate: f64,
    pub generator_batch: usize,
}

impl Default for HindsightConfig {
    fn default() -> Self {
        Self {
            k_her: 4,
            val_fraction: 0.1,
            rg_capacity: 4096,
            gate_interval: 10,
            gate_games: 128,
            gate: Default::default(),
            generator_learning_rate: 1e-3,
            generator_batch: 32,
        }
    }
}

impl HindsightConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(EtherError::Config("hindsight: val_fraction must lie in [0, 1)".into()));
        }
        if self.rg_capacity == 0 || self.gate_interval == 0 || self.gate_games == 0 || self.generator_batch == 0 {
            return Err(EtherError::Config(
                "hindsight: rg_capacity, gate_interval, gate_games and generator_batch must be positive".into(),
            ));
        }
        if !(self.generator_learning_rate > 0.0) {
            return Err(EtherError::Config("hindsight: generator_learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Periodic greedy evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Environment steps between evaluations (and checkpoints).
    pub interval: u64,
    pub n_envs: usize,
    /// RG training observations scored for alignment per evaluation.
    pub alignment_samples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            interval: 10_000,
            n_envs: crate::metrics::EVAL_ENVS,
            alignment_samples: 256,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.interval == 0 || self.n_envs == 0 {
            return Err(EtherError::Config("eval: interval and n_envs must be positive".into()));
        }
        Ok(())
    }
}

/// Names of the parameter groups a run creates.
pub const STORE_PREFIXES: [&str; 6] = ["encoder", "agent", "speaker", "listener", "semantic", "instr"];
