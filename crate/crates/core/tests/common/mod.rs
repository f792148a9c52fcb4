#![allow(dead_code)]

use ether_core::runner::RunConfig;
use ether_core::trainer::Variant;

/// A run small enough for CI: few actors, a narrow core, frequent updates.
pub fn small_config(variant: Variant, budget: u64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.variant = variant;
    cfg.env.room_size = 6;
    cfg.env.n_distractors = 2;
    cfg.replay.capacity = 2_000;
    cfg.replay.batch_size = 4;
    cfg.trainer.n_actors = 4;
    cfg.trainer.observation_budget = budget;
    cfg.trainer.learn_every = 16;
    cfg.trainer.learning_starts = 64;
    cfg.trainer.network.core_size = 32;
    cfg.trainer.network.goal_hidden = 32;
    cfg.game.hidden = 32;
    cfg.game.batch_size = 8;
    cfg.grounding.batch_size = 8;
    cfg.hindsight.gate_games = 32;
    cfg.hindsight.gate.n_min = 4;
    cfg.hindsight.generator_batch = 8;
    cfg.eval.interval = budget;
    cfg.eval.n_envs = 8;
    cfg.eval.alignment_samples = 32;
    cfg
}
