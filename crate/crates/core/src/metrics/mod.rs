//! Evaluation: success ratio, alignment accuracies, semantic co-occurrence
//! histograms and topographic similarity.

mod alignment;
mod cooccurrence;
mod topsim;

pub use alignment::{alignment_report, speaker_alignment, AlignmentReport, AlignmentSample};
pub use cooccurrence::{co_occurrence_histogram, histogram_from_views, CoOccurrence};
pub use topsim::{hamming, levenshtein, spearman, topographic_similarity};

use crate::error::{EtherError, Result};
use crate::gridworld::{expert_action, Action, EnvConfig, GridWorld, Observation, OutcomeStatus};
use crate::seeding::derive_indexed;
use crate::vocab::Vocabulary;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub const EVAL_ENVS: usize = 256;

/// A batched policy over a set of environments evaluated in lockstep.
pub trait Policy {
    /// Start `n` fresh episodes.
    fn begin(&mut self, n: usize) -> Result<()>;

    /// Actions for the still-running environments `ids`.
    fn act(&mut self, ids: &[usize], envs: &[&GridWorld], observations: &[&Observation]) -> Result<Vec<Action>>;
}

/// The scripted expert.
#[derive(Debug, Default, Clone, Copy)]
pub struct ExpertPolicy;

impl Policy for ExpertPolicy {
    fn begin(&mut self, _n: usize) -> Result<()> {
        Ok(())
    }

    fn act(&mut self, _ids: &[usize], envs: &[&GridWorld], _obs: &[&Observation]) -> Result<Vec<Action>> {
        envs.iter().map(|e| expert_action(e.state(), &e.instruction())).collect()
    }
}

/// Uniform random actions from a seeded stream.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    rng: StdRng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: StdRng::seed_from_u64(seed),
        }
    }
}

impl Policy for RandomPolicy {
    fn begin(&mut self, _n: usize) -> Result<()> {
        Ok(())
    }

    fn act(&mut self, ids: &[usize], _envs: &[&GridWorld], _obs: &[&Observation]) -> Result<Vec<Action>> {
        Ok(ids.iter().map(|_| Action::ALL[self.rng.random_range(0..Action::COUNT)]).collect())
    }
}

/// Run one episode per environment seed `derive_indexed(seed, i)` in
/// lockstep and return the outcome statuses.
pub fn run_episodes(policy: &mut dyn Policy, env_cfg: &EnvConfig, n_envs: usize, seed: u64) -> Result<Vec<OutcomeStatus>> {
    let mut envs = Vec::with_capacity(n_envs);
    let mut observations = Vec::with_capacity(n_envs);
    for i in 0..n_envs {
        let mut env = GridWorld::new(env_cfg.clone(), Vocabulary::default())?;
        let (obs, _) = env.reset(derive_indexed(seed, i as u64))?;
        envs.push(env);
        observations.push(obs);
    }
    policy.begin(n_envs)?;
    let mut status = vec![None; n_envs];
    loop {
        let ids: Vec<usize> = (0..n_envs).filter(|&i| status[i].is_none()).collect();
        if ids.is_empty() {
            break;
        }
        let actions = {
            let env_refs: Vec<&GridWorld> = ids.iter().map(|&i| &envs[i]).collect();
            let obs_refs: Vec<&Observation> = ids.iter().map(|&i| &observations[i]).collect();
            policy.act(&ids, &env_refs, &obs_refs)?
        };
        if actions.len() != ids.len() {
            return Err(EtherError::shape(format!("{} actions", ids.len()), actions.len()));
        }
        for (&i, a) in ids.iter().zip(actions) {
            let step = envs[i].step(a)?;
            observations[i] = step.observation;
            if let Some(outcome) = step.outcome {
                status[i] = Some(outcome.status);
            }
        }
    }
    Ok(status.into_iter().map(|s| s.expect("every episode terminates")).collect())
}

/// Percentage of `n_envs` seeded episodes that end in success.
pub fn success_ratio(policy: &mut dyn Policy, env_cfg: &EnvConfig, n_envs: usize, seed: u64) -> Result<f64> {
    if n_envs == 0 {
        return Err(EtherError::Usage("success ratio over zero environments".into()));
    }
    let outcomes = run_episodes(policy, env_cfg, n_envs, seed)?;
    let wins = outcomes.iter().filter(|&&s| s == OutcomeStatus::Success).count();
    Ok(100.0 * wins as f64 / n_envs as f64)
}
