//! Hindsight relabelling with pluggable mapping and predicate functions.

mod datasets;
mod learned;

pub use datasets::{split_for, GateConfig, RgDataset, RgEntry, Split, SupervisedDataset};
pub use learned::{InstructionGenerator, ListenerPredicate, SpeakerMapping};

use crate::error::{EtherError, Result};
use crate::replay::Trajectory;
use crate::vocab::Goal;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

/// `m: S → G`.
pub trait MappingFunction<S> {
    fn map_batch(&self, states: &[&S]) -> Result<Vec<Goal>>;

    fn map(&self, state: &S) -> Result<Goal> {
        Ok(self.map_batch(&[state])?.remove(0))
    }
}

/// `f: S × G → {0, 1}`.
pub trait PredicateFunction<S> {
    fn evaluate_batch(&self, states: &[&S], goals: &[&Goal]) -> Result<Vec<bool>>;

    fn evaluate(&self, state: &S, goal: &Goal) -> Result<bool> {
        Ok(self.evaluate_batch(&[state], &[goal])?[0])
    }
}

impl<S, M: MappingFunction<S> + ?Sized> MappingFunction<S> for &M {
    fn map_batch(&self, states: &[&S]) -> Result<Vec<Goal>> {
        (**self).map_batch(states)
    }
}

impl<S, P: PredicateFunction<S> + ?Sized> PredicateFunction<S> for &P {
    fn evaluate_batch(&self, states: &[&S], goals: &[&Goal]) -> Result<Vec<bool>> {
        (**self).evaluate_batch(states, goals)
    }
}

/// Mapping backed by a plain function.
pub struct FnMapping<F>(pub F);

impl<S, F: Fn(&S) -> Goal> MappingFunction<S> for FnMapping<F> {
    fn map_batch(&self, states: &[&S]) -> Result<Vec<Goal>> {
        Ok(states.iter().map(|s| (self.0)(s)).collect())
    }
}

/// Predicate backed by a plain function.
pub struct FnPredicate<F>(pub F);

impl<S, F: Fn(&S, &Goal) -> bool> PredicateFunction<S> for FnPredicate<F> {
    fn evaluate_batch(&self, states: &[&S], goals: &[&Goal]) -> Result<Vec<bool>> {
        Ok(states.iter().zip(goals).map(|(s, g)| (self.0)(s, g)).collect())
    }
}

/// `f(s, g) = [m(s) = g]`, token-exact after EoS truncation.
pub struct DerivedPredicate<M>(pub M);

pub fn derive_predicate<M>(mapping: M) -> DerivedPredicate<M> {
    DerivedPredicate(mapping)
}

impl<S, M: MappingFunction<S>> PredicateFunction<S> for DerivedPredicate<M> {
    fn evaluate_batch(&self, states: &[&S], goals: &[&Goal]) -> Result<Vec<bool>> {
        if states.len() != goals.len() {
            return Err(EtherError::shape(format!("{} goals", states.len()), goals.len()));
        }
        let mapped = self.0.map_batch(states)?;
        Ok(mapped.iter().zip(goals).map(|(m, g)| m == *g).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelabelStrategy {
    Final,
    Future { k: usize },
}

impl RelabelStrategy {
    /// `future` with `k = 0` is the final strategy.
    pub fn resolve(name: &str, k: usize) -> Result<Self> {
        match name {
            "final" => Ok(Self::Final),
            "future" if k == 0 => Ok(Self::Final),
            "future" => Ok(Self::Future { k }),
            other => Err(EtherError::Config(format!("unknown relabelling strategy `{other}`"))),
        }
    }
}

/// Build one duplicate of `traj` cut after `end` transitions, with goal `goal`
/// and rewards `f(s_{t+1}, goal)`.
fn duplicate<S: Clone, P: PredicateFunction<S> + ?Sized>(traj: &Trajectory<S>, end: usize, goal: Goal, f: &P) -> Result<Trajectory<S>> {
    let next: Vec<&S> = traj.states[1..=end].iter().collect();
    let goals = vec![&goal; end];
    let rewards: Vec<f32> = f.evaluate_batch(&next, &goals)?.into_iter().map(|r| if r { 1.0 } else { 0.0 }).collect();
    let mut dup = Trajectory::new(goal.clone(), traj.states[..=end].to_vec(), traj.actions[..end].to_vec(), rewards, true)?;
    if !traj.recurrent.is_empty() {
        dup = dup.with_recurrent(traj.recurrent[..end].to_vec())?;
    }
    Ok(dup.with_seed(traj.seed))
}

/// The `T_k` cut points drawn by the future strategy for `seed`.
pub fn future_cut_points(len: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..k).map(|_| rng.random_range(1..=len)).collect()
}

/// Relabelled duplicates of an unsuccessful trajectory; the original is only
/// read. Successful trajectories produce nothing.
pub fn relabel<S, M, P>(traj: &Trajectory<S>, m: &M, f: &P, strategy: RelabelStrategy, seed: u64) -> Result<Vec<Trajectory<S>>>
where
    S: Clone,
    M: MappingFunction<S> + ?Sized,
    P: PredicateFunction<S> + ?Sized,
{
    if traj.succeeded() {
        return Ok(Vec::new());
    }
    let t_len = traj.len();
    let cuts = match strategy {
        RelabelStrategy::Final => vec![t_len],
        RelabelStrategy::Future { k } => future_cut_points(t_len, k, seed),
    };
    if cuts.is_empty() {
        return Ok(Vec::new());
    }
    let cut_states: Vec<&S> = cuts.iter().map(|&c| &traj.states[c]).collect();
    let goals = m.map_batch(&cut_states)?;
    cuts.iter().zip(goals).map(|(&c, g)| duplicate(traj, c, g, f)).collect()
}

/// `(s_{T−i}, EoS)` for `i = 1..=min(n, T)` from a successful trajectory.
pub fn contrastive_negatives<S: Clone>(traj: &Trajectory<S>, n: usize) -> Result<Vec<(S, Goal)>> {
    if n < 1 {
        return Err(EtherError::Usage("contrastive negatives need n ≥ 1".into()));
    }
    if !traj.succeeded() {
        return Ok(Vec::new());
    }
    let t_len = traj.len();
    Ok((1..=n.min(t_len)).map(|i| (traj.states[t_len - i].clone(), Goal::eos())).collect())
}
