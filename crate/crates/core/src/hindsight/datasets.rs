use crate::replay::Trajectory;
use crate::seeding::{mix64, unit_from_hash};
use crate::vocab::Goal;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

const SPLIT_SALT: u64 = 0x5EED_0F_5B11;

/// Stable split of an episode by its seed.
pub fn split_for(episode_seed: u64, val_fraction: f64) -> Split {
    if unit_from_hash(mix64(episode_seed ^ SPLIT_SALT)) < val_fraction {
        Split::Val
    } else {
        Split::Train
    }
}

/// Successful `(final state, goal)` pairs plus contrastive negatives.
#[derive(Debug, Clone)]
pub struct SupervisedDataset<S> {
    pub train: Vec<(S, Goal)>,
    pub val: Vec<(S, Goal)>,
    pub negatives: Vec<(S, Goal)>,
    val_fraction: f64,
}

impl<S: Clone> SupervisedDataset<S> {
    pub fn new(val_fraction: f64) -> Self {
        Self {
            train: Vec::new(),
            val: Vec::new(),
            negatives: Vec::new(),
            val_fraction,
        }
    }

    /// Store the final state and goal of a successful trajectory.
    pub fn harvest(&mut self, traj: &Trajectory<S>) -> Option<Split> {
        if !traj.succeeded() {
            return None;
        }
        let split = split_for(traj.seed, self.val_fraction);
        let pair = (traj.final_state().clone(), traj.goal.clone());
        match split {
            Split::Train => self.train.push(pair),
            Split::Val => self.val.push(pair),
        }
        Some(split)
    }

    pub fn add_negatives(&mut self, pairs: impl IntoIterator<Item = (S, Goal)>) {
        self.negatives.extend(pairs);
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A referential-game stimulus with the goal of the episode it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct RgEntry<S> {
    pub stimulus: S,
    pub goal: Goal,
}

/// Stimuli from every step of every episode, each split capped FIFO.
#[derive(Debug, Clone)]
pub struct RgDataset<S> {
    pub train: VecDeque<RgEntry<S>>,
    pub val: VecDeque<RgEntry<S>>,
    capacity: usize,
    val_fraction: f64,
    harvested: usize,
}

impl<S: Clone> RgDataset<S> {
    pub fn new(capacity: usize, val_fraction: f64) -> Self {
        Self {
            train: VecDeque::new(),
            val: VecDeque::new(),
            capacity: capacity.max(1),
            val_fraction,
            harvested: 0,
        }
    }

    pub fn harvest(&mut self, traj: &Trajectory<S>) -> Split {
        let split = split_for(traj.seed, self.val_fraction);
        let target = match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
        };
        for s in &traj.states {
            target.push_back(RgEntry {
                stimulus: s.clone(),
                goal: traj.goal.clone(),
            });
            if target.len() > self.capacity {
                target.pop_front();
            }
        }
        self.harvested += traj.states.len();
        split
    }

    /// Stimuli ever harvested, including evicted ones.
    pub fn harvested(&self) -> usize {
        self.harvested
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GateConfig {
    pub theta_sup: f64,
    pub n_min: usize,
    pub theta_rg: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            theta_sup: 0.75,
            n_min: 32,
            theta_rg: 0.75,
        }
    }
}

impl GateConfig {
    /// Instruction-generator gate: exact-match accuracy and validation size.
    pub fn higher_open(&self, val_accuracy: Option<f64>, val_size: usize) -> bool {
        val_size > 0 && val_size >= self.n_min && val_accuracy.is_some_and(|a| a >= self.theta_sup)
    }

    /// Referential-game gate: validation accuracy on a non-empty split.
    pub fn ether_open(&self, val_accuracy: Option<f64>, val_size: usize) -> bool {
        val_size > 0 && val_accuracy.is_some_and(|a| a >= self.theta_rg)
    }
}
