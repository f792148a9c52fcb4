use crate::error::{EtherError, Result};
use crate::vocab::Goal;
use std::sync::Arc;

/// Steps per replayed sequence.
pub const UNROLL: usize = 20;
/// Leading steps that only warm the recurrent state.
pub const BURN_IN: usize = 10;
/// Steps shared by consecutive segments; also the stride between them.
pub const OVERLAP: usize = 10;

/// Recurrent core state `(h, c)` as plain vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState {
    pub h: Vec<f32>,
    pub c: Vec<f32>,
}

impl RecurrentState {
    pub fn zeros(size: usize) -> Self {
        Self {
            h: vec![0.0; size],
            c: vec![0.0; size],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.h.iter().chain(&self.c).all(|&v| v == 0.0)
    }
}

/// One episode: `T + 1` states, `T` actions and rewards, and optionally the
/// actor's recurrent state before each step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<S> {
    pub goal: Goal,
    pub states: Vec<S>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f32>,
    /// Whether the final transition ends the episode.
    pub terminal: bool,
    pub recurrent: Vec<Arc<RecurrentState>>,
    /// Seed of the environment episode (stable dataset splits).
    pub seed: u64,
}

impl<S> Trajectory<S> {
    pub fn new(goal: Goal, states: Vec<S>, actions: Vec<usize>, rewards: Vec<f32>, terminal: bool) -> Result<Self> {
        if actions.is_empty() {
            return Err(EtherError::Usage("empty trajectory".into()));
        }
        if states.len() != actions.len() + 1 || rewards.len() != actions.len() {
            return Err(EtherError::shape(
                format!("{} states and {} rewards", actions.len() + 1, actions.len()),
                (states.len(), rewards.len()),
            ));
        }
        Ok(Self {
            goal,
            states,
            actions,
            rewards,
            terminal,
            recurrent: Vec::new(),
            seed: 0,
        })
    }

    pub fn with_recurrent(mut self, recurrent: Vec<Arc<RecurrentState>>) -> Result<Self> {
        if recurrent.len() != self.actions.len() {
            return Err(EtherError::shape(format!("{} recurrent states", self.actions.len()), recurrent.len()));
        }
        self.recurrent = recurrent;
        Ok(self)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn done(&self, t: usize) -> bool {
        self.terminal && t + 1 == self.len()
    }

    /// A positive behavioural reward occurred.
    pub fn succeeded(&self) -> bool {
        self.rewards.iter().any(|&r| r > 0.0)
    }

    pub fn final_state(&self) -> &S {
        self.states.last().expect("non-empty")
    }
}

/// A window of at most [`UNROLL`] transitions of one episode. Positions past
/// `valid_len` are padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment<S> {
    pub goal: Goal,
    /// Episode step of position 0.
    pub start: usize,
    /// `valid_len + 1` states.
    pub states: Vec<S>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f32>,
    pub dones: Vec<bool>,
    pub valid_len: usize,
    /// Action and reward preceding position 0, if any.
    pub prev_action: Option<usize>,
    pub prev_reward: f32,
    pub initial_state: Option<Arc<RecurrentState>>,
    /// Observations this segment accounts for in the capacity budget.
    pub owned_observations: usize,
}

impl<S> Segment<S> {
    pub fn valid_mask(&self) -> [bool; UNROLL] {
        std::array::from_fn(|i| i < self.valid_len)
    }

    pub fn at_episode_start(&self) -> bool {
        self.start == 0
    }
}

/// Cut an episode into segments at offsets `0, 10, 20, …` below its length.
pub fn segment_episode<S: Clone>(episode: &Trajectory<S>) -> Result<Vec<Segment<S>>> {
    let t_len = episode.len();
    if t_len == 0 {
        return Err(EtherError::Usage("empty trajectory".into()));
    }
    Ok((0..t_len)
        .step_by(OVERLAP)
        .map(|start| {
            let valid = UNROLL.min(t_len - start);
            Segment {
                goal: episode.goal.clone(),
                start,
                states: episode.states[start..=start + valid].to_vec(),
                actions: episode.actions[start..start + valid].to_vec(),
                rewards: episode.rewards[start..start + valid].to_vec(),
                dones: (start..start + valid).map(|t| episode.done(t)).collect(),
                valid_len: valid,
                prev_action: start.checked_sub(1).map(|p| episode.actions[p]),
                prev_reward: start.checked_sub(1).map_or(0.0, |p| episode.rewards[p]),
                initial_state: episode.recurrent.get(start).cloned(),
                owned_observations: OVERLAP.min(t_len - start),
            }
        })
        .collect())
}
