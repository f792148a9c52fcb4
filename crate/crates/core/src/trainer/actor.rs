use crate::error::{EtherError, Result};
use crate::gridworld::{Action, EnvConfig, GridWorld, Observation};
use crate::metrics::Policy;
use crate::nn::encoder::INPUT_SIZE;
use crate::nn::params::to_device_tensor;
use crate::replay::{RecurrentState, Trajectory};
use crate::seeding::{derive_indexed, derive_seed};
use crate::trainer::network::{argmax, q_rows, QNetwork};
use crate::trainer::TrainerConfig;
use crate::vocab::{Goal, Vocabulary};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use std::sync::Arc;

/// `ε_i = ε^(1 + i·α/(N−1))`; a lone actor uses `ε`.
pub fn actor_epsilon(i: usize, n: usize, epsilon: f64, alpha: f64) -> f64 {
    if n <= 1 {
        return epsilon;
    }
    epsilon.powf(1.0 + i as f64 * alpha / (n - 1) as f64)
}

/// ε-greedy choice. Always draws the coin first, so the stream consumed per
/// decision does not depend on the Q-values.
pub fn epsilon_greedy(q: &[f32], epsilon: f64, rng: &mut impl Rng) -> usize {
    if rng.random::<f64>() < epsilon {
        rng.random_range(0..q.len())
    } else {
        argmax(q)
    }
}

/// One recurrent step for a batch of observations.
pub fn act_batch(
    net: &QNetwork,
    observations: &[&Observation],
    goals: &[&Goal],
    prev_actions: &[Option<usize>],
    prev_rewards: &[f32],
    states: &[Option<RecurrentState>],
) -> Result<(Vec<Vec<f32>>, Vec<RecurrentState>)> {
    let n = observations.len();
    if goals.len() != n || states.len() != n {
        return Err(EtherError::shape(format!("{n} goals and states"), (goals.len(), states.len())));
    }
    let mut flat = Vec::with_capacity(n * Observation::CHANNELS * INPUT_SIZE * INPUT_SIZE);
    for o in observations {
        flat.extend(o.pixels()?);
    }
    let pixels = to_device_tensor(flat, &[n, Observation::CHANNELS, INPUT_SIZE, INPUT_SIZE], net.dtype(), net.device())?;
    let torso = net.torso(&pixels, &net.goal_embedding(goals)?)?;
    let x = net.core_input(&torso, prev_actions, prev_rewards)?;
    let (q, next) = net.step(&x, &net.state_tensor(states)?)?;
    Ok((q_rows(&q)?, net.state_rows(&next)?))
}

/// Result of one actor step: the finished episode, if this step ended one.
#[derive(Debug)]
pub struct ActorStep {
    pub finished: Option<Trajectory<Observation>>,
}

/// An ε-greedy actor with its own environment and random stream.
pub struct Actor {
    index: usize,
    epsilon: f64,
    env: GridWorld,
    rng: StdRng,
    episode_base: u64,
    episodes: u64,
    episode_seed: u64,
    obs: Observation,
    goal: Goal,
    state: Option<RecurrentState>,
    prev_action: Option<usize>,
    prev_reward: f32,
    zero: Arc<RecurrentState>,
    states: Vec<Observation>,
    actions: Vec<usize>,
    rewards: Vec<f32>,
    recurrent: Vec<Arc<RecurrentState>>,
}

impl Actor {
    /// Episode `k` of actor `i` uses seed `derive_indexed(derive_indexed(env_base, i), k)`.
    pub fn new(index: usize, env_cfg: &EnvConfig, cfg: &TrainerConfig, seed: u64) -> Result<Self> {
        let env_base = derive_indexed(derive_seed(seed, "env"), env_cfg.seed);
        let mut env = GridWorld::new(env_cfg.clone(), Vocabulary::default())?;
        let episode_base = derive_indexed(env_base, index as u64);
        let episode_seed = derive_indexed(episode_base, 0);
        let (obs, goal) = env.reset(episode_seed)?;
        Ok(Self {
            index,
            epsilon: actor_epsilon(index, cfg.n_actors, cfg.epsilon, cfg.epsilon_alpha),
            env,
            rng: StdRng::seed_from_u64(derive_indexed(derive_seed(seed, "actor"), index as u64)),
            episode_base,
            episodes: 0,
            episode_seed,
            states: vec![obs.clone()],
            obs,
            goal,
            state: None,
            prev_action: None,
            prev_reward: 0.0,
            zero: Arc::new(RecurrentState::zeros(cfg.network.core_size)),
            actions: Vec::new(),
            rewards: Vec::new(),
            recurrent: Vec::new(),
        })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    pub fn observation(&self) -> &Observation {
        &self.obs
    }

    pub fn goal(&self) -> &Goal {
        &self.goal
    }

    pub fn prev_action(&self) -> Option<usize> {
        self.prev_action
    }

    pub fn prev_reward(&self) -> f32 {
        self.prev_reward
    }

    pub fn recurrent_state(&self) -> Option<&RecurrentState> {
        self.state.as_ref()
    }

    /// Steps taken in the current, unfinished episode.
    pub fn pending_steps(&self) -> usize {
        self.actions.len()
    }

    /// Single-actor step against `net`.
    pub fn act(&mut self, net: &QNetwork) -> Result<ActorStep> {
        let (q, next) = act_batch(
            net,
            &[&self.obs],
            &[&self.goal],
            &[self.prev_action],
            &[self.prev_reward],
            std::slice::from_ref(&self.state),
        )?;
        self.advance(&q[0], next.into_iter().next().expect("one row"))
    }

    /// Choose an action from `q`, step the environment and adopt `next` as
    /// the recurrent state.
    pub fn advance(&mut self, q: &[f32], next: RecurrentState) -> Result<ActorStep> {
        let a = epsilon_greedy(q, self.epsilon, &mut self.rng);
        let before = match self.state.take() {
            Some(s) => Arc::new(s),
            None => self.zero.clone(),
        };
        let step = self.env.step(Action::from_index(a)?)?;
        self.recurrent.push(before);
        self.actions.push(a);
        self.rewards.push(step.reward);
        self.states.push(step.observation.clone());
        self.obs = step.observation;
        self.state = Some(next);
        self.prev_action = Some(a);
        self.prev_reward = step.reward;
        if !step.done {
            return Ok(ActorStep { finished: None });
        }
        let traj = Trajectory::new(
            self.goal.clone(),
            std::mem::take(&mut self.states),
            std::mem::take(&mut self.actions),
            std::mem::take(&mut self.rewards),
            true,
        )?
        .with_recurrent(std::mem::take(&mut self.recurrent))?
        .with_seed(self.episode_seed);
        self.episodes += 1;
        self.episode_seed = derive_indexed(self.episode_base, self.episodes);
        let (obs, goal) = self.env.reset(self.episode_seed)?;
        self.states.push(obs.clone());
        self.obs = obs;
        self.goal = goal;
        self.state = None;
        self.prev_action = None;
        self.prev_reward = 0.0;
        Ok(ActorStep { finished: Some(traj) })
    }
}

/// Greedy (`ε = 0`) recurrent policy for evaluation. Rewards are only paid
/// on the terminal step, so the previous reward of a running episode is 0.
pub struct GreedyQPolicy<'a> {
    net: &'a QNetwork,
    states: Vec<Option<RecurrentState>>,
    prev: Vec<Option<usize>>,
}

impl<'a> GreedyQPolicy<'a> {
    pub fn new(net: &'a QNetwork) -> Self {
        Self {
            net,
            states: Vec::new(),
            prev: Vec::new(),
        }
    }
}

impl Policy for GreedyQPolicy<'_> {
    fn begin(&mut self, n: usize) -> Result<()> {
        self.states = vec![None; n];
        self.prev = vec![None; n];
        Ok(())
    }

    fn act(&mut self, ids: &[usize], envs: &[&GridWorld], observations: &[&Observation]) -> Result<Vec<Action>> {
        let goals: Vec<Goal> = envs.iter().map(|e| e.goal()).collect();
        let goal_refs: Vec<&Goal> = goals.iter().collect();
        let prev: Vec<Option<usize>> = ids.iter().map(|&i| self.prev[i]).collect();
        let states: Vec<Option<RecurrentState>> = ids.iter().map(|&i| self.states[i].take()).collect();
        let (q, next) = act_batch(self.net, observations, &goal_refs, &prev, &vec![0.0; ids.len()], &states)?;
        let mut out = Vec::with_capacity(ids.len());
        for ((&i, row), s) in ids.iter().zip(&q).zip(next) {
            let a = argmax(row);
            self.states[i] = Some(s);
            self.prev[i] = Some(a);
            out.push(Action::from_index(a)?);
        }
        Ok(out)
    }
}
