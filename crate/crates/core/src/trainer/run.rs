use crate::error::{EtherError, Result};
use crate::gridworld::Observation;
use crate::grounding::SemanticTable;
use crate::hindsight::{
    contrastive_negatives, derive_predicate, relabel, InstructionGenerator, ListenerPredicate, RelabelStrategy,
    RgDataset, SpeakerMapping, SupervisedDataset,
};
use crate::metrics::{speaker_alignment, success_ratio};
use crate::nn::encoder::VisualEncoder;
use crate::nn::params::ParameterStore;
use crate::refgame::{sample_games, GameLearner, RefGame, StimulusEncoder, Stimulus};
use crate::replay::{PrioritizedBuffer, Trajectory};
use crate::runner::RunConfig;
use crate::seeding::{derive_indexed, derive_seed};
use crate::trainer::actor::{act_batch, Actor, ActorStep, GreedyQPolicy};
use crate::trainer::learner::Learner;
use crate::trainer::network::QNetwork;
use crate::trainer::{ActorMode, Variant};
use crate::vocab::{Goal, Vocabulary};
use candle_core::DType;
use rand::rngs::StdRng;
use rand::{Rng, RngCore, SeedableRng};
use std::sync::mpsc;
use std::sync::Arc;

/// Receives metric rows and checkpoint requests from a training run.
pub trait TrainingSink {
    fn record(&mut self, step: u64, name: &str, value: f64) -> Result<()>;

    fn checkpoint(&mut self, step: u64, store: &ParameterStore) -> Result<()>;
}

/// Keeps everything in memory.
#[derive(Debug, Default, Clone)]
pub struct MemorySink {
    pub records: Vec<(u64, String, f64)>,
    pub checkpoints: Vec<u64>,
}

impl MemorySink {
    pub fn values(&self, name: &str) -> Vec<(u64, f64)> {
        self.records.iter().filter(|r| r.1 == name).map(|r| (r.0, r.2)).collect()
    }
}

impl TrainingSink for MemorySink {
    fn record(&mut self, step: u64, name: &str, value: f64) -> Result<()> {
        self.records.push((step, name.to_string(), value));
        Ok(())
    }

    fn checkpoint(&mut self, step: u64, _store: &ParameterStore) -> Result<()> {
        self.checkpoints.push(step);
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingSummary {
    pub env_steps: u64,
    pub episodes: u64,
    pub successes: u64,
    pub updates: u64,
    pub relabelled: u64,
    pub sup_train: usize,
    pub sup_val: usize,
    pub rg_stimuli: usize,
    pub rg_harvested: usize,
    pub higher_gate_ever_open: bool,
    pub ether_gate_ever_open: bool,
    pub rg_val_accuracy: Option<f64>,
    pub success_ratio: Option<f64>,
}

enum Hindsight {
    Inert,
    Higher {
        generator: Box<InstructionGenerator>,
        d_sup: SupervisedDataset<Observation>,
        gate_open: bool,
        val_accuracy: Option<f64>,
    },
    Ether {
        learner: Box<GameLearner>,
        semantic: Option<SemanticTable>,
        d_rg: RgDataset<Observation>,
        d_sup: SupervisedDataset<Observation>,
        gate_open: bool,
        val_accuracy: Option<f64>,
    },
}

#[derive(Default)]
struct Running {
    loss: f64,
    loss_n: usize,
    rg_accuracy: f64,
    rg_lazy: f64,
    rg_impatient: f64,
    rg_extra: f64,
    rg_length: f64,
    rg_n: usize,
    sup_loss: f64,
    sup_n: usize,
}

/// A training run in progress.
pub struct Trainer {
    variant: Variant,
    cfg: RunConfig,
    seed: u64,
    store: Arc<ParameterStore>,
    learner: Learner,
    replay: PrioritizedBuffer<Observation>,
    actors: Vec<Actor>,
    hindsight: Hindsight,
    rng_replay: StdRng,
    rng_rg: StdRng,
    rng_sup: StdRng,
    rng_ground: StdRng,
    rng_gate: StdRng,
    relabel_seed: u64,
    acting: Option<(u64, Arc<QNetwork>)>,
    rounds_since_refresh: usize,
    pending_learn: usize,
    next_eval: u64,
    last_eval: Option<u64>,
    running: Running,
    summary: TrainingSummary,
}

impl Trainer {
    pub fn new(variant: Variant, cfg: &RunConfig, seed: u64) -> Result<Self> {
        let mut cfg = cfg.clone();
        cfg.variant = variant;
        cfg.seed = seed;
        cfg.validate()?;
        let store = Arc::new(ParameterStore::with_seed(DType::F32, derive_seed(seed, "nets")));
        let learner = Learner::new(cfg.trainer, Observation::CHANNELS, store.clone())?;
        let vb = store.var_builder();
        let visual = || -> Result<StimulusEncoder> {
            Ok(StimulusEncoder::Visual(VisualEncoder::new(Observation::CHANNELS, vb.pp("encoder"))?))
        };
        let hindsight = if variant.is_higher() {
            let s = store.clone();
            let generator = InstructionGenerator::new(
                visual()?,
                cfg.game.speaker(),
                vb.pp("instr"),
                move || s.trainable(&["encoder", "instr"]),
                cfg.hindsight.generator_learning_rate,
            )?;
            Hindsight::Higher {
                generator: Box::new(generator),
                d_sup: SupervisedDataset::new(cfg.hindsight.val_fraction),
                gate_open: false,
                val_accuracy: None,
            }
        } else if variant.is_ether() {
            let game = RefGame::new(cfg.game, visual()?, vb.pp("speaker"), vb.pp("listener"))?;
            let semantic = if variant == Variant::EtherPlus && cfg.grounding.enabled {
                Some(SemanticTable::new(cfg.game.vocab_size, vb.pp("semantic"))?)
            } else {
                None
            };
            let trainable = store.trainable(&["encoder", "speaker", "listener", "semantic"]);
            let learner = GameLearner::new(game, trainable, store.trainable(&["speaker"]))?;
            Hindsight::Ether {
                learner: Box::new(learner),
                semantic,
                d_rg: RgDataset::new(cfg.hindsight.rg_capacity, cfg.hindsight.val_fraction),
                d_sup: SupervisedDataset::new(cfg.hindsight.val_fraction),
                gate_open: false,
                val_accuracy: None,
            }
        } else {
            Hindsight::Inert
        };
        let actors = (0..cfg.trainer.n_actors)
            .map(|i| Actor::new(i, &cfg.env, &cfg.trainer, seed))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            variant,
            replay: PrioritizedBuffer::new(cfg.replay)?,
            rng_replay: StdRng::seed_from_u64(derive_seed(seed, "replay")),
            rng_rg: StdRng::seed_from_u64(derive_seed(seed, "rg")),
            rng_sup: StdRng::seed_from_u64(derive_seed(seed, "supervised")),
            rng_ground: StdRng::seed_from_u64(derive_seed(seed, "grounding")),
            rng_gate: StdRng::seed_from_u64(derive_seed(seed, "gate")),
            relabel_seed: derive_seed(seed, "relabel"),
            next_eval: cfg.eval.interval,
            cfg,
            seed,
            store,
            learner,
            actors,
            hindsight,
            acting: None,
            rounds_since_refresh: 0,
            pending_learn: 0,
            last_eval: None,
            running: Running::default(),
            summary: TrainingSummary::default(),
        })
    }

    pub fn store(&self) -> &Arc<ParameterStore> {
        &self.store
    }

    pub fn learner(&self) -> &Learner {
        &self.learner
    }

    pub fn replay(&self) -> &PrioritizedBuffer<Observation> {
        &self.replay
    }

    pub fn summary(&self) -> &TrainingSummary {
        &self.summary
    }

    /// The referential game, for the variants that have one.
    pub fn game(&self) -> Option<&RefGame> {
        match &self.hindsight {
            Hindsight::Ether { learner, .. } => Some(learner.game()),
            _ => None,
        }
    }

    /// Run until the observation budget is spent.
    pub fn run(&mut self, sink: &mut dyn TrainingSink) -> Result<TrainingSummary> {
        let mut actors = std::mem::take(&mut self.actors);
        let out = match self.cfg.trainer.mode {
            ActorMode::Sync => self.run_loop(sink, &mut |k, net| sync_round(&mut actors[..k], net)),
            ActorMode::Threaded => self.run_threaded(sink, &mut actors),
        };
        self.actors = actors;
        out?;
        Ok(self.summary.clone())
    }

    fn run_threaded(&mut self, sink: &mut dyn TrainingSink, actors: &mut Vec<Actor>) -> Result<()> {
        std::thread::scope(|scope| {
            let mut links = Vec::with_capacity(actors.len());
            for mut actor in actors.drain(..) {
                let (tx_cmd, rx_cmd) = mpsc::channel::<Option<Arc<QNetwork>>>();
                let (tx_out, rx_out) = mpsc::channel::<Result<ActorStep>>();
                let handle = scope.spawn(move || {
                    while let Ok(Some(net)) = rx_cmd.recv() {
                        if tx_out.send(actor.act(&net)).is_err() {
                            break;
                        }
                    }
                    actor
                });
                links.push((tx_cmd, rx_out, handle));
            }
            let out = self.run_loop(sink, &mut |k, net| {
                for (tx, _, _) in &links[..k] {
                    tx.send(Some(net.clone())).map_err(|_| EtherError::Usage("actor thread stopped".into()))?;
                }
                links[..k]
                    .iter()
                    .map(|(_, rx, _)| rx.recv().map_err(|_| EtherError::Usage("actor thread stopped".into()))?)
                    .collect()
            });
            for (tx, _, _) in &links {
                let _ = tx.send(None);
            }
            for (_, _, handle) in links {
                actors.push(handle.join().map_err(|_| EtherError::Usage("actor thread panicked".into()))?);
            }
            out
        })
    }

    fn run_loop(
        &mut self,
        sink: &mut dyn TrainingSink,
        round: &mut dyn FnMut(usize, &Arc<QNetwork>) -> Result<Vec<ActorStep>>,
    ) -> Result<()> {
        let budget = self.cfg.trainer.observation_budget;
        let n = self.cfg.trainer.n_actors as u64;
        while self.summary.env_steps < budget {
            let k = n.min(budget - self.summary.env_steps) as usize;
            let net = self.acting_network()?;
            let steps = round(k, &net)?;
            self.summary.env_steps += k as u64;
            for (i, step) in steps.into_iter().enumerate() {
                if let Some(traj) = step.finished {
                    let episode = self.summary.episodes;
                    self.on_episode(traj)
                        .map_err(|e| e.context(format!("episode {episode} (actor {i}, step {})", self.summary.env_steps)))?;
                }
            }
            self.pending_learn += k;
            while self.pending_learn >= self.cfg.trainer.learn_every {
                self.pending_learn -= self.cfg.trainer.learn_every;
                self.maybe_update()?;
            }
            if self.summary.env_steps >= self.next_eval {
                self.evaluate(sink)?;
                while self.next_eval <= self.summary.env_steps {
                    self.next_eval += self.cfg.eval.interval;
                }
            }
        }
        if self.last_eval != Some(self.summary.env_steps) {
            self.evaluate(sink)?;
        }
        Ok(())
    }

    /// Parameters the actors act with: refreshed from the store at most
    /// every `actor_update_interval` rounds.
    fn acting_network(&mut self) -> Result<Arc<QNetwork>> {
        let version = self.store.version();
        let stale = match &self.acting {
            None => true,
            Some((v, _)) => *v != version && self.rounds_since_refresh >= self.cfg.trainer.actor_update_interval,
        };
        if stale {
            let snap = self.store.snapshot()?;
            let net = QNetwork::new(self.cfg.trainer.network, Observation::CHANNELS, snap.var_builder(self.store.dtype(), self.store.device()))?;
            self.acting = Some((version, Arc::new(net)));
            self.rounds_since_refresh = 0;
        }
        self.rounds_since_refresh += 1;
        Ok(self.acting.as_ref().expect("set above").1.clone())
    }

    fn maybe_update(&mut self) -> Result<()> {
        if self.replay.is_empty() || self.replay.observations() < self.cfg.trainer.learning_starts {
            return Ok(());
        }
        let batch = self.replay.sample_batch(self.cfg.replay.batch_size, &mut self.rng_replay)?;
        let report = self
            .learner
            .update(&batch)
            .map_err(|e| e.context(format!("learner update {}", self.learner.updates() + 1)))?;
        self.replay.update_priorities(&batch.ids, &report.td_errors)?;
        self.summary.updates = self.learner.updates();
        self.running.loss += report.loss;
        self.running.loss_n += 1;
        Ok(())
    }

    fn store_trajectory(&mut self, traj: &Trajectory<Observation>) -> Result<()> {
        self.replay.store_episode(traj)?;
        Ok(())
    }

    fn on_episode(&mut self, traj: Trajectory<Observation>) -> Result<()> {
        let episode = self.summary.episodes;
        self.summary.episodes += 1;
        let success = traj.succeeded();
        if success {
            self.summary.successes += 1;
        }
        self.store_trajectory(&traj)?;
        let relabel_seed = derive_indexed(self.relabel_seed, episode);
        let check_gate = self.summary.episodes % self.cfg.hindsight.gate_interval as u64 == 0;
        let duplicates = match &mut self.hindsight {
            Hindsight::Inert => Vec::new(),
            Hindsight::Higher {
                generator,
                d_sup,
                gate_open,
                val_accuracy,
            } => {
                let mut dups = Vec::new();
                if success {
                    d_sup.harvest(&traj);
                    if self.variant.negatives() > 0 {
                        d_sup.add_negatives(contrastive_negatives(&traj, self.variant.negatives())?);
                    }
                    let pool: Vec<&(Observation, Goal)> = d_sup.train.iter().chain(&d_sup.negatives).collect();
                    if !pool.is_empty() {
                        let (inputs, goals) = minibatch(&pool, self.cfg.hindsight.generator_batch, &mut self.rng_sup)?;
                        let refs: Vec<&Goal> = goals.iter().collect();
                        let loss = self.store.update(|| generator.train_step(&inputs, &refs))?;
                        self.running.sup_loss += loss;
                        self.running.sup_n += 1;
                    }
                } else if *gate_open {
                    let m: &InstructionGenerator = generator;
                    dups = relabel(&traj, &m, &derive_predicate(m), RelabelStrategy::Final, relabel_seed)?;
                }
                if check_gate {
                    *val_accuracy = generator.accuracy(&d_sup.val)?;
                    *gate_open = self.cfg.hindsight.gate.higher_open(*val_accuracy, d_sup.val.len());
                    self.summary.higher_gate_ever_open |= *gate_open;
                }
                self.summary.sup_train = d_sup.train.len();
                self.summary.sup_val = d_sup.val.len();
                dups
            }
            Hindsight::Ether {
                learner,
                semantic,
                d_rg,
                d_sup,
                gate_open,
                val_accuracy,
            } => {
                d_rg.harvest(&traj);
                let game_cfg = *learner.game().config();
                let candidates = game_cfg.candidates();
                for _ in 0..game_cfg.epochs_per_episode {
                    let pool: Vec<&Observation> = d_rg.train.iter().map(|e| &e.stimulus).collect();
                    if pool.len() < candidates {
                        break;
                    }
                    let layout = learner.game().encoder().image_layout();
                    let batch = sample_games(&pool, game_cfg.batch_size, &game_cfg, layout, &mut self.rng_rg)?;
                    let grounding = match semantic {
                        Some(table) => {
                            let entries: Vec<(&Observation, &Goal)> = d_rg.train.iter().map(|e| (&e.stimulus, &e.goal)).collect();
                            let picks: Vec<usize> = (0..self.cfg.grounding.batch_size)
                                .map(|_| self.rng_ground.random_range(0..entries.len()))
                                .collect();
                            let inputs: Vec<Vec<f32>> = picks.iter().map(|&i| entries[i].0.input()).collect::<Result<_>>()?;
                            let goals: Vec<Goal> = picks.iter().map(|&i| entries[i].1.clone()).collect();
                            Some((table, inputs, goals))
                        }
                        None => None,
                    };
                    let (weight, noise_max) = (self.cfg.grounding.weight, self.cfg.grounding.noise_max);
                    let rng_ground = &mut self.rng_ground;
                    let rng_rg = &mut self.rng_rg;
                    let report = self.store.update(|| {
                        learner.play_game_step(&batch, rng_rg, |game| {
                            let Some((table, inputs, goals)) = &grounding else {
                                return Ok(None);
                            };
                            let feats = game.features(inputs, true)?;
                            let refs: Vec<&Goal> = goals.iter().collect();
                            let noise = if noise_max > 0.0 {
                                Some((rng_ground as &mut dyn RngCore, noise_max))
                            } else {
                                None
                            };
                            Ok(Some(table.loss(&feats, &refs, noise)?.affine(weight, 0.0)?))
                        })
                    })?;
                    let r = &mut self.running;
                    r.rg_accuracy += report.accuracy;
                    r.rg_lazy += report.lazy;
                    r.rg_impatient += report.impatient;
                    r.rg_extra += report.extra;
                    r.rg_length += report.mean_length;
                    r.rg_n += 1;
                }
                let mut dups = Vec::new();
                if success {
                    d_sup.harvest(&traj);
                    if !d_sup.train.is_empty() {
                        let pool: Vec<&(Observation, Goal)> = d_sup.train.iter().collect();
                        let (inputs, goals) = minibatch(&pool, self.cfg.hindsight.generator_batch, &mut self.rng_sup)?;
                        let refs: Vec<&Goal> = goals.iter().collect();
                        let loss = self.store.update(|| learner.supervised_step(&inputs, &refs))?;
                        self.running.sup_loss += loss;
                        self.running.sup_n += 1;
                    }
                } else if *gate_open {
                    let strategy = RelabelStrategy::resolve("future", self.cfg.hindsight.k_her)?;
                    let game = learner.game();
                    dups = relabel(&traj, &SpeakerMapping(game), &ListenerPredicate(game), strategy, relabel_seed)?;
                }
                if check_gate {
                    let val: Vec<&Observation> = d_rg.val.iter().map(|e| &e.stimulus).collect();
                    *val_accuracy = if val.len() >= candidates {
                        Some(learner.game().evaluate(&val, self.cfg.hindsight.gate_games, &mut self.rng_gate)?)
                    } else {
                        None
                    };
                    *gate_open = self.cfg.hindsight.gate.ether_open(*val_accuracy, val.len());
                    self.summary.ether_gate_ever_open |= *gate_open;
                    self.summary.rg_val_accuracy = *val_accuracy;
                }
                self.summary.rg_stimuli = d_rg.len();
                self.summary.rg_harvested = d_rg.harvested();
                self.summary.sup_train = d_sup.train.len();
                self.summary.sup_val = d_sup.val.len();
                dups
            }
        };
        for d in &duplicates {
            self.store_trajectory(d)?;
        }
        self.summary.relabelled += duplicates.len() as u64;
        Ok(())
    }

    fn gate_state(&self) -> Option<(bool, Option<f64>)> {
        match &self.hindsight {
            Hindsight::Inert => None,
            Hindsight::Higher {
                gate_open, val_accuracy, ..
            }
            | Hindsight::Ether {
                gate_open, val_accuracy, ..
            } => Some((*gate_open, *val_accuracy)),
        }
    }

    /// Greedy success ratio, dataset and gate state, alignment; then a checkpoint.
    pub fn evaluate(&mut self, sink: &mut dyn TrainingSink) -> Result<()> {
        let step = self.summary.env_steps;
        let eval_seed = derive_seed(self.seed, "eval");
        let ratio = success_ratio(&mut GreedyQPolicy::new(self.learner.network()), &self.cfg.env, self.cfg.eval.n_envs, eval_seed)?;
        self.summary.success_ratio = Some(ratio);
        let mut rows: Vec<(&str, f64)> = vec![
            ("success_ratio", ratio),
            ("episodes", self.summary.episodes as f64),
            ("successes", self.summary.successes as f64),
            ("updates", self.summary.updates as f64),
            ("replay_observations", self.replay.observations() as f64),
            ("relabelled", self.summary.relabelled as f64),
        ];
        let r = std::mem::take(&mut self.running);
        if r.loss_n > 0 {
            rows.push(("td_loss", r.loss / r.loss_n as f64));
        }
        if r.sup_n > 0 {
            rows.push(("supervised_loss", r.sup_loss / r.sup_n as f64));
        }
        if r.rg_n > 0 {
            let n = r.rg_n as f64;
            rows.push(("rg/train_accuracy", r.rg_accuracy / n));
            rows.push(("rg/lazy", r.rg_lazy / n));
            rows.push(("rg/impatient", r.rg_impatient / n));
            rows.push(("rg/grounding", r.rg_extra / n));
            rows.push(("rg/mean_length", r.rg_length / n));
        }
        if let Some((open, acc)) = self.gate_state() {
            rows.push(("gate_open", if open { 1.0 } else { 0.0 }));
            if let Some(a) = acc {
                rows.push(("val_accuracy", a));
            }
            rows.push(("d_sup_train", self.summary.sup_train as f64));
            rows.push(("d_sup_val", self.summary.sup_val as f64));
        }
        let mut alignment = Vec::new();
        if let Hindsight::Ether { learner, d_rg, .. } = &self.hindsight {
            rows.push(("d_rg", d_rg.len() as f64));
            let take = self.cfg.eval.alignment_samples.min(d_rg.train.len());
            if take > 0 {
                let recent: Vec<Observation> = d_rg.train.iter().rev().take(take).map(|e| e.stimulus.clone()).collect();
                let report = speaker_alignment(learner.game(), &recent, &Vocabulary::default())?;
                for (name, v) in report.entries() {
                    alignment.push((format!("align/{name}"), v));
                }
            }
        }
        for (name, v) in rows {
            sink.record(step, name, v)?;
        }
        for (name, v) in alignment {
            sink.record(step, &name, v)?;
        }
        sink.checkpoint(step, &self.store)?;
        self.last_eval = Some(step);
        log::info!("{} seed {} step {step}: success ratio {ratio:.2}", self.variant, self.seed);
        Ok(())
    }
}

/// Batched acting for a contiguous run of actors.
fn sync_round(actors: &mut [Actor], net: &QNetwork) -> Result<Vec<ActorStep>> {
    let observations: Vec<&Observation> = actors.iter().map(|a| a.observation()).collect();
    let goals: Vec<&Goal> = actors.iter().map(|a| a.goal()).collect();
    let prev_actions: Vec<Option<usize>> = actors.iter().map(|a| a.prev_action()).collect();
    let prev_rewards: Vec<f32> = actors.iter().map(|a| a.prev_reward()).collect();
    let states: Vec<Option<_>> = actors.iter().map(|a| a.recurrent_state().cloned()).collect();
    let (q, next) = act_batch(net, &observations, &goals, &prev_actions, &prev_rewards, &states)?;
    actors.iter_mut().zip(q.iter().zip(next)).map(|(a, (row, s))| a.advance(row, s)).collect()
}

/// `size` pairs drawn uniformly with replacement.
fn minibatch(pool: &[&(Observation, Goal)], size: usize, rng: &mut StdRng) -> Result<(Vec<Vec<f32>>, Vec<Goal>)> {
    let picks: Vec<usize> = (0..size).map(|_| rng.random_range(0..pool.len())).collect();
    let inputs = picks.iter().map(|&i| pool[i].0.input()).collect::<Result<Vec<_>>>()?;
    let goals = picks.iter().map(|&i| pool[i].1.clone()).collect();
    Ok((inputs, goals))
}

/// Train `variant` with `config` and `seed`, streaming rows to `sink`.
pub fn run_training(variant: Variant, config: &RunConfig, seed: u64, sink: &mut dyn TrainingSink) -> Result<TrainingSummary> {
    Trainer::new(variant, config, seed)?.run(sink)
}
