mod common;

use candle_core::{DType, Var};
use common::small_config;
use ether_core::gridworld::{Action, GridWorld, Observation};
use ether_core::nn::params::ParameterStore;
use ether_core::replay::{PrioritizedBuffer, SampledBatch, Trajectory};
use ether_core::runner::RunConfig;
use ether_core::trainer::{run_training, Actor, Learner, MemorySink, QNetwork, Trainer, Variant, AGENT_PREFIXES};
use ether_core::vocab::Vocabulary;
use rand::rngs::StdRng;
use rand::SeedableRng;
use std::sync::Arc;

/// Replay filled by one ε-greedy actor with a fresh network.
fn filled_buffer(cfg: &RunConfig, store: &ParameterStore, min_obs: usize) -> PrioritizedBuffer<Observation> {
    let net = QNetwork::new(cfg.trainer.network, Observation::CHANNELS, store.var_builder()).unwrap();
    let mut buf = PrioritizedBuffer::new(cfg.replay).unwrap();
    let mut actor = Actor::new(0, &cfg.env, &cfg.trainer, 9).unwrap();
    while buf.observations() < min_obs {
        if let Some(t) = actor.act(&net).unwrap().finished {
            buf.store_episode(&t).unwrap();
        }
    }
    buf
}

fn agent_values(store: &ParameterStore) -> Vec<(String, Vec<f32>)> {
    store
        .names()
        .into_iter()
        .filter(|n| AGENT_PREFIXES.iter().any(|p| n.starts_with(p)))
        .map(|n| {
            let v = store.get(&n).unwrap().as_tensor().flatten_all().unwrap().to_vec1::<f32>().unwrap();
            (n, v)
        })
        .collect()
}

#[test]
fn batch_loss_is_the_weighted_mean_of_trainable_squared_errors() {
    let cfg = small_config(Variant::R2d2, 64);
    let store = Arc::new(ParameterStore::with_seed(DType::F32, 4));
    let buf = filled_buffer(&cfg, &store, 300);
    let learner = Learner::new(cfg.trainer, Observation::CHANNELS, store.clone()).unwrap();
    let batch = buf.sample_batch(6, &mut StdRng::seed_from_u64(2)).unwrap();
    let out = learner.batch_loss(&batch.segments, &batch.weights).unwrap();
    let b = batch.segments.len() as f64;
    let mut oracle = 0.0;
    for (i, seg) in batch.segments.iter().enumerate() {
        let burn = learner.burn_in_for(seg);
        let trainable = seg.valid_len.saturating_sub(burn);
        assert_eq!(out.td_errors[i].len(), trainable);
        for (k, t) in (burn..seg.valid_len).enumerate() {
            let delta = out.targets[i][t] - out.q_taken[i][t];
            assert!((out.td_errors[i][k] - delta.abs()).abs() < 1e-4);
            oracle += batch.weights[i] / trainable as f64 / b * delta * delta;
        }
    }
    let loss = out.loss.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap();
    assert!((loss - oracle).abs() <= 1e-4 * oracle.max(1.0), "{loss} vs {oracle}");
}

#[test]
fn burn_in_positions_receive_no_gradient() {
    let mut cfg = small_config(Variant::R2d2, 64);
    cfg.trainer.burn_in_from_episode_start = false;
    let store = Arc::new(ParameterStore::with_seed(DType::F64, 4));
    let buf = filled_buffer(&cfg, &store, 300);
    let learner = Learner::new(cfg.trainer, Observation::CHANNELS, store.clone()).unwrap();
    let seg = buf.ids().map(|id| buf.segment(id).unwrap()).find(|s| s.valid_len > 12).expect("a long segment");
    let mut input = learner.prepare(std::slice::from_ref(&seg)).unwrap();
    let pixels = Var::from_tensor(&input.pixels).unwrap();
    input.pixels = pixels.as_tensor().clone();
    let burn = learner.burn_in_for(&seg);
    assert_eq!(burn, 10);
    let q = learner.network().unroll(&input, &[burn]).unwrap();
    // loss over trainable positions only, as in the TD loss
    let loss = q.narrow(1, burn, seg.valid_len - burn).unwrap().sqr().unwrap().sum_all().unwrap();
    let grads = loss.backward().unwrap();
    let g = grads.get(pixels.as_tensor()).unwrap();
    let per_step: Vec<f64> = g.abs().unwrap().flatten_from(1).unwrap().sum(1).unwrap().to_vec1().unwrap();
    assert!(per_step[..burn].iter().all(|&v| v == 0.0), "{per_step:?}");
    assert!(per_step[burn..seg.valid_len].iter().any(|&v| v > 0.0), "{per_step:?}");
}

#[test]
fn episode_start_segments_skip_burn_in_when_configured() {
    let cfg = small_config(Variant::R2d2, 64);
    let store = Arc::new(ParameterStore::with_seed(DType::F32, 4));
    let buf = filled_buffer(&cfg, &store, 200);
    let learner = Learner::new(cfg.trainer, Observation::CHANNELS, store).unwrap();
    for id in buf.ids() {
        let seg = buf.segment(id).unwrap();
        assert_eq!(learner.burn_in_for(&seg), if seg.at_episode_start() { 0 } else { 10 });
    }
}

/// A two-step episode: the cheapest possible learner batch.
fn tiny_batch(cfg: &RunConfig) -> SampledBatch<Observation> {
    let mut env = GridWorld::new(cfg.env.clone(), Vocabulary::default()).unwrap();
    let (o0, goal) = env.reset(3).unwrap();
    let o1 = env.step(Action::from_index(0).unwrap()).unwrap().observation;
    let o2 = env.step(Action::from_index(1).unwrap()).unwrap().observation;
    let traj = Trajectory::new(goal, vec![o0, o1, o2], vec![0, 1], vec![0.0, 1.0], true).unwrap();
    let mut buf = PrioritizedBuffer::new(cfg.replay).unwrap();
    buf.store_episode(&traj).unwrap();
    buf.sample_batch(1, &mut StdRng::seed_from_u64(0)).unwrap()
}

#[test]
fn target_network_syncs_on_the_interval_only() {
    let mut cfg = small_config(Variant::R2d2, 64);
    cfg.trainer.target_update_interval = 3;
    let store = Arc::new(ParameterStore::with_seed(DType::F32, 8));
    let mut learner = Learner::new(cfg.trainer, Observation::CHANNELS, store.clone()).unwrap();
    let initial = agent_values(&store);
    let batch = tiny_batch(&cfg);
    for u in 1..=7u64 {
        let report = learner.update(&batch).unwrap();
        assert_eq!(report.synced, u % 3 == 0, "update {u}");
        let target = agent_values(learner.target());
        if u < 3 {
            assert_eq!(target, initial, "update {u}");
            assert_ne!(agent_values(&store), initial);
        }
        if report.synced {
            assert_eq!(target, agent_values(&store), "update {u}");
        }
    }
}

#[test]
fn observation_budget_is_spent_exactly() {
    // 4 actors never divide 250, so the last round is partial
    let cfg = small_config(Variant::R2d2, 250);
    let mut sink = MemorySink::default();
    let summary = run_training(Variant::R2d2, &cfg, 0, &mut sink).unwrap();
    assert_eq!(summary.env_steps, 250);
    assert_eq!(sink.checkpoints, vec![250]);
    assert_eq!(sink.values("success_ratio").len(), 1);
    assert_eq!(summary.relabelled, 0);
}

#[test]
fn threaded_actors_reproduce_the_synchronous_run() {
    let mut cfg = small_config(Variant::R2d2, 160);
    cfg.trainer.n_actors = 1;
    let run = |mode: &str| {
        let mut c = cfg.clone();
        c.trainer.mode = if mode == "sync" {
            ether_core::trainer::ActorMode::Sync
        } else {
            ether_core::trainer::ActorMode::Threaded
        };
        let mut sink = MemorySink::default();
        let summary = run_training(Variant::R2d2, &c, 5, &mut sink).unwrap();
        (summary, sink.records)
    };
    let (a, ra) = run("sync");
    let (b, rb) = run("threaded");
    assert_eq!(a, b);
    assert_eq!(ra, rb);
    assert!(a.updates > 0);
}

#[test]
fn runs_are_reproducible_from_the_seed() {
    let cfg = small_config(Variant::Ether, 128);
    let go = |seed| {
        let mut sink = MemorySink::default();
        run_training(Variant::Ether, &cfg, seed, &mut sink).unwrap();
        sink.records
    };
    assert_eq!(go(3), go(3));
}

#[test]
fn unreachable_gate_means_no_relabelling() {
    let mut cfg = small_config(Variant::Ether, 320);
    cfg.hindsight.gate.theta_rg = 1.01;
    let mut sink = MemorySink::default();
    let s = run_training(Variant::Ether, &cfg, 1, &mut sink).unwrap();
    assert!(!s.ether_gate_ever_open);
    assert_eq!(s.relabelled, 0);
    assert!(s.rg_harvested > 0);
    assert!(sink.values("gate_open").iter().all(|&(_, v)| v == 0.0));
}

#[test]
fn open_gate_relabels_failures_with_k_duplicates() {
    let mut cfg = small_config(Variant::Ether, 320);
    cfg.hindsight.gate.theta_rg = 0.0;
    cfg.hindsight.gate.n_min = 1;
    cfg.hindsight.gate_interval = 1;
    // enough validation episodes for a game within a short run
    cfg.hindsight.val_fraction = 0.5;
    let mut trainer = Trainer::new(Variant::Ether, &cfg, 2).unwrap();
    let s = trainer.run(&mut MemorySink::default()).unwrap();
    assert!(s.ether_gate_ever_open);
    assert!(s.relabelled > 0);
    assert_eq!(s.relabelled % cfg.hindsight.k_her as u64, 0);
}

#[test]
fn r2d2_keeps_no_hindsight_state() {
    let cfg = small_config(Variant::R2d2, 128);
    let mut sink = MemorySink::default();
    let s = run_training(Variant::R2d2, &cfg, 0, &mut sink).unwrap();
    assert_eq!((s.relabelled, s.sup_train, s.rg_stimuli), (0, 0, 0));
    assert!(sink.values("gate_open").is_empty());
    assert!(sink.records.iter().all(|r| !r.1.starts_with("align/")));
}

#[test]
fn higher_learns_only_from_successes() {
    let mut cfg = small_config(Variant::HigherPp(2), 320);
    cfg.env.success_impossible = true;
    let s = run_training(Variant::HigherPp(2), &cfg, 0, &mut MemorySink::default()).unwrap();
    assert_eq!(s.successes, 0);
    assert_eq!(s.sup_train + s.sup_val, 0);
    assert!(!s.higher_gate_ever_open);
}

#[test]
fn ether_logs_alignment_and_dataset_sizes() {
    let cfg = small_config(Variant::EtherPlus, 256);
    let mut sink = MemorySink::default();
    run_training(Variant::EtherPlus, &cfg, 0, &mut sink).unwrap();
    for name in ["success_ratio", "d_rg", "d_sup_train", "gate_open", "align/any_colour", "rg/grounding"] {
        assert_eq!(sink.values(name).len(), 1, "{name}");
    }
    let grounding = sink.values("rg/grounding")[0].1;
    assert!(grounding.is_finite() && grounding > 0.0, "{grounding}");
}

#[test]
fn budget_smaller_than_one_round_still_evaluates() {
    let cfg = small_config(Variant::R2d2, 3);
    let mut sink = MemorySink::default();
    let s = run_training(Variant::R2d2, &cfg, 0, &mut sink).unwrap();
    assert_eq!(s.env_steps, 3);
    assert_eq!(sink.checkpoints, vec![3]);
}
