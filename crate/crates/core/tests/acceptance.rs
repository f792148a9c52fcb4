//! Acceptance suite: one check per criterion, one `PASS`/`FAIL` line each.
//!
//! Runs without the libtest harness so the lines always reach the terminal.
//! The optional long-running ordering check (11) is skipped unless the
//! binary gets `--ignored` or `--include-ignored`, as with ordinary tests.

mod common;

use candle_core::{DType, Device, Tensor, Var, D};
use common::small_config;
use ether_core::gridworld::{Action, Colour, EnvConfig, GridWorld, Observation, Shape, SymbolicImage};
use ether_core::hindsight::{derive_predicate, future_cut_points, relabel, FnMapping, RelabelStrategy};
use ether_core::metrics::{alignment_report, co_occurrence_histogram, AlignmentSample, ExpertPolicy, RandomPolicy};
use ether_core::nn::encoder::conv2d;
use ether_core::nn::params::ParameterStore;
use ether_core::nn::{check_gradients, Decoding, FiLMAdapter, GradCheckOptions, GradCheckReport, Speaker, SpeakerConfig, VisualEncoder, FEATURE_DIM};
use ether_core::refgame::{
    impatient_loss, lazy_loss, lazy_loss_via_kl, sample_games, stgs_sample_seeded, symbolic_stimuli, GameConfig, GameLearner, RefGame,
    StimulusEncoder,
};
use ether_core::replay::{segment_episode, PrioritizedBuffer, ReplayConfig, SampledBatch, Trajectory, BURN_IN, OVERLAP, UNROLL};
use ether_core::trainer::{n_step_targets, run_training, Learner, MemorySink, TrainerConfig, Variant};
use ether_core::vocab::{Goal, TokenId, Vocabulary, EOS};
use ether_core::grounding::grounding_loss;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Instant;

/// `Ok(detail)` passes, `Err(detail)` fails.
type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn var(shape: &[usize], lo: f64, hi: f64, rng: &mut StdRng) -> Var {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Var::from_tensor(&Tensor::from_vec(v, shape, &Device::Cpu).unwrap()).unwrap()
}

// ---------------------------------------------------------------- 1

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(101);
    let defaults = GradCheckOptions::default();
    // piecewise-linear objectives get a step too small to cross a kink
    let fine = GradCheckOptions {
        step: 1e-6,
        ..GradCheckOptions::default()
    };
    let mut lines = Vec::new();
    let mut ok = true;
    let mut record = |name: &str, report: GradCheckReport, tol: f64| {
        let err = report.max_relative_error();
        ok &= report.passed(tol);
        lines.push(format!("{name} {err:.1e}"));
    };

    let x = var(&[6], -2.0, 2.0, &mut rng);
    let a = Tensor::from_slice(&[1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0], 6, &Device::Cpu).unwrap();
    let quad = || Ok(((x.as_tensor().sqr()? * &a)?.sum_all()? + x.as_tensor().sum_all()?)?);
    record("quadratic", check_gradients(quad, &[("x", &x)], &defaults).unwrap(), 1e-6);

    let table = var(&[16, 8], -1.0, 1.0, &mut rng);
    let feats = var(&[5, 8], -1.0, 1.0, &mut rng);
    let goals: Vec<Goal> = (0..5).map(|i| Goal::new([2, 3, 4 + (i % 3) as u32, 10 + (i % 2) as u32])).collect();
    let refs: Vec<&Goal> = goals.iter().collect();
    let grounding = || grounding_loss(table.as_tensor(), feats.as_tensor(), &refs, None);
    record(
        "grounding",
        check_gradients(grounding, &[("table", &table), ("features", &feats)], &defaults).unwrap(),
        1e-3,
    );

    let logits = var(&[3, 4, 16], -2.0, 2.0, &mut rng);
    let mask = Tensor::from_vec(vec![1.0f64, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0], (3, 4), &Device::Cpu).unwrap();
    let lazy = || lazy_loss(&candle_nn::ops::softmax(logits.as_tensor(), D::Minus1)?, &mask, 0.01);
    record("lazy", check_gradients(lazy, &[("logits", &logits)], &defaults).unwrap(), 1e-3);

    let prefix = var(&[3, 4, 5], -2.0, 2.0, &mut rng);
    let impatient = || impatient_loss(prefix.as_tensor(), &mask, &[0, 3, 4], 1.0);
    record("impatient", check_gradients(impatient, &[("prefix_logits", &prefix)], &fine).unwrap(), 1e-3);

    let store = ParameterStore::with_seed(DType::F64, 3);
    let film = FiLMAdapter::new(8, 6, store.var_builder()).unwrap();
    let fx = var(&[2, 8, 4, 4], -1.0, 1.0, &mut rng);
    let probe = Tensor::randn(0f64, 1., (2, 8, 4, 4), &Device::Cpu).unwrap();
    let g = var(&[2, 6], -1.0, 1.0, &mut rng);
    let film_obj = || Ok((film.forward(fx.as_tensor(), g.as_tensor())? * &probe)?.sum_all()?);
    record("film", check_gradients(film_obj, &[("features", &fx), ("goal", &g)], &defaults).unwrap(), 1e-3);

    let cx = var(&[2, 3, 9, 9], -1.0, 1.0, &mut rng);
    let cw = var(&[4, 3, 3, 3], -1.0, 1.0, &mut rng);
    let cprobe = Tensor::randn(0f64, 1., (2, 4, 5, 5), &Device::Cpu).unwrap();
    let conv = || Ok((conv2d(cx.as_tensor(), cw.as_tensor(), 1, 2)? * &cprobe)?.sum_all()?);
    record("convolution", check_gradients(conv, &[("x", &cx), ("w", &cw)], &defaults).unwrap(), 1e-3);

    let estore = ParameterStore::with_seed(DType::F64, 4);
    let enc = VisualEncoder::new(Observation::CHANNELS, estore.var_builder()).unwrap();
    let pixels = var(&[1, Observation::CHANNELS, 64, 64], 0.0, 1.0, &mut rng);
    let sampled = GradCheckOptions {
        max_entries_per_input: 24,
        ..fine.clone()
    };
    let encoder = || Ok(enc.forward_t(pixels.as_tensor(), false)?.sum_all()?);
    record("encoder", check_gradients(encoder, &[("pixels", &pixels)], &sampled).unwrap(), 1e-3);

    let secs = start.elapsed().as_secs_f64();
    check(ok && secs < 120.0, format!("max rel err: {}; {secs:.1}s (limit 120s)", lines.join(", ")))
}

// ---------------------------------------------------------------- 2

fn lazy_closed_form() -> Outcome {
    let mut rng = StdRng::seed_from_u64(202);
    let v = 64;
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let len = rng.random_range(1..=10);
        let valid = rng.random_range(1..=len);
        let concentration = rng.random_range(0.1..5.0);
        let raw: Vec<f64> = (0..len * v).map(|_| (rng.random_range(-1.0..1.0f64) * concentration).exp()).collect();
        let mut probs = raw.clone();
        for row in probs.chunks_mut(v) {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= s);
        }
        let beta0 = rng.random_range(0.001..1.0);
        // direct Σ_l β0·l·(−ln W_l(EoS)) over valid steps
        let direct: f64 = (0..valid).map(|l| beta0 * (l + 1) as f64 * -probs[l * v + EOS as usize].ln()).sum();
        let dist = Tensor::from_vec(probs, (1, len, v), &Device::Cpu).unwrap();
        let mask: Vec<f64> = (0..len).map(|l| if l < valid { 1.0 } else { 0.0 }).collect();
        let mask = Tensor::from_vec(mask, (1, len), &Device::Cpu).unwrap();
        let closed = lazy_loss(&dist, &mask, beta0).unwrap().to_scalar::<f64>().unwrap();
        let kl = lazy_loss_via_kl(&dist, &mask, beta0).unwrap().to_scalar::<f64>().unwrap();
        worst = worst.max((closed - kl).abs()).max((closed - direct).abs());
    }
    let uniform = Tensor::full(1.0 / v as f64, (1, 1, v), &Device::Cpu).unwrap();
    let one = Tensor::ones((1, 1), DType::F64, &Device::Cpu).unwrap();
    let u = lazy_loss_via_kl(&uniform, &one, 1.0).unwrap().to_scalar::<f64>().unwrap();
    let u_err = (u - 64f64.ln()).abs();
    check(
        worst < 1e-6 && u_err < 1e-6,
        format!("max |KL form − closed form| {worst:.1e} over 1000; uniform {u:.6} vs ln 64 (err {u_err:.1e})"),
    )
}

// ---------------------------------------------------------------- 3

fn relabelling_oracle() -> Outcome {
    let mut rng = StdRng::seed_from_u64(303);
    let mut mismatches = 0usize;
    let mut duplicates = 0usize;
    let mut mutated = 0usize;
    for n in 0..1000u64 {
        let n_states = rng.random_range(2..12u8);
        let pool: Vec<Goal> = (0..rng.random_range(1..6u32)).map(|g| Goal::new([2, 3, 4 + g])).collect();
        let table: Vec<Goal> = (0..n_states).map(|_| pool[rng.random_range(0..pool.len())].clone()).collect();
        let len = rng.random_range(1..=40usize);
        let states: Vec<u8> = (0..=len).map(|_| rng.random_range(0..n_states)).collect();
        let actions: Vec<usize> = (0..len).map(|_| rng.random_range(0..Action::COUNT)).collect();
        let mut traj = Trajectory::new(Goal::new([2, 3, 40]), states, actions, vec![0.0; len], true).unwrap();
        traj.seed = n;
        let before = traj.clone();
        let before_bytes = format!("{traj:?}");
        let map = |s: &u8| table[*s as usize].clone();
        let m = FnMapping(map);
        let f = derive_predicate(FnMapping(map));
        let k = rng.random_range(1..6);
        let seed = rng.random();
        for strategy in [RelabelStrategy::Final, RelabelStrategy::Future { k }] {
            let dups = relabel(&traj, &m, &f, strategy, seed).unwrap();
            let cuts = match strategy {
                RelabelStrategy::Final => vec![len],
                RelabelStrategy::Future { k } => {
                    // the cut points are the seeded uniform draws from 1..=T
                    let mut r = StdRng::seed_from_u64(seed);
                    let cuts: Vec<usize> = (0..k).map(|_| r.random_range(1..=len)).collect();
                    assert_eq!(cuts, future_cut_points(len, k, seed));
                    cuts
                }
            };
            if dups.len() != cuts.len() {
                mismatches += 1;
                continue;
            }
            for (d, &cut) in dups.iter().zip(&cuts) {
                duplicates += 1;
                let goal = &table[before.states[cut] as usize];
                let rewards: Vec<f32> = (1..=cut).map(|t| f32::from(u8::from(table[before.states[t] as usize] == *goal))).collect();
                let ok = d.goal == *goal
                    && d.len() == cut
                    && d.states[..] == before.states[..=cut]
                    && d.actions[..] == before.actions[..cut]
                    && d.rewards == rewards
                    && d.seed == before.seed;
                mismatches += usize::from(!ok);
            }
        }
        if traj != before || format!("{traj:?}") != before_bytes {
            mutated += 1;
        }
    }
    check(
        mismatches == 0 && mutated == 0,
        format!("{duplicates} duplicates, {mismatches} mismatches, {mutated} originals changed"),
    )
}

// ---------------------------------------------------------------- 4

fn stgs_channel() -> Outcome {
    let v = 8;
    let rows = 1000;
    let base: Vec<f32> = vec![1.2, -0.4, 0.0, 2.1, -1.5, 0.7, 0.3, -0.9];
    let max = base.iter().cloned().fold(f32::MIN, f32::max);
    let z: f64 = base.iter().map(|&l| ((l - max) as f64).exp()).sum();
    let p: Vec<f64> = base.iter().map(|&l| ((l - max) as f64).exp() / z).collect();
    let logits = Tensor::from_vec(base.repeat(rows), (rows, v), &Device::Cpu).unwrap();
    let mut counts = vec![0usize; v];
    let mut not_one_hot = 0usize;
    for seed in 0..100 {
        let s = stgs_sample_seeded(&logits, 0.7, seed).unwrap();
        let hard: Vec<Vec<f32>> = s.hard.to_vec2().unwrap();
        for (row, &t) in hard.iter().zip(&s.tokens) {
            let exact = row.iter().enumerate().all(|(i, &x)| x == if i == t as usize { 1.0 } else { 0.0 });
            not_one_hot += usize::from(!exact);
            counts[t as usize] += 1;
        }
    }
    let n = (100 * rows) as f64;
    let worst_z = p
        .iter()
        .zip(&counts)
        .map(|(&pi, &c)| (c as f64 / n - pi).abs() / (pi * (1.0 - pi) / n).sqrt())
        .fold(0.0, f64::max);

    let store = ParameterStore::with_seed(DType::F32, 5);
    let cfg = SpeakerConfig {
        vocab_size: 64,
        max_len: 10,
        hidden: 32,
        tau0: 0.2,
    };
    let speaker = Speaker::new(cfg, store.var_builder().pp("speaker")).unwrap();
    let f = Tensor::randn(0f32, 1., (4, FEATURE_DIM), &Device::Cpu).unwrap();
    let out = speaker.forward(&f, Decoding::Stgs(&mut StdRng::seed_from_u64(6))).unwrap();
    let w = Tensor::randn(0f32, 1., out.symbols.dims(), &Device::Cpu).unwrap();
    let grads = (&out.symbols * w).unwrap().sum_all().unwrap().backward().unwrap();
    let mut norm2 = 0.0f64;
    for var in store.trainable(&["speaker"]) {
        if let Some(g) = grads.get(var.as_tensor()) {
            norm2 += g.sqr().unwrap().sum_all().unwrap().to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap();
        }
    }
    check(
        not_one_hot == 0 && worst_z <= 3.0 && norm2 > 0.0,
        format!(
            "{} samples, {not_one_hot} not exactly one-hot; worst frequency deviation {worst_z:.2} SE (limit 3); speaker grad norm {:.3e}",
            100 * rows,
            norm2.sqrt()
        ),
    )
}

// ---------------------------------------------------------------- 5

fn replay_statistics() -> Outcome {
    let mut buf = PrioritizedBuffer::<u32>::new(ReplayConfig::default()).unwrap();
    let ep = |tag: u32| Trajectory::new(Goal::new([2, 3]), (0..=5).map(|t| tag * 100 + t).collect(), vec![0; 5], vec![0.0; 5], true).unwrap();
    let a = buf.store_episode(&ep(1)).unwrap();
    let b = buf.store_episode(&ep(2)).unwrap();
    buf.update_priorities(&[a[0], b[0]], &[vec![8.0; 5], vec![1.0; 5]]).unwrap();
    let mut rng = StdRng::seed_from_u64(505);
    let draws = 100_000;
    let mut high = 0usize;
    for _ in 0..draws / 1000 {
        high += buf.sample_batch(1000, &mut rng).unwrap().ids.iter().filter(|&&id| id == a[0]).count();
    }
    let alpha = ReplayConfig::default().priority_exponent;
    let want = 8f64.powf(alpha);
    let q = want / (want + 1.0);
    let n = draws as f64;
    let ratio = high as f64 / (draws - high) as f64;
    // delta method: ratio = q̂/(1 − q̂), d/dq = 1/(1 − q)²
    let se = (q * (1.0 - q) / n).sqrt() / (1.0 - q).powi(2);
    let z = (ratio - want).abs() / se;

    let mut shape_failures = 0usize;
    let mut erng = StdRng::seed_from_u64(506);
    let mut capped = PrioritizedBuffer::<usize>::new(ReplayConfig {
        capacity: 500,
        ..ReplayConfig::default()
    })
    .unwrap();
    let mut max_obs = 0;
    for e in 0..1000 {
        let len = erng.random_range(1..=200usize);
        let traj = Trajectory::new(Goal::new([2, 3]), (0..=len).map(|t| e * 1000 + t).collect(), vec![0; len], vec![0.0; len], true).unwrap();
        let segs = segment_episode(&traj).unwrap();
        let good = segs.len() == len.div_ceil(OVERLAP)
            && segs.iter().map(|s| s.owned_observations).sum::<usize>() == len
            && segs.iter().enumerate().all(|(k, s)| {
                s.start == k * OVERLAP
                    && (1..=UNROLL).contains(&s.valid_len)
                    && s.states[..] == traj.states[s.start..=s.start + s.valid_len]
                    && (s.valid_len == UNROLL || s.start + s.valid_len == len)
            });
        shape_failures += usize::from(!good);
        capped.store_episode(&traj).unwrap();
        max_obs = max_obs.max(capped.observations());
    }
    check(
        z <= 3.0 && shape_failures == 0 && max_obs <= 500 && (UNROLL, BURN_IN, OVERLAP) == (20, 10, 10),
        format!(
            "ratio {ratio:.3} vs 8^{alpha} = {want:.3} ({z:.2} SE); segments {UNROLL}/{BURN_IN}/{OVERLAP}, {shape_failures} bad episodes of 1000; peak {max_obs}/500 observations"
        ),
    )
}

// ---------------------------------------------------------------- 6

/// Updates until greedy accuracy on the whole pool reaches 95%, checked every
/// 50 updates; `None` if 2000 updates are not enough.
fn rg_updates_to_learn(seed: u64) -> (Option<usize>, f64) {
    let cfg = GameConfig::default();
    let pool = symbolic_stimuli(3, 4);
    let store = ParameterStore::with_seed(DType::F32, seed);
    let vb = store.var_builder();
    let encoder = StimulusEncoder::symbolic(12, vb.pp("encoder")).unwrap();
    let game = RefGame::new(cfg, encoder, vb.pp("speaker"), vb.pp("listener")).unwrap();
    let mut learner = GameLearner::new(game, store.trainable(&["encoder", "speaker", "listener"]), store.trainable(&["speaker"])).unwrap();
    let mut rng = StdRng::seed_from_u64(seed ^ 0x5eed);
    let mut eval_rng = StdRng::seed_from_u64(seed ^ 0xe7a1);
    let mut last = 0.0;
    for u in 1..=2000 {
        let batch = sample_games(&pool, cfg.batch_size, &cfg, None, &mut rng).unwrap();
        learner.play_game_step(&batch, &mut rng, |_| Ok(None)).unwrap();
        if u % 50 == 0 {
            last = learner.game().evaluate(&pool, 512, &mut eval_rng).unwrap();
            if last >= 0.95 {
                return (Some(u), last);
            }
        }
    }
    (None, last)
}

fn rg_learnability() -> Outcome {
    let start = Instant::now();
    let runs: Vec<(u64, (Option<usize>, f64))> = (0..3).map(|s| (s, rg_updates_to_learn(s))).collect();
    let secs = start.elapsed().as_secs_f64();
    let learned = runs.iter().filter(|(_, (u, _))| u.is_some()).count();
    let detail: Vec<String> = runs
        .iter()
        .map(|(s, (u, acc))| match u {
            Some(u) => format!("seed {s}: {:.1}% at update {u}", 100.0 * acc),
            None => format!("seed {s}: {:.1}% after 2000", 100.0 * acc),
        })
        .collect();
    check(learned == 3 && secs < 600.0, format!("{learned}/3 seeds; {}; {secs:.0}s (limit 600s)", detail.join(", ")))
}

// ---------------------------------------------------------------- 7

fn co_occurrence() -> Outcome {
    let cfg = EnvConfig {
        render_pixels: false,
        ..EnvConfig::default()
    };
    let mut expert_misses = Vec::new();
    let mut random_hits = 0usize;
    let mut goals = 0usize;
    for (ci, &c) in Colour::ALL.iter().enumerate() {
        for (si, &s) in Shape::ALL.iter().enumerate() {
            goals += 1;
            let seed = 700 + (ci * 3 + si) as u64;
            let h = co_occurrence_histogram(&mut ExpertPolicy, &cfg, (c, s), 500, seed).unwrap();
            if h.colour_rank(c) > 3 || h.shape_rank(s) > 3 {
                expert_misses.push(format!("{c:?} {s:?}"));
            }
            let r = co_occurrence_histogram(&mut RandomPolicy::new(seed), &cfg, (c, s), 500, seed).unwrap();
            random_hits += usize::from(r.colour_rank(c) <= 3 && r.shape_rank(s) <= 3);
        }
    }
    let frac = random_hits as f64 / goals as f64;
    check(
        expert_misses.is_empty() && frac >= 0.8,
        format!(
            "expert: goal in top 3 for {}/{goals} goals{}; random: {random_hits}/{goals} ({:.0}%, need 80%)",
            goals - expert_misses.len(),
            if expert_misses.is_empty() { String::new() } else { format!(" (missed {})", expert_misses.join(", ")) },
            100.0 * frac
        ),
    )
}

// ---------------------------------------------------------------- 8

/// Symbolic views along uniform-random episodes in the default room.
fn random_views(n: usize, seed: u64) -> Vec<SymbolicImage> {
    let cfg = EnvConfig {
        render_pixels: false,
        ..EnvConfig::default()
    };
    let mut env = GridWorld::new(cfg, Vocabulary::default()).unwrap();
    let mut rng = StdRng::seed_from_u64(seed);
    let mut views = Vec::with_capacity(n);
    let mut episode = seed;
    let (mut obs, _) = env.reset(episode).unwrap();
    while views.len() < n {
        views.push(obs.view().clone());
        if env.is_done() {
            episode += 1;
            obs = env.reset(episode).unwrap().0;
        } else {
            obs = env.step(Action::from_index(rng.random_range(0..Action::COUNT)).unwrap()).unwrap().observation;
        }
    }
    views
}

/// Expected any-credit, in percent, of a speaker emitting uniform tokens
/// until EoS or `max_len` tokens, when `k` distinct tokens would earn it:
/// `Σ_{j<L} (1 − (k+1)/V)^j · k/V`.
fn uniform_speaker_expectation(k: usize, vocab: usize, max_len: usize) -> f64 {
    let (k, v) = (k as f64, vocab as f64);
    100.0 * (0..max_len).map(|j| (1.0 - (k + 1.0) / v).powi(j as i32) * k / v).sum::<f64>()
}

fn alignment_sanity() -> Outcome {
    let vocab = Vocabulary::default();
    let (v, max_len) = (vocab.size(), 10);
    let views = random_views(10_000, 808);
    let mut rng = StdRng::seed_from_u64(809);
    let random_msgs: Vec<Vec<TokenId>> = views
        .iter()
        .map(|_| {
            let mut m = Vec::new();
            while m.len() < max_len {
                let t = rng.random_range(0..v as TokenId);
                m.push(t);
                if t == EOS {
                    break;
                }
            }
            m
        })
        .collect();
    let oracle_msgs: Vec<Vec<TokenId>> = views
        .iter()
        .map(|view| view.objects().flat_map(|(c, s)| [vocab.colour(c.index()), vocab.shape(s.index())]).collect())
        .collect();
    let build = |msgs: &[Vec<TokenId>], idx: &[usize]| {
        let pairs: Vec<AlignmentSample<'_>> = idx.iter().map(|&i| AlignmentSample { message: &msgs[i], view: Some(&views[i]) }).collect();
        alignment_report(&pairs, &vocab)
    };
    let all: Vec<usize> = (0..views.len()).collect();
    // the oracle names every visible object, so it is scored on views that show one
    let with_objects: Vec<usize> = all.iter().copied().filter(|&i| views[i].objects().next().is_some()).collect();
    let oracle = build(&oracle_msgs, &with_objects);
    let random = build(&random_msgs, &all);
    let expect_colour =
        views.iter().map(|w| uniform_speaker_expectation(w.visible_colours().len(), v, max_len)).sum::<f64>() / views.len() as f64;
    let expect_shape =
        views.iter().map(|w| uniform_speaker_expectation(w.visible_shapes().len(), v, max_len)).sum::<f64>() / views.len() as f64;

    let mut violations = 0usize;
    let mut batches = 0usize;
    for msgs in [&random_msgs, &oracle_msgs] {
        for chunk in all.chunks(100) {
            batches += 1;
            violations += usize::from(!build(msgs, chunk).dominance_holds());
        }
    }
    let (dc, ds) = ((random.any_colour - expect_colour).abs(), (random.any_shape - expect_shape).abs());
    check(
        oracle.any_colour == 100.0 && oracle.any_shape == 100.0 && dc <= 2.0 && ds <= 2.0 && violations == 0,
        format!(
            "oracle any_colour {:.1} any_shape {:.1} on {} views; uniform speaker any_colour {:.2} vs {expect_colour:.2}, any_shape {:.2} vs {expect_shape:.2}; {violations} dominance violations in {batches} batches",
            oracle.any_colour,
            oracle.any_shape,
            oracle.samples,
            random.any_colour,
            random.any_shape
        ),
    )
}

// ---------------------------------------------------------------- 9

fn impossible_success_config(variant: Variant) -> ether_core::runner::RunConfig {
    let budget = 10_000;
    let mut cfg = small_config(variant, budget);
    cfg.env.success_impossible = true;
    cfg.trainer.n_actors = 8;
    cfg.trainer.learn_every = 64;
    cfg.eval.interval = 2_500;
    cfg
}

fn higher_failure_mode() -> Outcome {
    let start = Instant::now();
    let cfg = impossible_success_config(Variant::HigherPlus);
    let mut sink = MemorySink::default();
    let h = run_training(Variant::HigherPlus, &cfg, 9, &mut sink).unwrap();
    let sup_ever = sink.values("d_sup_train").iter().chain(sink.values("d_sup_val").iter()).any(|&(_, v)| v != 0.0);
    let higher_ok = h.env_steps == 10_000 && h.successes == 0 && h.sup_train + h.sup_val == 0 && !sup_ever && !h.higher_gate_ever_open;

    let cfg = impossible_success_config(Variant::Ether);
    let mut sink = MemorySink::default();
    let e = run_training(Variant::Ether, &cfg, 9, &mut sink).unwrap();
    let d_rg: Vec<f64> = sink.values("d_rg").iter().map(|&(_, v)| v).collect();
    let grows = d_rg.len() >= 2 && d_rg.windows(2).all(|w| w[1] > w[0]);
    let val = e.rg_val_accuracy.unwrap_or(0.0);
    let ether_ok = e.successes == 0 && grows && val > 0.0;
    check(
        higher_ok && ether_ok,
        format!(
            "HIGhER: {} episodes, {} successes, D_sup {} entries, gate ever open {}; ETHER: D_RG sizes {d_rg:?}, RG validation accuracy {val:.3}; {:.0}s",
            h.episodes,
            h.successes,
            h.sup_train + h.sup_val,
            h.higher_gate_ever_open,
            start.elapsed().as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 10

/// `Σ_{i<m} γ^i r_{t+i} + [no done in the window] γ^m Q_tgt(s_{t+m}, argmax Q_on(s_{t+m}))`
/// with `m` the horizon cut by the segment end or the first done.
fn brute_force_target(rewards: &[f32], dones: &[bool], len: usize, qo: &[Vec<f32>], qt: &[Vec<f32>], gamma: f64, n: usize, t: usize) -> f64 {
    let mut m = n.min(len - t);
    if let Some(d) = (t..t + m).find(|&j| dones[j]) {
        m = d - t + 1;
        return (0..m).map(|i| gamma.powi(i as i32) * rewards[t + i] as f64).sum();
    }
    let j = t + m;
    let mut best = 0;
    for a in 1..qo[j].len() {
        if qo[j][a] > qo[j][best] {
            best = a;
        }
    }
    (0..m).map(|i| gamma.powi(i as i32) * rewards[t + i] as f64).sum::<f64>() + gamma.powi(m as i32) * qt[j][best] as f64
}

fn tiny_batch(cfg: &ether_core::runner::RunConfig) -> SampledBatch<Observation> {
    let mut env = GridWorld::new(cfg.env.clone(), Vocabulary::default()).unwrap();
    let (o0, goal) = env.reset(3).unwrap();
    let o1 = env.step(Action::from_index(0).unwrap()).unwrap().observation;
    let o2 = env.step(Action::from_index(1).unwrap()).unwrap().observation;
    let traj = Trajectory::new(goal, vec![o0, o1, o2], vec![0, 1], vec![0.0, 1.0], true).unwrap();
    let mut buf = PrioritizedBuffer::new(cfg.replay).unwrap();
    buf.store_episode(&traj).unwrap();
    buf.sample_batch(1, &mut StdRng::seed_from_u64(0)).unwrap()
}

fn n_step_and_sync() -> Outcome {
    let defaults = TrainerConfig::default();
    let (gamma, n) = (defaults.gamma, defaults.n_step);
    let mut rng = StdRng::seed_from_u64(1010);
    let mut worst: f64 = 0.0;
    let mut truncated = 0;
    for _ in 0..100 {
        let len = rng.random_range(1..=UNROLL);
        let rewards: Vec<f32> = (0..len).map(|_| if rng.random_bool(0.2) { 1.0 } else { 0.0 }).collect();
        // an episode ends only at its last transition
        let ends = rng.random_bool(0.5);
        truncated += usize::from(ends);
        let dones: Vec<bool> = (0..len).map(|t| ends && t + 1 == len).collect();
        let q = |rng: &mut StdRng| (0..=len).map(|_| (0..Action::COUNT).map(|_| rng.random_range(-3.0..3.0f32)).collect()).collect::<Vec<Vec<f32>>>();
        let (qo, qt) = (q(&mut rng), q(&mut rng));
        let fast = n_step_targets(&rewards, &dones, len, &qo, &qt, gamma, n).unwrap();
        for t in 0..len {
            worst = worst.max((fast[t] - brute_force_target(&rewards, &dones, len, &qo, &qt, gamma, n, t)).abs());
        }
    }

    let cfg = small_config(Variant::R2d2, 64);
    let interval = cfg.trainer.target_update_interval;
    let store = Arc::new(ParameterStore::with_seed(DType::F32, 10));
    let mut learner = Learner::new(cfg.trainer, Observation::CHANNELS, store.clone()).unwrap();
    let batch = tiny_batch(&cfg);
    let snapshot = |s: &ParameterStore| -> Vec<Vec<f32>> {
        s.names().iter().map(|k| s.get(k).unwrap().as_tensor().flatten_all().unwrap().to_vec1().unwrap()).collect()
    };
    let initial = snapshot(learner.target());
    let mut sync_updates = Vec::new();
    let mut stale_before = false;
    let mut equal_after = false;
    for u in 1..=interval + 1 {
        if learner.update(&batch).unwrap().synced {
            sync_updates.push(u);
        }
        if u == interval - 1 {
            stale_before = snapshot(learner.target()) == initial;
        }
        if u == interval {
            equal_after = snapshot(learner.target()) == snapshot(&store);
        }
    }
    check(
        worst < 1e-6 && sync_updates == vec![interval] && interval == 2500 && stale_before && equal_after,
        format!(
            "max |vectorised − brute force| {worst:.1e} over 100 segments ({truncated} ending in done); target syncs at updates {sync_updates:?} of {}; target unchanged before, equal to online after",
            interval + 1
        ),
    )
}

// ---------------------------------------------------------------- 11

fn mean_success(variant: Variant) -> f64 {
    let mut total = 0.0;
    for seed in 0..3 {
        let mut cfg = small_config(variant, 50_000);
        cfg.env.room_size = 6;
        cfg.trainer.n_actors = 8;
        cfg.trainer.learn_every = 32;
        cfg.eval.n_envs = 256;
        let s = run_training(variant, &cfg, seed, &mut MemorySink::default()).unwrap();
        total += s.success_ratio.unwrap_or(0.0);
    }
    total / 3.0
}

fn long_ordering() -> Outcome {
    let ether = mean_success(Variant::Ether);
    let r2d2 = mean_success(Variant::R2d2);
    check(ether >= r2d2, format!("mean success ratio ETHER {ether:.2} vs R2D2 {r2d2:.2} over 3 seeds"))
}

// ----------------------------------------------------------------

type Criterion = (u32, &'static str, fn() -> Outcome, bool);

const CRITERIA: [Criterion; 11] = [
    (1, "gradient suite", gradient_suite, false),
    (2, "lazy-loss closed form", lazy_closed_form, false),
    (3, "relabelling oracle", relabelling_oracle, false),
    (4, "straight-through channel", stgs_channel, false),
    (5, "replay statistics", replay_statistics, false),
    (6, "referential-game learnability", rg_learnability, false),
    (7, "co-occurrence ranking", co_occurrence, false),
    (8, "alignment metric sanity", alignment_sanity, false),
    (9, "learned-generator failure mode", higher_failure_mode, false),
    (10, "n-step targets and target sync", n_step_and_sync, false),
    (11, "long-run ordering (optional)", long_ordering, true),
];

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        for (n, name, _, ignored) in CRITERIA {
            println!("criterion_{n:02}_{}: test{}", name.replace([' ', '-', '(', ')'], "_"), if ignored { " (ignored)" } else { "" });
        }
        return;
    }
    let only_ignored = args.iter().any(|a| a == "--ignored");
    let with_ignored = only_ignored || args.iter().any(|a| a == "--include-ignored");
    // positional arguments filter by number or by name fragment, as libtest does
    let filters: Vec<&String> = args.iter().filter(|a| !a.starts_with('-')).collect();
    let selected = |n: u32, name: &str| {
        filters.is_empty() || filters.iter().any(|f| f.parse::<u32>().ok() == Some(n) || name.contains(f.as_str()))
    };
    // panics are reported as failures on their criterion's line
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (n, name, run, ignored) in CRITERIA {
        if !selected(n, name) {
            continue;
        }
        if (ignored && !with_ignored) || (!ignored && only_ignored) {
            println!("SKIP criterion {n:>2} ({name}): run with --include-ignored");
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {n:>2} ({name}, {secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {n:>2} ({name}, {secs:.1}s): {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion/criteria failed");
        std::process::exit(1);
    }
}
