use super::checkpoint::{load_checkpoint, save_checkpoint, select};
use super::config::RunConfig;
use super::log::{read_metric_log, MetricLog};
use super::plot::render_svg;
use crate::error::{EtherError, Result};
use crate::gridworld::Observation;
use crate::metrics::{success_ratio, topographic_similarity, RandomPolicy};
use crate::nn::params::ParameterStore;
use crate::refgame::{sample_games, symbolic_stimuli, GameLearner, RefGame, Stimulus, StimulusEncoder};
use crate::seeding::derive_seed;
use crate::trainer::{run_training, GreedyQPolicy, QNetwork, TrainingSink, TrainingSummary, AGENT_PREFIXES};
use candle_core::DType;
use rand::rngs::StdRng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const SUMMARY_FILE: &str = "summary.json";

/// Streams rows to a metric log and checkpoints to the run directory.
pub struct FileSink {
    log: MetricLog,
    seed: u64,
    checkpoints: PathBuf,
}

impl FileSink {
    pub fn new(run_dir: &Path, seed: u64) -> Result<Self> {
        Ok(Self {
            log: MetricLog::open(run_dir.join(METRICS_FILE))?,
            seed,
            checkpoints: run_dir.join(CHECKPOINT_DIR),
        })
    }
}

impl TrainingSink for FileSink {
    fn record(&mut self, step: u64, name: &str, value: f64) -> Result<()> {
        self.log.record(step, name, value, self.seed)
    }

    fn checkpoint(&mut self, step: u64, store: &ParameterStore) -> Result<()> {
        save_checkpoint(&self.checkpoints, step, store)?;
        Ok(())
    }
}

/// Create `dir` for a new run; an existing run there is never overwritten.
fn fresh_run_dir(dir: &Path, cfg: &RunConfig) -> Result<()> {
    if dir.join(CONFIG_FILE).exists() {
        return Err(EtherError::Usage(format!("{} already holds a run", dir.display())));
    }
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(CONFIG_FILE), cfg.to_toml()?)?;
    Ok(())
}

/// Train `cfg.variant` with `cfg.seed` into `dir`: config copy, metric log,
/// checkpoints at every evaluation and a summary.
pub fn train(cfg: &RunConfig, dir: &Path) -> Result<TrainingSummary> {
    cfg.validate()?;
    fresh_run_dir(dir, cfg)?;
    let mut sink = FileSink::new(dir, cfg.seed)?;
    let summary = run_training(cfg.variant, cfg, cfg.seed, &mut sink)?;
    std::fs::write(dir.join(SUMMARY_FILE), serde_json::to_vec_pretty(&SummaryFile::from(&summary))?)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryFile {
    pub env_steps: u64,
    pub episodes: u64,
    pub successes: u64,
    pub updates: u64,
    pub relabelled: u64,
    pub success_ratio: Option<f64>,
    pub rg_val_accuracy: Option<f64>,
}

impl From<&TrainingSummary> for SummaryFile {
    fn from(s: &TrainingSummary) -> Self {
        Self {
            env_steps: s.env_steps,
            episodes: s.episodes,
            successes: s.successes,
            updates: s.updates,
            relabelled: s.relabelled,
            success_ratio: s.success_ratio,
            rg_val_accuracy: s.rg_val_accuracy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub step: u64,
    pub n_envs: usize,
    /// Percent of greedy episodes that succeed.
    pub success_ratio: f64,
    /// The uniform-random policy on the same episodes.
    pub random_baseline: f64,
}

/// Greedy evaluation of a run's checkpoint (`None`: the latest). The run's
/// own config is used, with `overrides` applied on top.
pub fn eval(run_dir: &Path, step: Option<u64>, overrides: &[String]) -> Result<EvalReport> {
    let cfg = RunConfig::load(Some(&run_dir.join(CONFIG_FILE)), overrides)?;
    let ckpt = load_checkpoint(&run_dir.join(CHECKPOINT_DIR), step)?;
    let store = ParameterStore::new(DType::F32);
    let net = QNetwork::new(cfg.trainer.network, Observation::CHANNELS, store.var_builder())?;
    store
        .load_snapshot(&select(&ckpt.snapshot, &AGENT_PREFIXES))
        .map_err(|e| e.context(format!("restoring step {}", ckpt.step)))?;
    let seed = derive_seed(cfg.seed, "eval");
    let n = cfg.eval.n_envs;
    let report = EvalReport {
        step: ckpt.step,
        n_envs: n,
        success_ratio: success_ratio(&mut GreedyQPolicy::new(&net), &cfg.env, n, seed)?,
        random_baseline: success_ratio(&mut RandomPolicy::new(derive_seed(seed, "random")), &cfg.env, n, seed)?,
    };
    std::fs::write(run_dir.join(format!("eval_step_{}.json", ckpt.step)), serde_json::to_vec_pretty(&report)?)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefGameReport {
    pub updates: usize,
    pub stimuli: usize,
    /// Greedy accuracy over `eval_games` games at the end.
    pub accuracy: f64,
    pub mean_length: f64,
    pub topographic_similarity: Option<f64>,
}

/// Train a speaker and listener on every one-hot attribute stimulus; log
/// accuracy, losses and topographic similarity to `dir`.
pub fn refgame(cfg: &RunConfig, dir: &Path) -> Result<RefGameReport> {
    cfg.validate()?;
    fresh_run_dir(dir, cfg)?;
    let mut log = MetricLog::open(dir.join(METRICS_FILE))?;
    let rg = cfg.refgame;
    let pool = symbolic_stimuli(rg.attributes, rg.values);
    let store = ParameterStore::with_seed(DType::F32, derive_seed(cfg.seed, "nets"));
    let vb = store.var_builder();
    let encoder = StimulusEncoder::symbolic(rg.attributes * rg.values, vb.pp("encoder"))?;
    let game = RefGame::new(cfg.game, encoder, vb.pp("speaker"), vb.pp("listener"))?;
    let mut learner = GameLearner::new(game, store.trainable(&["encoder", "speaker", "listener"]), store.trainable(&["speaker"]))?;
    let mut rng = StdRng::seed_from_u64(derive_seed(cfg.seed, "rg"));
    let mut eval_rng = StdRng::seed_from_u64(derive_seed(cfg.seed, "rg_eval"));
    let meanings: Vec<Vec<usize>> = (0..pool.len())
        .map(|mut code| {
            (0..rg.attributes)
                .map(|_| {
                    let v = code % rg.values;
                    code /= rg.values;
                    v
                })
                .collect()
        })
        .collect();
    let inputs: Vec<Vec<f32>> = pool.iter().map(|s| s.input()).collect::<Result<_>>()?;
    let mut last = None;
    for u in 1..=rg.updates {
        let batch = sample_games(&pool, cfg.game.batch_size, &cfg.game, None, &mut rng)?;
        let r = learner.play_game_step(&batch, &mut rng, |_| Ok(None))?;
        if u % rg.log_every == 0 || u == rg.updates {
            let step = u as u64;
            let accuracy = learner.game().evaluate(&pool, rg.eval_games, &mut eval_rng)?;
            let messages = learner.game().describe(&inputs)?;
            let rho = topographic_similarity(&meanings, &messages);
            log.record(step, "rg/train_accuracy", r.accuracy, cfg.seed)?;
            log.record(step, "rg/accuracy", accuracy, cfg.seed)?;
            log.record(step, "rg/lazy", r.lazy, cfg.seed)?;
            log.record(step, "rg/impatient", r.impatient, cfg.seed)?;
            log.record(step, "rg/mean_length", r.mean_length, cfg.seed)?;
            if let Some(rho) = rho {
                log.record(step, "rg/topographic_similarity", rho, cfg.seed)?;
            }
            last = Some(RefGameReport {
                updates: u,
                stimuli: pool.len(),
                accuracy,
                mean_length: r.mean_length,
                topographic_similarity: rho,
            });
        }
    }
    let report = last.expect("the final update always logs");
    std::fs::write(dir.join(SUMMARY_FILE), serde_json::to_vec_pretty(&report)?)?;
    save_checkpoint(&dir.join(CHECKPOINT_DIR), rg.updates as u64, &store)?;
    Ok(report)
}

/// Render `log` (a metric log, or a run directory holding one) to an SVG.
/// Returns the written path.
pub fn plot(log: &Path, out: Option<&Path>, names: &[String]) -> Result<PathBuf> {
    let log_path = if log.is_dir() { log.join(METRICS_FILE) } else { log.to_path_buf() };
    let records = read_metric_log(&log_path)?;
    let svg = render_svg(&records, names).map_err(|e| e.context(log_path.display().to_string()))?;
    let out = match out {
        Some(p) if p.is_dir() => p.join("metrics.svg"),
        Some(p) => p.to_path_buf(),
        None => log_path.with_extension("svg"),
    };
    std::fs::write(&out, svg)?;
    Ok(out)
}
