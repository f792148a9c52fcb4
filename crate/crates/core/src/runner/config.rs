use crate::error::{EtherError, Result};
use crate::gridworld::EnvConfig;
use crate::grounding::GroundingConfig;
use crate::refgame::GameConfig;
use crate::replay::ReplayConfig;
use crate::trainer::{EvalConfig, HindsightConfig, TrainerConfig, Variant};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Everything a run needs. Every block rejects unknown keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub variant: Variant,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub env: EnvConfig,
    pub replay: ReplayConfig,
    pub trainer: TrainerConfig,
    pub game: GameConfig,
    pub grounding: GroundingConfig,
    pub hindsight: HindsightConfig,
    pub eval: EvalConfig,
    pub refgame: RefGameRunConfig,
}

/// The standalone referential game on one-hot attribute stimuli.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefGameRunConfig {
    pub attributes: usize,
    pub values: usize,
    pub updates: usize,
    /// Updates between metric rows.
    pub log_every: usize,
    /// Games in each greedy evaluation.
    pub eval_games: usize,
}

impl Default for RefGameRunConfig {
    fn default() -> Self {
        Self {
            attributes: 3,
            values: 4,
            updates: 2000,
            log_every: 100,
            eval_games: 512,
        }
    }
}

impl RefGameRunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.attributes == 0 || self.values < 2 || self.updates == 0 || self.log_every == 0 || self.eval_games == 0 {
            return Err(EtherError::Config(
                "refgame: attributes, updates, log_every and eval_games must be positive and values at least 2".into(),
            ));
        }
        Ok(())
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Ether,
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            env: EnvConfig::default(),
            replay: ReplayConfig::default(),
            trainer: TrainerConfig::default(),
            // the listener predicate needs the no-target outcome
            game: GameConfig {
                descriptive: true,
                ..GameConfig::default()
            },
            grounding: GroundingConfig::default(),
            hindsight: HindsightConfig::default(),
            eval: EvalConfig::default(),
            refgame: RefGameRunConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.replay.validate()?;
        self.trainer.validate()?;
        self.game.validate()?;
        self.grounding.validate()?;
        self.hindsight.validate()?;
        self.eval.validate()?;
        self.refgame.validate()?;
        if !self.env.render_pixels {
            return Err(EtherError::Config("env: render_pixels must be on for pixel-based agents".into()));
        }
        if self.variant.is_ether() && !self.game.descriptive {
            return Err(EtherError::Config(format!(
                "game: variant {} uses the listener as predicate and needs descriptive = true",
                self.variant
            )));
        }
        if self.game.vocab_size != self.trainer.network.vocab_size {
            return Err(EtherError::Config("game.vocab_size and trainer.network.vocab_size differ".into()));
        }
        Ok(())
    }

    /// Parse TOML text over the run defaults, apply `key.path=value`
    /// overrides, then validate. A partial table keeps the run-level default
    /// of every key it omits.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let user: toml::Value = toml::from_str(text).map_err(|e| EtherError::Config(e.to_string()))?;
        let mut root = toml::Value::try_from(RunConfig::default()).map_err(|e| EtherError::Config(e.to_string()))?;
        merge(&mut root, user);
        for o in overrides {
            apply_override(&mut root, o)?;
        }
        let cfg: RunConfig = root.try_into().map_err(|e: toml::de::Error| EtherError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| EtherError::from(e).context(format!("reading {}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| EtherError::Config(e.to_string()))
    }
}

/// Overlay `over` on `base`, table by table.
fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// `a.b.c=value`; the value is read as a TOML literal, or as a bare string
/// when it does not parse as one.
pub fn apply_override(root: &mut toml::Value, pair: &str) -> Result<()> {
    let (key, raw) = pair
        .split_once('=')
        .ok_or_else(|| EtherError::Config(format!("override `{pair}` is not key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(EtherError::Config(format!("override `{pair}` has an empty key segment")));
    }
    let value = match toml::from_str::<toml::Table>(&format!("v = {}", raw.trim())) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| EtherError::Config(format!("override `{key}`: `{part}` is not a table")))?;
        node = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
    }
    node.as_table_mut()
        .ok_or_else(|| EtherError::Config(format!("override `{key}` does not name a table entry")))?
        .insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
