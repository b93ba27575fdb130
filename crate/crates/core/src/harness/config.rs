use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::architect::{Condition, HttpClientConfig, LlmSettings, ShapingConfig};
use crate::curriculum::{CurriculumConfig, CurriculumMode, DifficultyState};
use crate::grid_sim::{GridNetwork, TemplateReward};
use crate::maddpg::TrainerConfig;
use crate::reward_lang::ValidationConfig;

/// Where a condition's per-step reward comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardSource {
    Template,
    Shaped,
}

impl RewardSource {
    pub fn name(self) -> &'static str {
        match self {
            RewardSource::Template => "template",
            RewardSource::Shaped => "shaped",
        }
    }
}

/// Curriculum mode and reward source fixed by each condition.
pub fn condition_axes(condition: Condition) -> (CurriculumMode, RewardSource) {
    match condition {
        Condition::A2 => (CurriculumMode::LlmAdaptive, RewardSource::Template),
        Condition::A7 => (CurriculumMode::LlmAdaptive, RewardSource::Shaped),
        Condition::A8 => (CurriculumMode::Llm, RewardSource::Template),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientKind {
    Mock,
    Http,
    /// Answers from a recorded chat log.
    Replay,
}

impl std::str::FromStr for ClientKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mock" => Ok(ClientKind::Mock),
            "http" => Ok(ClientKind::Http),
            "replay" => Ok(ClientKind::Replay),
            _ => Err(format!("unknown client '{s}' (expected mock, http or replay)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClientConfig {
    pub kind: ClientKind,
    /// Mock only: fraction of deliberately unusable replies.
    pub invalid_rate: f64,
    pub http: HttpClientConfig,
    /// Replay only: chat log to answer from.
    pub replay_path: Option<PathBuf>,
    pub llm: LlmSettings,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            kind: ClientKind::Mock,
            invalid_rate: 0.0,
            http: HttpClientConfig::default(),
            replay_path: None,
            llm: LlmSettings::default(),
        }
    }
}

/// Named presets for [`ExperimentConfig`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Profile {
    /// 2x2 grid, 20 episodes, small batches.
    Desk,
    /// 4x4 grid, 200 episodes.
    Full,
}

impl std::str::FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "desk" => Ok(Profile::Desk),
            "full" => Ok(Profile::Full),
            _ => Err(format!("unknown profile '{s}' (expected desk or full)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub condition: Condition,
    pub seeds: Vec<u64>,
    pub episodes: usize,
    pub steps_per_episode: u32,
    /// A deterministic evaluation episode runs when `episode % eval_cadence == 0`.
    pub eval_cadence: usize,
    /// Trailing training episodes summarized per seed in reports.
    pub final_window: usize,
    pub grid: GridNetwork,
    pub reward: TemplateReward,
    pub curriculum: CurriculumConfig,
    pub shaping: ShapingConfig,
    pub validation: ValidationConfig,
    pub trainer: TrainerConfig,
    pub client: ClientConfig,
    pub out_dir: PathBuf,
    /// Write the learner's final state to `learner.ckpt` in the run directory.
    pub save_checkpoint: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            condition: Condition::A2,
            seeds: vec![200, 300, 400, 500],
            episodes: 200,
            steps_per_episode: 360,
            eval_cadence: 2,
            final_window: 20,
            grid: GridNetwork::grid(4, 4),
            reward: TemplateReward::default(),
            curriculum: CurriculumConfig { target: FULL_TARGET, ..CurriculumConfig::default() },
            shaping: ShapingConfig::default(),
            validation: ValidationConfig::default(),
            trainer: TrainerConfig::default(),
            client: ClientConfig::default(),
            out_dir: PathBuf::from("runs"),
            save_checkpoint: false,
        }
    }
}

/// Target returns from `maestro calibrate --difficulty 0.5` (10 episodes) on each grid size.
pub const DESK_TARGET: f64 = 102.0;
pub const FULL_TARGET: f64 = 95.0;

/// Learner settings for 2x2 desk runs: small batches and buffer.
pub fn desk_trainer() -> TrainerConfig {
    TrainerConfig { batch_size: 64, buffer_capacity: 50_000, ..TrainerConfig::default() }
}

impl ExperimentConfig {
    pub fn profile(profile: Profile) -> Self {
        match profile {
            Profile::Full => ExperimentConfig::default(),
            Profile::Desk => ExperimentConfig {
                episodes: 20,
                final_window: 5,
                grid: GridNetwork::grid(2, 2),
                curriculum: CurriculumConfig { target: DESK_TARGET, ..CurriculumConfig::default() },
                trainer: desk_trainer(),
                ..ExperimentConfig::default()
            },
        }
    }

    pub fn curriculum_mode(&self) -> CurriculumMode {
        condition_axes(self.condition).0
    }

    pub fn reward_source(&self) -> RewardSource {
        condition_axes(self.condition).1
    }

    pub fn with_condition(&self, condition: Condition) -> Self {
        ExperimentConfig { condition, ..self.clone() }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a TOML file; absent keys take the values of `base`.
    pub fn load(path: &Path, base: &ExperimentConfig) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let overrides: toml::Table = toml::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let mut merged = toml::Table::try_from(base).map_err(|e| HarnessError::Config(e.to_string()))?;
        merge_tables(&mut merged, overrides);
        let cfg: ExperimentConfig =
            merged.try_into().map_err(|e: toml::de::Error| HarnessError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |m: String| Err(HarnessError::Config(m));
        if self.eval_cadence == 0 {
            return fail("eval_cadence must be at least 1".into());
        }
        if self.episodes == 0 || self.steps_per_episode == 0 {
            return fail("episodes and steps_per_episode must be positive".into());
        }
        if self.final_window < 2 || self.final_window > self.episodes {
            return fail(format!("final_window must lie in 2..={}", self.episodes));
        }
        if self.seeds.is_empty() || self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return fail("seeds must be non-empty and distinct".into());
        }
        if !(0.0..=1.0).contains(&self.client.invalid_rate) {
            return fail("client.invalid_rate must lie in [0, 1]".into());
        }
        if self.client.kind == ClientKind::Replay && self.client.replay_path.is_none() {
            return fail("client.replay_path is required for the replay client".into());
        }
        self.grid.validate()?;
        self.trainer.validate()?;
        DifficultyState::new(self.curriculum)?;
        Ok(())
    }

    /// Settings shared by every seed of this condition, with the condition
    /// replaced by the axes it selects. Seeds and output paths are excluded.
    pub fn manifest(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        let obj = v.as_object_mut().expect("config is an object");
        for k in ["condition", "seeds", "out_dir"] {
            obj.remove(k);
        }
        obj.insert("curriculum_mode".into(), Value::from(self.curriculum_mode().name()));
        obj.insert("reward_source".into(), Value::from(self.reward_source().name()));
        v
    }

    /// Hex SHA-256 of the manifest's compact JSON (keys sorted).
    pub fn config_hash(&self) -> String {
        hex::encode(Sha256::digest(self.manifest().to_string().as_bytes()))
    }
}

/// Axes on which conditions of one ablation may differ.
pub const ALLOWED_AXES: [&str; 2] = ["curriculum_mode", "reward_source"];

/// Dotted paths of manifest leaves that differ between `a` and `b`.
pub fn manifest_diff(a: &Value, b: &Value) -> Vec<String> {
    let mut out = Vec::new();
    diff_into("", a, b, &mut out);
    out
}

fn diff_into(prefix: &str, a: &Value, b: &Value, out: &mut Vec<String>) {
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            let keys: BTreeSet<&String> = x.keys().chain(y.keys()).collect();
            for k in keys {
                let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                match (x.get(k), y.get(k)) {
                    (Some(u), Some(v)) => diff_into(&path, u, v, out),
                    _ => out.push(path),
                }
            }
        }
        _ if a != b => out.push(prefix.to_string()),
        _ => {}
    }
}

fn merge_tables(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
