//! The offline architect: chat clients, prompt rendering, reward-program
//! regeneration, and blending of shaped and environment rewards.
//!
//! Chat calls happen only between episodes; nothing here runs inside a
//! simulator step or action selection.

mod client;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use client::{
    ChatClient, ChatError, ChatLogEntry, ChatRequest, ChatResponse, HttpChatClient, HttpClientConfig, MockChatClient,
    RecordingClient, ReplayClient, API_KEY_ENV, STYLE_FREE, TASK_CONTEXT, TASK_REWARD,
};

use crate::curriculum::{CurriculumEvent, EventKind};
use crate::reward_lang::{gate, FeatureSampler, Stage, ValidatedProgram, ValidationConfig, ValidationReport};

pub const PROMPT_CONTEXT_ADAPTIVE: &str = include_str!("../../prompts/context_adaptive.txt");
pub const PROMPT_CONTEXT_FREE: &str = include_str!("../../prompts/context_free.txt");
pub const PROMPT_REWARD: &str = include_str!("../../prompts/reward.txt");

/// Experimental condition of the ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
pub enum Condition {
    A2,
    A7,
    A8,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::A2, Condition::A7, Condition::A8];

    pub fn name(self) -> &'static str {
        match self {
            Condition::A2 => "A2",
            Condition::A7 => "A7",
            Condition::A8 => "A8",
        }
    }
}

impl std::str::FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "A2" => Ok(Condition::A2),
            "A7" => Ok(Condition::A7),
            "A8" => Ok(Condition::A8),
            _ => Err(format!("unknown condition '{s}' (expected A2, A7 or A8)")),
        }
    }
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Model settings shared by every request.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmSettings {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_ms: u64,
}

impl Default for LlmSettings {
    fn default() -> Self {
        LlmSettings { model: "gpt-4o-mini".into(), temperature: 0.7, max_tokens: 400, timeout_ms: 30_000 }
    }
}

/// Recent training statistics quoted in prompts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub episode: usize,
    pub difficulty: f64,
    pub mean_return: Option<f64>,
    pub mean_queue: Option<f64>,
    pub mean_delay: Option<f64>,
}

/// Splits a template at its `---` line into system and user parts and fills
/// `{difficulty}`, `{episode}`, `{mean_return}`, `{mean_queue}`, `{mean_delay}`
/// and `{attempt}`.
pub fn render_prompt(template: &str, stats: &StatsSummary, attempt: u32, llm: &LlmSettings) -> ChatRequest {
    let (system, user) = template.split_once("\n---\n").unwrap_or((template, ""));
    let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.2}"));
    let user = user
        .replace("{difficulty}", &format!("{:.4}", stats.difficulty))
        .replace("{episode}", &stats.episode.to_string())
        .replace("{mean_return}", &opt(stats.mean_return))
        .replace("{mean_queue}", &opt(stats.mean_queue))
        .replace("{mean_delay}", &opt(stats.mean_delay))
        .replace("{attempt}", &attempt.to_string());
    ChatRequest {
        model: llm.model.clone(),
        system: system.trim_end().to_string(),
        user: user.trim_end().to_string(),
        temperature: llm.temperature,
        max_tokens: llm.max_tokens,
        timeout_ms: llm.timeout_ms,
    }
}

/// Pulls the program out of a response: a ```reward (or any) fenced block,
/// else a `reward:` line, else the whole text.
pub fn extract_program(text: &str) -> String {
    if let Some(start) = text.find("```") {
        let rest = &text[start + 3..];
        let body_start = rest.find('\n').map_or(rest.len(), |i| i + 1);
        let body = &rest[body_start..];
        if let Some(end) = body.find("```") {
            return body[..end].trim().to_string();
        }
    }
    if let Some(line) = text.lines().find_map(|l| l.trim().strip_prefix("reward:")) {
        return line.trim().to_string();
    }
    text.trim().to_string()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationTrigger {
    DifficultyJump,
    EpisodeBudget,
    StagnationEscape,
}

impl GenerationTrigger {
    pub fn name(self) -> &'static str {
        match self {
            GenerationTrigger::DifficultyJump => "difficulty_jump",
            GenerationTrigger::EpisodeBudget => "episode_budget",
            GenerationTrigger::StagnationEscape => "stagnation_escape",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    Env,
    Shaped,
    Fallback,
}

impl RewardMode {
    pub fn name(self) -> &'static str {
        match self {
            RewardMode::Env => "env",
            RewardMode::Shaped => "shaped",
            RewardMode::Fallback => "fallback",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShapingConfig {
    pub scale: f64,
    pub w_min: f64,
    pub w_max: f64,
    pub d_min: f64,
    pub d_max: f64,
    pub jump_threshold: f64,
    pub episode_budget: usize,
    pub max_failures: u32,
    pub llm_clip: f64,
}

impl Default for ShapingConfig {
    fn default() -> Self {
        ShapingConfig {
            scale: 170.0,
            w_min: 0.1,
            w_max: 0.5,
            d_min: 0.3,
            d_max: 1.0,
            jump_threshold: 0.15,
            episode_budget: 20,
            max_failures: 3,
            llm_clip: 1.0,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ShapingError {
    #[error("difficulty {0} outside [{1}, {2}]")]
    DifficultyRange(f64, f64, f64),
    #[error("non-finite reward input: r_env = {r_env}, r_llm = {r_llm}")]
    NonFinite { r_env: f64, r_llm: f64 },
}

#[derive(Clone, Debug)]
pub struct ShapingState {
    pub cfg: ShapingConfig,
    pub active_program: Option<ValidatedProgram>,
    pub consecutive_failures: u32,
    pub d_at_last_gen: f64,
    /// `None` until the first generation attempt.
    pub episode_at_last_gen: Option<usize>,
    pub env_only_fallback: bool,
}

/// Result of one generation attempt.
#[derive(Clone, Debug)]
pub struct GenerationOutcome {
    pub trigger: GenerationTrigger,
    pub success: bool,
    pub source: Option<String>,
    pub report: Option<ValidationReport>,
    pub error: Option<String>,
}

impl ShapingState {
    pub fn new(cfg: ShapingConfig, d: f64) -> Self {
        ShapingState {
            cfg,
            active_program: None,
            consecutive_failures: 0,
            d_at_last_gen: d,
            episode_at_last_gen: None,
            env_only_fallback: false,
        }
    }

    /// First satisfied trigger in the order DifficultyJump, StagnationEscape, EpisodeBudget.
    /// A state that never generated treats the budget as spent.
    pub fn should_regenerate(&self, d: f64, episode: usize, event: &CurriculumEvent) -> Option<GenerationTrigger> {
        if (d - self.d_at_last_gen).abs() >= self.cfg.jump_threshold - 1e-12 {
            return Some(GenerationTrigger::DifficultyJump);
        }
        if event.kind == EventKind::PlateauEscape {
            return Some(GenerationTrigger::StagnationEscape);
        }
        match self.episode_at_last_gen {
            None => Some(GenerationTrigger::EpisodeBudget),
            Some(last) if episode.saturating_sub(last) >= self.cfg.episode_budget => Some(GenerationTrigger::EpisodeBudget),
            _ => None,
        }
    }

    /// Asks the client for a program and gates it. The trigger clears any
    /// fallback; a failure keeps the previous program and bumps the failure
    /// counter, and the third consecutive failure switches to environment-only rewards.
    #[allow(clippy::too_many_arguments)]
    pub fn request_reward_program(
        &mut self,
        trigger: GenerationTrigger,
        client: &dyn ChatClient,
        llm: &LlmSettings,
        stats: &StatsSummary,
        sampler: &mut dyn FeatureSampler,
        validation: &ValidationConfig,
    ) -> GenerationOutcome {
        if self.env_only_fallback {
            self.env_only_fallback = false;
            self.consecutive_failures = 0;
        }
        self.d_at_last_gen = stats.difficulty;
        self.episode_at_last_gen = Some(stats.episode);

        let request = render_prompt(PROMPT_REWARD, stats, 0, llm);
        let mut outcome = GenerationOutcome { trigger, success: false, source: None, report: None, error: None };
        match client.chat(&request) {
            Ok(resp) => {
                let source = extract_program(&resp.text);
                let (report, program) = gate(&source, sampler, validation);
                outcome.source = Some(source);
                outcome.report = Some(report);
                if let Some(p) = program {
                    self.active_program = Some(p);
                    self.consecutive_failures = 0;
                    outcome.success = true;
                    return outcome;
                }
            }
            Err(e) => outcome.error = Some(e.to_string()),
        }
        self.consecutive_failures += 1;
        if self.consecutive_failures >= self.cfg.max_failures {
            self.env_only_fallback = true;
        }
        outcome
    }

    /// `w_min + (d - d_min) / (d_max - d_min) * (w_max - w_min)`
    pub fn weight(&self, d: f64) -> Result<f64, ShapingError> {
        let c = &self.cfg;
        if !(c.d_min..=c.d_max).contains(&d) {
            return Err(ShapingError::DifficultyRange(d, c.d_min, c.d_max));
        }
        Ok(c.w_min + (d - c.d_min) / (c.d_max - c.d_min) * (c.w_max - c.w_min))
    }

    pub fn reward_mode(&self, condition: Condition) -> RewardMode {
        match condition {
            Condition::A2 | Condition::A8 => RewardMode::Env,
            Condition::A7 if self.env_only_fallback || self.active_program.is_none() => RewardMode::Fallback,
            Condition::A7 => RewardMode::Shaped,
        }
    }

    pub fn combine(&self, r_env: f64, r_llm_raw: f64, d: f64, condition: Condition) -> Result<f64, ShapingError> {
        if !r_env.is_finite() || !r_llm_raw.is_finite() {
            return Err(ShapingError::NonFinite { r_env, r_llm: r_llm_raw });
        }
        if self.reward_mode(condition) != RewardMode::Shaped {
            return Ok(r_env);
        }
        let w = self.weight(d)?;
        let r_llm = r_llm_raw.clamp(-self.cfg.llm_clip, self.cfg.llm_clip);
        Ok((1.0 - w) * r_env + w * self.cfg.scale * r_llm)
    }
}

/// Stage that rejected a failed generation; `None` for successes and transport errors.
pub fn failure_stage(outcome: &GenerationOutcome) -> Option<Stage> {
    match (&outcome.report, outcome.success) {
        (_, true) => None,
        (Some(r), false) => Some(r.stage),
        (None, false) => None,
    }
}
