use std::collections::VecDeque;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{ClientKind, ExperimentConfig, RewardSource, ALLOWED_AXES};
use super::{derive_seed, manifest_diff, HarnessError};
use crate::architect::{
    failure_stage, ChatClient, Condition, GenerationTrigger, HttpChatClient, MockChatClient, RecordingClient, ReplayClient,
    RewardMode, ShapingState, StatsSummary,
};
use crate::curriculum::{
    generate_context, template_context, ContextSource, CurriculumEvent, DifficultyState, EventKind, GeneratedContext,
};
use crate::grid_sim::{
    episode_metrics, fixed_time_policy, observation_scale, EpisodeMetrics, GridNetwork, GridSim, StepMetrics, TemplateReward,
    TrafficContext,
};
use crate::maddpg::Maddpg;
use crate::reward_lang::{FeatureMap, FeatureSampler, RecordedSampler, SyntheticSampler};

pub const LOG_SCHEMA: &str = "maestro-episode-log";
pub const LOG_SCHEMA_VERSION: u32 = 1;
pub const EPISODE_LOG: &str = "episodes.csv";
pub const TIMING_LOG: &str = "timing.csv";
const CHAT_LOG: &str = "chat_log.jsonl";
const PROGRAM_LOG: &str = "programs.jsonl";
const CONTEXT_LOG: &str = "contexts.jsonl";
const ERROR_FILE: &str = "error.txt";
/// Recorded simulator states kept for validating reward programs.
const STATE_POOL: usize = 2048;
const STATE_STRIDE: u32 = 12;
/// Episodes averaged into the statistics quoted in prompts.
const PROMPT_WINDOW: usize = 5;

/// One row of `episodes.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub seed: u64,
    pub condition: Condition,
    pub difficulty: f64,
    /// Environment-reward return of the training episode (drives the curriculum).
    pub train_return: f64,
    /// Return under the rewards the learner was actually given.
    pub shaped_return: f64,
    pub eval_return: Option<f64>,
    pub throughput: usize,
    pub mean_travel_time: Option<f64>,
    pub mean_delay: Option<f64>,
    pub mean_wait: Option<f64>,
    pub mean_queue: f64,
    pub reward_mode: RewardMode,
    /// Event produced by this episode's return.
    pub curriculum_event: EventKind,
    /// Reward regeneration attempted before this episode, if any.
    pub regen_trigger: Option<GenerationTrigger>,
    pub regen_success: Option<bool>,
    pub context_source: ContextSource,
    /// Steps where the active program returned a non-finite value (scored as 0).
    pub nonfinite_llm: usize,
    /// Kept out of the main log so reruns stay byte-identical; see `timing.csv`.
    #[serde(skip)]
    pub wall_clock_s: f64,
}

pub struct SeedRun {
    pub condition: Condition,
    pub seed: u64,
    pub dir: PathBuf,
    pub records: Vec<EpisodeRecord>,
}

pub fn run_dir(out: &Path, condition: Condition, seed: u64) -> PathBuf {
    out.join(condition.name()).join(format!("seed_{seed}"))
}

/// The configured chat client for one run, without logging.
pub fn build_client(cfg: &ExperimentConfig, seed: u64) -> Result<Box<dyn ChatClient>, HarnessError> {
    Ok(match cfg.client.kind {
        ClientKind::Mock => {
            Box::new(MockChatClient::with_invalid_rate(derive_seed(seed, "mock", 0), cfg.client.invalid_rate))
        }
        ClientKind::Http => Box::new(HttpChatClient::from_env(cfg.client.http.clone())?),
        ClientKind::Replay => {
            let path = cfg.client.replay_path.as_ref().ok_or_else(|| HarnessError::Config("replay_path not set".into()))?;
            Box::new(ReplayClient::load(path)?)
        }
    })
}

/// Trains one seed under `cfg`, writing logs to its run directory. A failure
/// leaves `error.txt` in that directory.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedRun, HarnessError> {
    let dir = run_dir(&cfg.out_dir, cfg.condition, seed);
    let result = (|| {
        reset_dir(&dir)?;
        let client = RecordingClient::new(build_client(cfg, seed)?, &dir.join(CHAT_LOG))?;
        run_seed_with(cfg, seed, &client, &dir)
    })();
    match result {
        Ok(records) => Ok(SeedRun { condition: cfg.condition, seed, dir, records }),
        Err(e) => {
            log::error!("{} seed {seed}: {e}", cfg.condition);
            if fs::create_dir_all(&dir).is_ok() {
                let _ = fs::write(dir.join(ERROR_FILE), format!("condition {} seed {seed}\n{e}\n", cfg.condition));
            }
            Err(e)
        }
    }
}

fn reset_dir(dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    for name in [EPISODE_LOG, TIMING_LOG, CHAT_LOG, PROGRAM_LOG, CONTEXT_LOG, ERROR_FILE, "config.json", "learner.ckpt"] {
        let p = dir.join(name);
        if p.exists() {
            fs::remove_file(&p).map_err(|e| HarnessError::io(&p, e))?;
        }
    }
    Ok(())
}

struct JsonLines {
    path: PathBuf,
    w: BufWriter<File>,
}

impl JsonLines {
    fn create(path: PathBuf, schema: &str) -> Result<Self, HarnessError> {
        let f = File::create(&path).map_err(|e| HarnessError::io(&path, e))?;
        let mut j = JsonLines { path, w: BufWriter::new(f) };
        j.write(&json!({ "schema": schema, "version": LOG_SCHEMA_VERSION }))?;
        Ok(j)
    }

    fn write(&mut self, v: &serde_json::Value) -> Result<(), HarnessError> {
        writeln!(self.w, "{v}").map_err(|e| HarnessError::io(&self.path, e))
    }

    fn finish(mut self) -> Result<(), HarnessError> {
        self.w.flush().map_err(|e| HarnessError::io(&self.path, e))
    }
}

fn csv_with_header(path: &Path, schema: &str) -> Result<csv::Writer<File>, HarnessError> {
    let mut f = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    writeln!(f, "# {schema} v{LOG_SCHEMA_VERSION}").map_err(|e| HarnessError::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> HarnessError + '_ {
    move |e| HarnessError::Log { path: path.to_path_buf(), detail: e.to_string() }
}

/// Per-episode numbers quoted back to the architect.
struct Recent {
    returns: VecDeque<f64>,
    queues: VecDeque<f64>,
    delays: VecDeque<f64>,
}

impl Recent {
    fn push(&mut self, ret: f64, m: &EpisodeMetrics) {
        for (q, v) in [(&mut self.returns, Some(ret)), (&mut self.queues, Some(m.mean_queue)), (&mut self.delays, m.mean_delay)] {
            if let Some(v) = v {
                q.push_back(v);
                if q.len() > PROMPT_WINDOW {
                    q.pop_front();
                }
            }
        }
    }

    fn summary(&self, episode: usize, d: f64) -> StatsSummary {
        let avg = |q: &VecDeque<f64>| (!q.is_empty()).then(|| q.iter().sum::<f64>() / q.len() as f64);
        StatsSummary {
            episode,
            difficulty: d,
            mean_return: avg(&self.returns),
            mean_queue: avg(&self.queues),
            mean_delay: avg(&self.delays),
        }
    }
}

/// The training loop for one seed with an explicit client, logging into `dir`.
pub fn run_seed_with(
    cfg: &ExperimentConfig,
    seed: u64,
    client: &dyn ChatClient,
    dir: &Path,
) -> Result<Vec<EpisodeRecord>, HarnessError> {
    cfg.validate()?;
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let config_path = dir.join("config.json");
    let config_doc = json!({
        "condition": cfg.condition,
        "seed": seed,
        "config_hash": cfg.config_hash(),
        "manifest": cfg.manifest(),
    });
    fs::write(&config_path, serde_json::to_string_pretty(&config_doc).unwrap() + "\n")
        .map_err(|e| HarnessError::io(&config_path, e))?;

    let log_path = dir.join(EPISODE_LOG);
    let timing_path = dir.join(TIMING_LOG);
    let mut episodes_csv = csv_with_header(&log_path, LOG_SCHEMA)?;
    let mut timing_csv = csv_with_header(&timing_path, "maestro-timing-log")?;
    timing_csv.write_record(["episode", "wall_clock_s"]).map_err(csv_err(&timing_path))?;
    let mut programs = JsonLines::create(dir.join(PROGRAM_LOG), "maestro-programs")?;
    let mut contexts = JsonLines::create(dir.join(CONTEXT_LOG), "maestro-contexts")?;

    let condition = cfg.condition;
    let shaped = cfg.reward_source() == RewardSource::Shaped;
    let mut sim = GridSim::new(cfg.grid.clone(), cfg.steps_per_episode)?;
    let agents = sim.num_agents();
    let mut learner =
        Maddpg::new(cfg.trainer.clone(), agents, sim.observation_dim(), observation_scale(&cfg.grid), derive_seed(seed, "learner", 0))?;
    let mut difficulty = DifficultyState::new(cfg.curriculum)?;
    let mut shaping = ShapingState::new(cfg.shaping, difficulty.d);
    let mut recent = Recent { returns: VecDeque::new(), queues: VecDeque::new(), delays: VecDeque::new() };
    let mut states: Vec<FeatureMap> = Vec::new();
    let mut state_cursor = 0usize;
    let mut event = CurriculumEvent { kind: EventKind::None, d_before: difficulty.d, d_after: difficulty.d, episode: 0 };
    let mut context: Option<GeneratedContext> = None;
    let mut records = Vec::with_capacity(cfg.episodes);
    let mut step_records: Vec<StepMetrics> = Vec::with_capacity(cfg.steps_per_episode as usize);

    for ep in 0..cfg.episodes {
        let started = Instant::now();
        let d = difficulty.d;
        let stats = recent.summary(ep, d);

        if context.is_none() || event.kind != EventKind::None {
            let g = generate_context(d, cfg.curriculum_mode(), &stats, client, &cfg.client.llm, derive_seed(seed, "context", ep as u64))?;
            contexts.write(&json!({
                "episode": ep,
                "difficulty": d,
                "source": g.source,
                "attempts": g.attempts,
                "warnings": g.warnings,
                "context": g.context,
            }))?;
            context = Some(g);
        }
        let generated = context.as_ref().expect("context generated above");

        let (mut regen_trigger, mut regen_success) = (None, None);
        if shaped {
            if let Some(trigger) = shaping.should_regenerate(d, ep, &event) {
                let rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "sampler", ep as u64));
                let mut sampler: Box<dyn FeatureSampler> = if states.is_empty() {
                    Box::new(SyntheticSampler::new(rng))
                } else {
                    Box::new(RecordedSampler::new(states.clone(), rng))
                };
                let outcome = shaping.request_reward_program(trigger, client, &cfg.client.llm, &stats, sampler.as_mut(), &cfg.validation);
                programs.write(&json!({
                    "episode": ep,
                    "difficulty": d,
                    "trigger": trigger,
                    "success": outcome.success,
                    "source": outcome.source,
                    "failed_stage": failure_stage(&outcome),
                    "detail": outcome.report.as_ref().map(|r| r.detail.clone()),
                    "error": outcome.error,
                    "env_only_fallback": shaping.env_only_fallback,
                }))?;
                regen_trigger = Some(trigger);
                regen_success = Some(outcome.success);
            }
        }

        let reward_mode = shaping.reward_mode(condition);
        let program = if reward_mode == RewardMode::Shaped { shaping.active_program.as_ref() } else { None };
        learner.begin_episode(ep);
        let mut obs = sim.reset(&generated.context, derive_seed(seed, "sim-train", ep as u64))?;
        let (mut train_return, mut shaped_return, mut nonfinite) = (0.0, 0.0, 0usize);
        step_records.clear();
        loop {
            let t = sim.current_step();
            let actions = learner.act(&obs, true)?;
            let out = sim.step(&actions)?;
            let mut rewards = Vec::with_capacity(agents);
            let mut env_sum = 0.0;
            for s in &out.stats {
                let r_env = cfg.reward.env_reward(s);
                let r_llm = match program {
                    Some(p) => {
                        let v = p.evaluate(&FeatureMap::from(s));
                        if v.is_finite() {
                            v
                        } else {
                            nonfinite += 1;
                            0.0
                        }
                    }
                    None => 0.0,
                };
                env_sum += r_env;
                rewards.push(shaping.combine(r_env, r_llm, d, condition)?);
            }
            train_return += env_sum / agents as f64;
            shaped_return += rewards.iter().sum::<f64>() / agents as f64;
            if t % STATE_STRIDE == 0 {
                let f = FeatureMap::from(&out.stats[(t / STATE_STRIDE) as usize % agents]);
                if states.len() < STATE_POOL {
                    states.push(f);
                } else {
                    states[state_cursor] = f;
                }
                state_cursor = (state_cursor + 1) % STATE_POOL;
            }
            learner.observe(&obs, &actions, &rewards, &out.observations, out.done)?;
            step_records.push(out.metrics);
            obs = out.observations;
            if out.done {
                break;
            }
        }
        let metrics = episode_metrics(&step_records)?;

        let eval_return = if ep % cfg.eval_cadence == 0 {
            Some(eval_learner(&mut sim, &mut learner, &generated.context, derive_seed(seed, "sim-eval", ep as u64), &cfg.reward)?)
        } else {
            None
        };

        recent.push(train_return, &metrics);
        event = difficulty.update_difficulty(train_return)?;
        let record = EpisodeRecord {
            episode: ep,
            seed,
            condition,
            difficulty: d,
            train_return,
            shaped_return,
            eval_return,
            throughput: metrics.throughput_total,
            mean_travel_time: metrics.mean_travel_time,
            mean_delay: metrics.mean_delay,
            mean_wait: metrics.mean_wait,
            mean_queue: metrics.mean_queue,
            reward_mode,
            curriculum_event: event.kind,
            regen_trigger,
            regen_success,
            context_source: generated.source,
            nonfinite_llm: nonfinite,
            wall_clock_s: started.elapsed().as_secs_f64(),
        };
        episodes_csv.serialize(&record).map_err(csv_err(&log_path))?;
        timing_csv
            .write_record([ep.to_string(), format!("{:.3}", record.wall_clock_s)])
            .map_err(csv_err(&timing_path))?;
        log::info!(
            "{condition} seed {seed} ep {ep}: d {d:.3} return {train_return:.2} {} {}",
            reward_mode.name(),
            event.kind.name()
        );
        records.push(record);
    }

    episodes_csv.flush().map_err(|e| HarnessError::io(&log_path, e))?;
    timing_csv.flush().map_err(|e| HarnessError::io(&timing_path, e))?;
    programs.finish()?;
    contexts.finish()?;
    if cfg.save_checkpoint {
        learner.save_checkpoint(&dir.join("learner.ckpt"))?;
    }
    Ok(records)
}

/// Greedy rollout of the learner's actors; returns the environment return.
fn eval_learner(
    sim: &mut GridSim,
    learner: &mut Maddpg,
    context: &TrafficContext,
    seed: u64,
    reward: &TemplateReward,
) -> Result<f64, HarnessError> {
    let agents = sim.num_agents() as f64;
    let mut obs = sim.reset(context, seed)?;
    let mut ret = 0.0;
    loop {
        let actions = learner.act(&obs, false)?;
        let out = sim.step(&actions)?;
        ret += out.stats.iter().map(|s| reward.env_reward(s)).sum::<f64>() / agents;
        obs = out.observations;
        if out.done {
            return Ok(ret);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PolicyKind {
    FixedTime(u32),
    /// Uniform random phases from a stream seeded by the episode seed.
    Random,
}

/// Environment return of one episode under a scripted policy.
pub fn evaluate_policy(
    policy: PolicyKind,
    network: &GridNetwork,
    reward: &TemplateReward,
    context: &TrafficContext,
    steps: u32,
    seed: u64,
) -> Result<f64, HarnessError> {
    let mut sim = GridSim::new(network.clone(), steps)?;
    let agents = sim.num_agents();
    sim.reset(context, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let fixed = match policy {
        PolicyKind::FixedTime(p) => Some(fixed_time_policy(p)),
        PolicyKind::Random => None,
    };
    let mut ret = 0.0;
    for t in 0..steps {
        let actions = match &fixed {
            Some(f) => f.actions(t, agents),
            None => (0..agents).map(|_| rng.random_range(0..4)).collect(),
        };
        let out = sim.step(&actions)?;
        ret += out.stats.iter().map(|s| reward.env_reward(s)).sum::<f64>() / agents as f64;
    }
    Ok(ret)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Calibration {
    pub difficulty: f64,
    pub episodes: usize,
    pub fixed_time_mean: f64,
    pub random_mean: f64,
    pub midpoint: f64,
    /// The midpoint when positive. The curriculum thresholds are multiples of
    /// the target and invert below zero, so a non-positive midpoint falls back
    /// to the random-policy mean.
    pub suggested_target: f64,
}

/// Mean returns of fixed-time (period 10) and random control on template
/// contexts at difficulty `d`, and a target return derived from them.
pub fn calibrate(cfg: &ExperimentConfig, d: f64, seeds: &[u64]) -> Result<Calibration, HarnessError> {
    if seeds.is_empty() {
        return Err(HarnessError::Config("calibration needs at least one seed".into()));
    }
    let mut sums = [0.0, 0.0];
    for &s in seeds {
        let ctx = template_context(d, derive_seed(s, "context", 0));
        let sim_seed = derive_seed(s, "sim-train", 0);
        for (i, p) in [PolicyKind::FixedTime(10), PolicyKind::Random].into_iter().enumerate() {
            sums[i] += evaluate_policy(p, &cfg.grid, &cfg.reward, &ctx, cfg.steps_per_episode, sim_seed)?;
        }
    }
    let n = seeds.len() as f64;
    let (fixed_time_mean, random_mean) = (sums[0] / n, sums[1] / n);
    let midpoint = 0.5 * (fixed_time_mean + random_mean);
    Ok(Calibration {
        difficulty: d,
        episodes: seeds.len(),
        fixed_time_mean,
        random_mean,
        midpoint,
        suggested_target: if midpoint > 0.0 { midpoint } else { random_mean },
    })
}

/// Writes `manifest.json` for an ablation: per-condition axes, config hashes and seeds.
pub fn write_manifest(path: &Path, configs: &[ExperimentConfig]) -> Result<(), HarnessError> {
    let entries: Vec<_> = configs
        .iter()
        .map(|c| {
            json!({
                "condition": c.condition,
                "curriculum_mode": c.curriculum_mode(),
                "reward_source": c.reward_source(),
                "config_hash": c.config_hash(),
                "seeds": c.seeds,
                "manifest": c.manifest(),
            })
        })
        .collect();
    let doc = json!({ "schema": "maestro-ablation-manifest", "version": LOG_SCHEMA_VERSION, "conditions": entries });
    fs::write(path, serde_json::to_string_pretty(&doc).unwrap() + "\n").map_err(|e| HarnessError::io(path, e))
}

pub struct AblationOutcome {
    pub manifest: PathBuf,
    /// One entry per (condition, seed), in config then seed order.
    pub runs: Vec<(Condition, u64, Result<PathBuf, String>)>,
}

impl AblationOutcome {
    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| r.2.is_err()).count()
    }
}

/// Runs every (condition, seed) pair into `out`. Refuses to start when any two
/// configs differ outside [`ALLOWED_AXES`], use different seeds, or repeat a condition.
pub fn run_ablation(configs: &[ExperimentConfig], out: &Path) -> Result<AblationOutcome, HarnessError> {
    if configs.is_empty() {
        return Err(HarnessError::Config("ablation needs at least one config".into()));
    }
    for (i, a) in configs.iter().enumerate() {
        a.validate()?;
        for b in &configs[i + 1..] {
            let mut fields: Vec<String> = manifest_diff(&a.manifest(), &b.manifest())
                .into_iter()
                .filter(|f| !ALLOWED_AXES.contains(&f.as_str()))
                .collect();
            if a.seeds != b.seeds {
                fields.push("seeds".into());
            }
            if a.condition == b.condition {
                fields.push("condition (repeated)".into());
            }
            if !fields.is_empty() {
                return Err(HarnessError::Divergence { a: a.condition.to_string(), b: b.condition.to_string(), fields });
            }
        }
    }
    fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
    let manifest = out.join("manifest.json");
    write_manifest(&manifest, configs)?;

    let jobs: Vec<ExperimentConfig> = configs.iter().map(|c| ExperimentConfig { out_dir: out.to_path_buf(), ..c.clone() }).collect();
    let pairs: Vec<(&ExperimentConfig, u64)> = jobs.iter().flat_map(|c| c.seeds.iter().map(move |&s| (c, s))).collect();
    let runs = pairs
        .par_iter()
        .map(|&(c, s)| (c.condition, s, run_seed(c, s).map(|r| r.dir).map_err(|e| e.to_string())))
        .collect();
    Ok(AblationOutcome { manifest, runs })
}
