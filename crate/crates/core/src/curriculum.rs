//! Difficulty controller and traffic-context generation.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::architect::{render_prompt, ChatClient, LlmSettings, StatsSummary, PROMPT_CONTEXT_ADAPTIVE, PROMPT_CONTEXT_FREE};
use crate::grid_sim::{episode_metrics, FixedTimePolicy, GridNetwork, GridSim, SimError, TrafficContext};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurriculumConfig {
    pub initial_difficulty: f64,
    pub target: f64,
    pub window: usize,
    pub plateau_limit: usize,
    pub increase_factor: f64,
    pub decrease_factor: f64,
    pub d_min: f64,
    pub d_max: f64,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        CurriculumConfig {
            initial_difficulty: 0.5,
            target: 165.0,
            window: 5,
            plateau_limit: 15,
            increase_factor: 1.05,
            decrease_factor: 0.90,
            d_min: 0.3,
            d_max: 1.0,
        }
    }
}

#[derive(Debug, Error)]
pub enum CurriculumError {
    #[error("episode return {0} is not finite")]
    NonFiniteReturn(f64),
    #[error("invalid curriculum setting: {0}")]
    Config(String),
    #[error("difficulty {0} outside [0.3, 1.0]")]
    Difficulty(f64),
    #[error("monotonicity sweep needs an ascending grid of at least 4 points")]
    Grid,
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    None,
    Increase,
    Decrease,
    PlateauEscape,
}

impl EventKind {
    pub fn name(self) -> &'static str {
        match self {
            EventKind::None => "none",
            EventKind::Increase => "increase",
            EventKind::Decrease => "decrease",
            EventKind::PlateauEscape => "plateau_escape",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurriculumEvent {
    pub kind: EventKind,
    pub d_before: f64,
    pub d_after: f64,
    pub episode: usize,
}

/// Difficulty state machine driven by a trailing window of episode returns.
#[derive(Clone, Debug, PartialEq)]
pub struct DifficultyState {
    cfg: CurriculumConfig,
    pub d: f64,
    pub window: VecDeque<f64>,
    pub consec_above: usize,
    pub episodes_since_change: usize,
    pub hi: f64,
    pub lo: f64,
    episode: usize,
}

impl DifficultyState {
    pub fn new(cfg: CurriculumConfig) -> Result<Self, CurriculumError> {
        let bad = |m: &str| Err(CurriculumError::Config(m.into()));
        if !(cfg.d_min > 0.0 && cfg.d_min < cfg.d_max) {
            return bad("need 0 < d_min < d_max");
        }
        if !(cfg.d_min..=cfg.d_max).contains(&cfg.initial_difficulty) {
            return bad("initial difficulty outside [d_min, d_max]");
        }
        if cfg.window == 0 || !cfg.target.is_finite() {
            return bad("window must be positive and target finite");
        }
        Ok(DifficultyState {
            d: cfg.initial_difficulty,
            window: VecDeque::with_capacity(cfg.window),
            consec_above: 0,
            episodes_since_change: 0,
            hi: 1.05 * cfg.target,
            lo: 0.95 * cfg.target,
            episode: 0,
            cfg,
        })
    }

    pub fn config(&self) -> &CurriculumConfig {
        &self.cfg
    }

    pub fn target(&self) -> f64 {
        self.cfg.target
    }

    /// Records one training return and applies at most one adjustment.
    ///
    /// The window keeps rolling across adjustments; only the counters reset.
    /// Before the window fills, each return counts as an unchanged episode.
    pub fn update_difficulty(&mut self, episode_return: f64) -> Result<CurriculumEvent, CurriculumError> {
        if !episode_return.is_finite() {
            return Err(CurriculumError::NonFiniteReturn(episode_return));
        }
        let episode = self.episode;
        self.episode += 1;
        if self.window.len() == self.cfg.window {
            self.window.pop_front();
        }
        self.window.push_back(episode_return);
        let d_before = self.d;
        let mut kind = EventKind::None;
        if self.window.len() == self.cfg.window {
            let avg = self.window.iter().sum::<f64>() / self.window.len() as f64;
            if avg > self.hi {
                self.consec_above += 1;
            } else {
                self.consec_above = 0;
            }
            if self.consec_above >= 2 {
                kind = EventKind::Increase;
            } else if avg < self.lo {
                kind = EventKind::Decrease;
            } else if self.episodes_since_change >= self.cfg.plateau_limit {
                kind = EventKind::PlateauEscape;
            }
        }
        match kind {
            EventKind::None => self.episodes_since_change += 1,
            _ => {
                let factor = if kind == EventKind::Decrease { self.cfg.decrease_factor } else { self.cfg.increase_factor };
                self.d = (self.d * factor).clamp(self.cfg.d_min, self.cfg.d_max);
                self.consec_above = 0;
                self.episodes_since_change = 0;
            }
        }
        Ok(CurriculumEvent { kind, d_before, d_after: self.d, episode })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurriculumMode {
    Template,
    LlmAdaptive,
    Llm,
}

impl CurriculumMode {
    pub fn name(self) -> &'static str {
        match self {
            CurriculumMode::Template => "template",
            CurriculumMode::LlmAdaptive => "llm_adaptive",
            CurriculumMode::Llm => "llm",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextSource {
    Template,
    Llm,
    /// The model could not produce a usable context; the template map was used.
    Fallback,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedContext {
    pub context: TrafficContext,
    pub source: ContextSource,
    pub attempts: u32,
    pub warnings: Vec<String>,
}

/// Deterministic map from difficulty to traffic. `noise_seed` drives the
/// approach imbalance, which grows with `d` and stays within [0.5, 1.5].
pub fn template_context(d: f64, noise_seed: u64) -> TrafficContext {
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let raw: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    let mean = raw.iter().sum::<f64>() / 4.0;
    let centred = raw.map(|x| x - mean);
    let peak = centred.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let amplitude = 0.5 * d;
    let asymmetry = if peak > 0.0 { centred.map(|x| 1.0 + amplitude * x / peak) } else { [1.0; 4] };
    TrafficContext {
        base_arrival_rate: 0.02 + d * 0.18,
        approach_asymmetry: asymmetry,
        turn_probs: [0.6, 0.2, 0.2],
        speed_factor: 1.2 - 0.4 * d,
        difficulty_tag: d,
        noise_seed,
    }
    .clamped()
}

/// Fields a model may return; anything absent falls back to the template value.
#[derive(Debug, Default, Deserialize)]
struct ContextReply {
    base_arrival_rate: Option<f64>,
    approach_asymmetry: Option<Vec<f64>>,
    turn_probs: Option<Vec<f64>>,
    speed_factor: Option<f64>,
}

fn json_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    (end > start).then(|| &text[start..=end])
}

fn parse_reply(text: &str) -> Result<ContextReply, String> {
    let body = json_object(text).ok_or("no JSON object in response")?;
    serde_json::from_str(body).map_err(|e| e.to_string())
}

fn strict_reply(r: &ContextReply) -> Result<(), String> {
    let missing: Vec<&str> = [
        ("base_arrival_rate", r.base_arrival_rate.is_none()),
        ("approach_asymmetry", r.approach_asymmetry.as_ref().is_none_or(|v| v.len() != 4)),
        ("turn_probs", r.turn_probs.as_ref().is_none_or(|v| v.len() != 3)),
        ("speed_factor", r.speed_factor.is_none()),
    ]
    .into_iter()
    .filter_map(|(name, bad)| bad.then_some(name))
    .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(format!("missing or malformed fields: {}", missing.join(", ")))
    }
}

fn merge(reply: &ContextReply, base: TrafficContext) -> TrafficContext {
    let mut c = base;
    if let Some(v) = reply.base_arrival_rate {
        c.base_arrival_rate = v;
    }
    if let Some(v) = reply.approach_asymmetry.as_ref().filter(|v| v.len() == 4) {
        c.approach_asymmetry.copy_from_slice(v);
    }
    if let Some(v) = reply.turn_probs.as_ref().filter(|v| v.len() == 3) {
        c.turn_probs.copy_from_slice(v);
    }
    if let Some(v) = reply.speed_factor {
        c.speed_factor = v;
    }
    c.clamped()
}

pub const MAX_CONTEXT_RETRIES: u32 = 3;

/// Produces the context for the next stage. Never fails: client errors and
/// unusable replies fall back to [`template_context`] with a warning.
pub fn generate_context(
    d: f64,
    mode: CurriculumMode,
    stats: &StatsSummary,
    client: &dyn ChatClient,
    llm: &LlmSettings,
    noise_seed: u64,
) -> Result<GeneratedContext, CurriculumError> {
    if !(0.3..=1.0).contains(&d) {
        return Err(CurriculumError::Difficulty(d));
    }
    let template = template_context(d, noise_seed);
    let stats = StatsSummary { difficulty: d, ..*stats };
    let tagged = |c: TrafficContext| TrafficContext { difficulty_tag: d, noise_seed, ..c };
    let mut warnings = Vec::new();
    match mode {
        CurriculumMode::Template => {
            return Ok(GeneratedContext { context: template, source: ContextSource::Template, attempts: 0, warnings })
        }
        CurriculumMode::LlmAdaptive => {
            let req = render_prompt(PROMPT_CONTEXT_ADAPTIVE, &stats, 0, llm);
            match client.chat(&req).map_err(|e| e.to_string()).and_then(|r| parse_reply(&r.text)) {
                Ok(reply) => {
                    let context = tagged(merge(&reply, template));
                    return Ok(GeneratedContext { context, source: ContextSource::Llm, attempts: 1, warnings });
                }
                Err(e) => warnings.push(format!("context generation failed: {e}")),
            }
            log::warn!("falling back to template context at d = {d}");
            Ok(GeneratedContext { context: template, source: ContextSource::Fallback, attempts: 1, warnings })
        }
        CurriculumMode::Llm => {
            for attempt in 0..=MAX_CONTEXT_RETRIES {
                let req = render_prompt(PROMPT_CONTEXT_FREE, &stats, attempt, llm);
                let reply = client.chat(&req).map_err(|e| e.to_string()).and_then(|r| parse_reply(&r.text));
                match reply.and_then(|r| strict_reply(&r).map(|_| r)) {
                    Ok(r) => {
                        let context = tagged(merge(&r, template));
                        return Ok(GeneratedContext { context, source: ContextSource::Llm, attempts: attempt + 1, warnings });
                    }
                    Err(e) => warnings.push(format!("attempt {}: {e}", attempt + 1)),
                }
            }
            log::warn!("falling back to template context at d = {d} after {} attempts", MAX_CONTEXT_RETRIES + 1);
            Ok(GeneratedContext { context: template, source: ContextSource::Fallback, attempts: MAX_CONTEXT_RETRIES + 1, warnings })
        }
    }
}

/// Spearman rank correlation with average ranks for ties; 0 when either side is constant.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let rx = ranks(xs);
    let ry = ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

/// 1-based ranks, ties sharing their average rank.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[idx[k]] = avg;
        }
        i = j + 1;
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub d_grid: Vec<f64>,
    /// Per difficulty, mean over seeds of the episode-mean queue.
    pub mean_queue: Vec<f64>,
    /// Per difficulty, mean over seeds of the mean trip delay.
    pub mean_delay: Vec<f64>,
    pub rho_queue: f64,
    pub rho_delay: f64,
}

/// Runs one fixed-time episode per (difficulty, seed) on template contexts and
/// rank-correlates difficulty with the per-difficulty means.
pub fn verify_monotonicity(
    d_grid: &[f64],
    seeds: &[u64],
    policy: FixedTimePolicy,
    network: &GridNetwork,
    steps: u32,
) -> Result<MonotonicityReport, CurriculumError> {
    if d_grid.len() < 4 || d_grid.windows(2).any(|w| w[0] >= w[1]) || seeds.is_empty() {
        return Err(CurriculumError::Grid);
    }
    let mut sim = GridSim::new(network.clone(), steps)?;
    let agents = sim.num_agents();
    let (mut mean_queue, mut mean_delay) = (Vec::new(), Vec::new());
    for &d in d_grid {
        let (mut q, mut dl) = (0.0, 0.0);
        for &seed in seeds {
            sim.reset(&template_context(d, seed), seed)?;
            let mut records = Vec::with_capacity(steps as usize);
            for t in 0..steps {
                records.push(sim.step(&policy.actions(t, agents))?.metrics);
            }
            let m = episode_metrics(&records)?;
            q += m.mean_queue;
            dl += m.mean_delay.unwrap_or(0.0);
        }
        mean_queue.push(q / seeds.len() as f64);
        mean_delay.push(dl / seeds.len() as f64);
    }
    Ok(MonotonicityReport {
        rho_queue: spearman(d_grid, &mean_queue),
        rho_delay: spearman(d_grid, &mean_delay),
        d_grid: d_grid.to_vec(),
        mean_queue,
        mean_delay,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::architect::MockChatClient;
    use proptest::prelude::*;

    fn st() -> DifficultyState {
        DifficultyState::new(CurriculumConfig::default()).unwrap()
    }

    fn feed(s: &mut DifficultyState, xs: &[f64]) -> Vec<EventKind> {
        xs.iter().map(|x| s.update_difficulty(*x).unwrap().kind).collect()
    }

    #[test]
    fn default_thresholds() {
        let s = st();
        assert!((s.hi - 173.25).abs() < 1e-9);
        assert!((s.lo - 156.75).abs() < 1e-9);
    }

    #[test]
    fn two_high_windows_increase() {
        let mut s = st();
        let ev = feed(&mut s, &[180.0; 6]);
        assert_eq!(ev[..5], [EventKind::None; 5]);
        assert_eq!(ev[5], EventKind::Increase);
        assert!((s.d - 0.525).abs() < 1e-12);
    }

    #[test]
    fn low_window_decreases() {
        let mut s = st();
        let ev = feed(&mut s, &[150.0; 5]);
        assert_eq!(ev[4], EventKind::Decrease);
        assert!((s.d - 0.45).abs() < 1e-12);
    }

    #[test]
    fn increase_clamps_at_one() {
        let mut s = DifficultyState::new(CurriculumConfig { initial_difficulty: 0.98, ..Default::default() }).unwrap();
        let ev = feed(&mut s, &[200.0; 6]);
        assert_eq!(ev[5], EventKind::Increase);
        assert_eq!(s.d, 1.0);
    }

    #[test]
    fn plateau_after_fifteen_quiet_episodes() {
        let mut s = st();
        let ev = feed(&mut s, &[165.0; 16]);
        assert!(ev[..15].iter().all(|k| *k == EventKind::None));
        assert_eq!(ev[15], EventKind::PlateauEscape);
        assert!((s.d - 0.525).abs() < 1e-12);
    }

    #[test]
    fn template_examples() {
        let c = template_context(0.3, 1);
        assert!((c.base_arrival_rate - 0.074).abs() < 1e-12);
        let c = template_context(1.0, 1);
        assert!((c.base_arrival_rate - 0.2).abs() < 1e-12);
        assert!((c.speed_factor - 0.8).abs() < 1e-12);
        assert_eq!(c.turn_probs, [0.6, 0.2, 0.2]);
        assert!(c.approach_asymmetry.iter().all(|a| (0.5..=1.5).contains(a)));
        assert!((c.approach_asymmetry.iter().sum::<f64>() - 4.0).abs() < 1e-9);
        c.validate().unwrap();
    }

    #[test]
    fn mock_adaptive_context_is_reproducible() {
        let m = MockChatClient::new(200);
        let llm = LlmSettings::default();
        let stats = StatsSummary::default();
        let a = generate_context(0.6, CurriculumMode::LlmAdaptive, &stats, &m, &llm, 5).unwrap();
        let b = generate_context(0.6, CurriculumMode::LlmAdaptive, &stats, &m, &llm, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.source, ContextSource::Llm);
        assert_eq!(a.context.difficulty_tag, 0.6);
        a.context.validate().unwrap();
    }

    #[test]
    fn unusable_replies_fall_back_to_template() {
        let m = MockChatClient::with_invalid_rate(1, 1.0);
        let llm = LlmSettings::default();
        let stats = StatsSummary::default();
        let g = generate_context(0.4, CurriculumMode::Llm, &stats, &m, &llm, 9).unwrap();
        assert_eq!(g.source, ContextSource::Fallback);
        assert_eq!(g.attempts, MAX_CONTEXT_RETRIES + 1);
        assert_eq!(g.context, template_context(0.4, 9));
        let g = generate_context(0.4, CurriculumMode::LlmAdaptive, &stats, &m, &llm, 9).unwrap();
        assert_eq!(g.source, ContextSource::Fallback);
    }

    #[test]
    fn out_of_range_replies_are_clamped() {
        struct Wild;
        impl ChatClient for Wild {
            fn chat(&self, _: &crate::architect::ChatRequest) -> Result<crate::architect::ChatResponse, crate::architect::ChatError> {
                Ok(crate::architect::ChatResponse {
                    text: r#"{"base_arrival_rate": 9, "approach_asymmetry": [-1, 0, 50, 1e300], "turn_probs": [0, 0, 0], "speed_factor": -3}"#.into(),
                    prompt_tokens: 0,
                    completion_tokens: 0,
                    latency_ms: 0,
                })
            }
        }
        for mode in [CurriculumMode::LlmAdaptive, CurriculumMode::Llm] {
            let g = generate_context(0.7, mode, &StatsSummary::default(), &Wild, &LlmSettings::default(), 0).unwrap();
            g.context.validate().unwrap();
            assert_eq!(g.context.difficulty_tag, 0.7);
        }
    }

    #[test]
    fn spearman_edge_cases() {
        let d = [0.3, 0.4, 0.5, 0.6];
        assert_eq!(spearman(&d, &[1.0, 2.0, 3.0, 4.0]), 1.0);
        assert_eq!(spearman(&d, &[5.0; 4]), 0.0);
        assert_eq!(spearman(&d, &[4.0, 3.0, 2.0, 1.0]), -1.0);
        assert_eq!(ranks(&[2.0, 1.0, 2.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn sweep_rejects_short_grids() {
        let net = GridNetwork::grid(2, 2);
        let p = crate::grid_sim::fixed_time_policy(10);
        assert!(matches!(verify_monotonicity(&[0.3, 0.5, 0.7], &[1], p, &net, 10), Err(CurriculumError::Grid)));
        assert!(matches!(verify_monotonicity(&[0.3, 0.5, 0.4, 0.7], &[1], p, &net, 10), Err(CurriculumError::Grid)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn difficulty_stays_in_bounds(returns in prop::collection::vec(-500.0f64..500.0, 1..60), d0 in 0.3f64..=1.0) {
            let mut s = DifficultyState::new(CurriculumConfig { initial_difficulty: d0, ..Default::default() }).unwrap();
            let mut prev_consec = 0;
            for r in returns {
                let since = s.episodes_since_change;
                let e = s.update_difficulty(r + 165.0).unwrap();
                prop_assert!((0.3..=1.0).contains(&s.d));
                if e.kind != EventKind::None {
                    prop_assert!(since <= 15);
                    let f = if e.kind == EventKind::Decrease { 0.90 } else { 1.05 };
                    prop_assert_eq!(e.d_after, (e.d_before * f).clamp(0.3, 1.0));
                }
                if e.kind == EventKind::Increase {
                    prop_assert!(prev_consec >= 1);
                }
                prev_consec = s.consec_above;
            }
        }

        #[test]
        fn template_contexts_are_valid(d in 0.3f64..=1.0, seed in any::<u64>()) {
            let c = template_context(d, seed);
            prop_assert!(c.validate().is_ok());
            prop_assert!(c.approach_asymmetry.iter().all(|a| (0.5..=1.5).contains(a)));
        }
    }
}
