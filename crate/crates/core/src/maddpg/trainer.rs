use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::buffer::{Batch, ReplayBuffer};
use super::nn::{argmax, clip_grad_norm, softmax_rows, Adam, Mlp};
use super::LearnerError;

pub const NUM_ACTIONS: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub gamma: f64,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub warmup_steps: u64,
    /// Environment steps between gradient updates.
    pub update_every: u64,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub temperature_start: f64,
    pub temperature_end: f64,
    /// Episodes over which the relaxation temperature is annealed linearly.
    pub anneal_episodes: usize,
    pub max_grad_norm: f64,
    /// Weight of the mean squared logit penalty on the actor.
    pub logit_reg: f64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            gamma: 0.95,
            tau: 0.01,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            batch_size: 256,
            buffer_capacity: 100_000,
            warmup_steps: 1_000,
            update_every: 1,
            actor_hidden: vec![64, 64],
            critic_hidden: vec![128, 128],
            temperature_start: 1.0,
            temperature_end: 0.1,
            anneal_episodes: 100,
            max_grad_norm: 0.5,
            logit_reg: 1e-2,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), LearnerError> {
        let fail = |m: &str| Err(LearnerError::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return fail("gamma must lie in (0, 1)");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return fail("tau must lie in (0, 1]");
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return fail("learning rates must be positive");
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return fail("batch_size must be positive and no larger than buffer_capacity");
        }
        if self.update_every == 0 {
            return fail("update_every must be at least 1");
        }
        if !(self.temperature_start > 0.0 && self.temperature_end > 0.0) {
            return fail("temperatures must be positive");
        }
        if !(self.max_grad_norm > 0.0) || !(self.logit_reg >= 0.0) {
            return fail("max_grad_norm must be positive and logit_reg non-negative");
        }
        Ok(())
    }
}

/// Losses of one gradient step for one agent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentLosses {
    pub critic_loss: f64,
    pub actor_loss: f64,
}

/// Per-agent actors with centralized critics and target copies of both.
#[derive(Clone, Debug)]
pub struct Maddpg {
    pub(crate) cfg: TrainerConfig,
    pub(crate) agents: usize,
    pub(crate) obs_dim: usize,
    pub(crate) obs_scale: Vec<f64>,
    pub(crate) actors: Vec<Mlp>,
    pub(crate) critics: Vec<Mlp>,
    pub(crate) target_actors: Vec<Mlp>,
    pub(crate) target_critics: Vec<Mlp>,
    pub(crate) actor_opt: Vec<Adam>,
    pub(crate) critic_opt: Vec<Adam>,
    pub(crate) buffer: ReplayBuffer,
    pub(crate) explore_rng: ChaCha8Rng,
    pub(crate) sample_rng: ChaCha8Rng,
    pub(crate) temperature: f64,
    pub(crate) env_steps: u64,
    pub(crate) updates: u64,
}

/// Independent random streams of one learner, all derived from the run seed.
pub(crate) const STREAM_INIT: u64 = 11;
pub(crate) const STREAM_EXPLORE: u64 = 12;
pub(crate) const STREAM_SAMPLE: u64 = 13;

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl Maddpg {
    /// `obs_scale` multiplies every raw observation feature before it reaches a network.
    pub fn new(
        cfg: TrainerConfig,
        agents: usize,
        obs_dim: usize,
        obs_scale: Vec<f64>,
        seed: u64,
    ) -> Result<Self, LearnerError> {
        cfg.validate()?;
        if agents == 0 || obs_dim == 0 {
            return Err(LearnerError::Config("agents and obs_dim must be positive".into()));
        }
        if obs_scale.len() != obs_dim {
            return Err(LearnerError::Shape { what: "obs_scale", expected: obs_dim, got: obs_scale.len() });
        }
        let mut init = stream_rng(seed, STREAM_INIT);
        let actor_sizes = layer_sizes(obs_dim, &cfg.actor_hidden, NUM_ACTIONS);
        let critic_sizes = layer_sizes(critic_input_dim(agents, obs_dim), &cfg.critic_hidden, 1);
        let actors: Vec<Mlp> = (0..agents).map(|_| Mlp::new(&actor_sizes, &mut init)).collect();
        let critics: Vec<Mlp> = (0..agents).map(|_| Mlp::new(&critic_sizes, &mut init)).collect();
        Ok(Maddpg {
            actor_opt: actors.iter().map(|a| Adam::new(a.params().len(), cfg.actor_lr)).collect(),
            critic_opt: critics.iter().map(|c| Adam::new(c.params().len(), cfg.critic_lr)).collect(),
            target_actors: actors.clone(),
            target_critics: critics.clone(),
            actors,
            critics,
            buffer: ReplayBuffer::new(cfg.buffer_capacity, agents, obs_dim),
            explore_rng: stream_rng(seed, STREAM_EXPLORE),
            sample_rng: stream_rng(seed, STREAM_SAMPLE),
            temperature: cfg.temperature_start,
            env_steps: 0,
            updates: 0,
            agents,
            obs_dim,
            obs_scale,
            cfg,
        })
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.cfg
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn actors(&self) -> &[Mlp] {
        &self.actors
    }

    pub fn critics(&self) -> &[Mlp] {
        &self.critics
    }

    pub fn target_actors(&self) -> &[Mlp] {
        &self.target_actors
    }

    pub fn target_critics(&self) -> &[Mlp] {
        &self.target_critics
    }

    pub fn all_finite(&self) -> bool {
        [&self.actors, &self.critics, &self.target_actors, &self.target_critics]
            .iter()
            .all(|nets| nets.iter().all(Mlp::all_finite))
    }

    /// Sets the relaxation temperature for training episode `episode` (0-based).
    pub fn begin_episode(&mut self, episode: usize) {
        let c = &self.cfg;
        let frac = if c.anneal_episodes == 0 { 1.0 } else { (episode as f64 / c.anneal_episodes as f64).min(1.0) };
        self.temperature = c.temperature_start + (c.temperature_end - c.temperature_start) * frac;
    }

    /// Joint observation flattened to (agent, feature) and scaled.
    pub fn normalize(&self, obs: &[Vec<f64>]) -> Result<Vec<f64>, LearnerError> {
        if obs.len() != self.agents {
            return Err(LearnerError::Shape { what: "agents in joint observation", expected: self.agents, got: obs.len() });
        }
        let mut out = Vec::with_capacity(self.agents * self.obs_dim);
        for o in obs {
            if o.len() != self.obs_dim {
                return Err(LearnerError::Shape { what: "observation length", expected: self.obs_dim, got: o.len() });
            }
            out.extend(o.iter().zip(&self.obs_scale).map(|(x, s)| x * s));
        }
        Ok(out)
    }

    pub fn logits(&self, obs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, LearnerError> {
        let flat = self.normalize(obs)?;
        Ok((0..self.agents)
            .map(|i| self.actors[i].forward(&flat[i * self.obs_dim..(i + 1) * self.obs_dim], 1).0)
            .collect())
    }

    /// Deterministic argmax when `explore` is false; otherwise a draw from
    /// softmax(logits / temperature) via the Gumbel-max trick.
    pub fn select_actions(&self, obs: &[Vec<f64>], explore: bool, rng: &mut impl Rng) -> Result<Vec<usize>, LearnerError> {
        let logits = self.logits(obs)?;
        Ok(logits
            .iter()
            .map(|l| if explore { sample_relaxed(l, self.temperature, rng) } else { argmax(l) })
            .collect())
    }

    /// [`select_actions`](Self::select_actions) using the learner's own exploration stream.
    pub fn act(&mut self, obs: &[Vec<f64>], explore: bool) -> Result<Vec<usize>, LearnerError> {
        let mut rng = self.explore_rng.clone();
        let out = self.select_actions(obs, explore, &mut rng);
        self.explore_rng = rng;
        out
    }

    /// Stores one transition and runs a gradient step when the cadence allows.
    pub fn observe(
        &mut self,
        obs: &[Vec<f64>],
        actions: &[usize],
        rewards: &[f64],
        next_obs: &[Vec<f64>],
        done: bool,
    ) -> Result<Option<Vec<AgentLosses>>, LearnerError> {
        if actions.len() != self.agents || rewards.len() != self.agents {
            return Err(LearnerError::Shape { what: "actions/rewards", expected: self.agents, got: actions.len() });
        }
        let o = self.normalize(obs)?;
        let n = self.normalize(next_obs)?;
        self.buffer.push(&o, actions, rewards, &n, done);
        self.env_steps += 1;
        let ready = self.env_steps > self.cfg.warmup_steps
            && self.buffer.len() >= self.cfg.batch_size
            && self.env_steps.is_multiple_of(self.cfg.update_every);
        if ready {
            self.update().map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn update(&mut self) -> Result<Vec<AgentLosses>, LearnerError> {
        if self.buffer.len() < self.cfg.batch_size {
            return Err(LearnerError::NotEnoughData { have: self.buffer.len(), need: self.cfg.batch_size });
        }
        let batch = self.buffer.sample(self.cfg.batch_size, &mut self.sample_rng);
        self.update_batch(&batch)
    }

    /// One critic and one actor step per agent on `batch`, then a soft target update.
    pub fn update_batch(&mut self, batch: &Batch) -> Result<Vec<AgentLosses>, LearnerError> {
        let (n, d, b) = (self.agents, self.obs_dim, batch.size);
        let obs_of = |flat: &[f64], i: usize| -> Vec<f64> {
            let mut out = Vec::with_capacity(b * d);
            for r in 0..b {
                out.extend_from_slice(&flat[(r * n + i) * d..(r * n + i + 1) * d]);
            }
            out
        };

        // target joint action from the target actors
        let mut next_onehot = vec![0.0; b * n * NUM_ACTIONS];
        for j in 0..n {
            let (logits, _) = self.target_actors[j].forward(&obs_of(&batch.next_obs, j), b);
            for r in 0..b {
                let a = argmax(&logits[r * NUM_ACTIONS..(r + 1) * NUM_ACTIONS]);
                next_onehot[(r * n + j) * NUM_ACTIONS + a] = 1.0;
            }
        }
        let next_input = critic_input(&batch.next_obs, &next_onehot, b, n * d, n * NUM_ACTIONS);

        let mut taken = vec![0.0; b * n * NUM_ACTIONS];
        for (k, a) in batch.actions.iter().enumerate() {
            taken[k * NUM_ACTIONS + a] = 1.0;
        }
        let input = critic_input(&batch.obs, &taken, b, n * d, n * NUM_ACTIONS);

        // current-policy joint action used by every actor update (hard relaxed samples)
        let mut policy_onehot = vec![0.0; b * n * NUM_ACTIONS];
        let mut noises = Vec::with_capacity(n);
        for j in 0..n {
            let noise = gumbel_noise(b * NUM_ACTIONS, &mut self.sample_rng);
            let (logits, _) = self.actors[j].forward(&obs_of(&batch.obs, j), b);
            for r in 0..b {
                let row: Vec<f64> = (0..NUM_ACTIONS)
                    .map(|k| logits[r * NUM_ACTIONS + k] + noise[r * NUM_ACTIONS + k])
                    .collect();
                policy_onehot[(r * n + j) * NUM_ACTIONS + argmax(&row)] = 1.0;
            }
            noises.push(noise);
        }

        let joint = critic_input(&batch.obs, &policy_onehot, b, n * d, n * NUM_ACTIONS);
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let (q_next, _) = self.target_critics[i].forward(&next_input, b);
            let rewards: Vec<f64> = (0..b).map(|r| batch.rewards[r * n + i]).collect();
            let targets = td_targets(&rewards, &batch.dones, &q_next, self.cfg.gamma);
            let (critic_loss, mut cg) = critic_loss_grad(&self.critics[i], &input, &targets);
            let critic_norm = clip_grad_norm(&mut cg, self.cfg.max_grad_norm);

            let (actor_loss, mut ag) = actor_loss_grad(
                &self.actors[i],
                &self.critics[i],
                &obs_of(&batch.obs, i),
                &joint,
                n * d + i * NUM_ACTIONS,
                &noises[i],
                self.temperature,
                self.cfg.logit_reg,
                true,
            );
            let actor_norm = clip_grad_norm(&mut ag, self.cfg.max_grad_norm);
            if !(critic_loss.is_finite() && actor_loss.is_finite() && critic_norm.is_finite() && actor_norm.is_finite()) {
                let (lo, hi, mean) = summary(&rewards);
                return Err(LearnerError::NonFinite {
                    agent: i,
                    detail: format!(
                        "critic_loss={critic_loss} actor_loss={actor_loss} batch rewards min={lo} max={hi} mean={mean}"
                    ),
                });
            }
            self.critic_opt[i].apply(self.critics[i].params_mut(), &cg);
            self.actor_opt[i].apply(self.actors[i].params_mut(), &ag);
            out.push(AgentLosses { critic_loss, actor_loss });
        }
        self.soft_update(self.cfg.tau);
        self.updates += 1;
        Ok(out)
    }

    /// target <- tau * online + (1 - tau) * target for every network.
    pub fn soft_update(&mut self, tau: f64) {
        for (t, o) in self.target_actors.iter_mut().zip(&self.actors) {
            soft_update(t, o, tau);
        }
        for (t, o) in self.target_critics.iter_mut().zip(&self.critics) {
            soft_update(t, o, tau);
        }
    }
}

pub fn layer_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut s = vec![input];
    s.extend_from_slice(hidden);
    s.push(output);
    s
}

pub fn critic_input_dim(agents: usize, obs_dim: usize) -> usize {
    agents * obs_dim + agents * NUM_ACTIONS
}

/// Concatenates joint observations and joint one-hot actions row by row.
pub fn critic_input(obs: &[f64], onehot: &[f64], batch: usize, obs_width: usize, act_width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(batch * (obs_width + act_width));
    for r in 0..batch {
        out.extend_from_slice(&obs[r * obs_width..(r + 1) * obs_width]);
        out.extend_from_slice(&onehot[r * act_width..(r + 1) * act_width]);
    }
    out
}

/// y = r + gamma * (1 - done) * q_next
pub fn td_targets(rewards: &[f64], dones: &[f64], q_next: &[f64], gamma: f64) -> Vec<f64> {
    rewards
        .iter()
        .zip(dones)
        .zip(q_next)
        .map(|((r, done), q)| r + gamma * (1.0 - done) * q)
        .collect()
}

/// Mean squared TD error of `critic` on `input` against fixed `targets`, and its parameter gradient.
pub fn critic_loss_grad(critic: &Mlp, input: &[f64], targets: &[f64]) -> (f64, Vec<f64>) {
    let b = targets.len();
    let (q, cache) = critic.forward(input, b);
    let loss = q.iter().zip(targets).map(|(q, y)| (q - y).powi(2)).sum::<f64>() / b as f64;
    let dq: Vec<f64> = q.iter().zip(targets).map(|(q, y)| 2.0 * (q - y) / b as f64).collect();
    (loss, critic.backward(&cache, &dq).0)
}

/// Actor objective `-mean(Q) + reg * mean(logits^2)` and its gradient w.r.t. the actor parameters.
///
/// The actor's relaxed action `softmax((logits + noise) / temperature)` is written into
/// columns `slot..slot+4` of `joint` before the critic sees it. With `straight_through`
/// the critic sees the one-hot argmax of the relaxed action while gradients flow through
/// the soft relaxation; without it the critic sees the soft action itself.
#[allow(clippy::too_many_arguments)]
pub fn actor_loss_grad(
    actor: &Mlp,
    critic: &Mlp,
    obs: &[f64],
    joint: &[f64],
    slot: usize,
    noise: &[f64],
    temperature: f64,
    reg: f64,
    straight_through: bool,
) -> (f64, Vec<f64>) {
    let width = critic.input_dim();
    let b = joint.len() / width;
    let (logits, cache) = actor.forward(obs, b);
    let z: Vec<f64> = logits.iter().zip(noise).map(|(l, g)| (l + g) / temperature).collect();
    let soft = softmax_rows(&z, NUM_ACTIONS);
    let mut input = joint.to_vec();
    for r in 0..b {
        let row = &soft[r * NUM_ACTIONS..(r + 1) * NUM_ACTIONS];
        let dst = &mut input[r * width + slot..r * width + slot + NUM_ACTIONS];
        if straight_through {
            let a = argmax(row);
            for (k, v) in dst.iter_mut().enumerate() {
                *v = if k == a { 1.0 } else { 0.0 };
            }
        } else {
            dst.copy_from_slice(row);
        }
    }
    let (q, ccache) = critic.forward(&input, b);
    let n_logits = (b * NUM_ACTIONS) as f64;
    let loss = -q.iter().sum::<f64>() / b as f64 + reg * logits.iter().map(|l| l * l).sum::<f64>() / n_logits;
    let (_, d_input) = critic.backward(&ccache, &vec![-1.0 / b as f64; b]);
    let mut d_logits = vec![0.0; b * NUM_ACTIONS];
    for r in 0..b {
        let s = &soft[r * NUM_ACTIONS..(r + 1) * NUM_ACTIONS];
        let g = &d_input[r * width + slot..r * width + slot + NUM_ACTIONS];
        let dot: f64 = s.iter().zip(g).map(|(a, b)| a * b).sum();
        for k in 0..NUM_ACTIONS {
            d_logits[r * NUM_ACTIONS + k] = s[k] * (g[k] - dot) / temperature;
        }
    }
    for (d, l) in d_logits.iter_mut().zip(&logits) {
        *d += 2.0 * reg * l / n_logits;
    }
    (loss, actor.backward(&cache, &d_logits).0)
}

pub fn soft_update(target: &mut Mlp, online: &Mlp, tau: f64) {
    for (t, o) in target.params_mut().iter_mut().zip(online.params()) {
        *t = tau * o + (1.0 - tau) * *t;
    }
}

pub fn gumbel_noise(len: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..len)
        .map(|_| {
            let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
            -(-u.ln()).ln()
        })
        .collect()
}

/// Draw from softmax(logits / temperature).
pub fn sample_relaxed(logits: &[f64], temperature: f64, rng: &mut impl Rng) -> usize {
    let noise = gumbel_noise(logits.len(), rng);
    let z: Vec<f64> = logits.iter().zip(&noise).map(|(l, g)| l / temperature + g).collect();
    argmax(&z)
}

fn summary(xs: &[f64]) -> (f64, f64, f64) {
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi, xs.iter().sum::<f64>() / xs.len().max(1) as f64)
}
