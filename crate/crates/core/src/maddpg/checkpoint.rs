//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      12 bytes  "MAESTROCKPT\0"
//! version    u32       CHECKPOINT_VERSION
//! header_len u64
//! header     JSON      CheckpointHeader (shapes, config, counters, RNG positions)
//! body       for each agent: actor, critic, target actor, target critic parameters (f64),
//!            then actor Adam m, v and critic Adam m, v (f64);
//!            then the first `buffer_len` replay slots: obs (f32), next_obs (f32),
//!            actions (u8), rewards (f64), dones (u8)
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nn::{param_count, Adam, Mlp};
use super::trainer::{critic_input_dim, layer_sizes, Maddpg, TrainerConfig, NUM_ACTIONS};
use super::{LearnerError, ReplayBuffer};

pub const CHECKPOINT_MAGIC: &[u8; 12] = b"MAESTROCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct RngState {
    seed: String,
    stream: u64,
    word_pos: String,
}

impl RngState {
    fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: hex::encode(rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    fn restore(&self) -> Option<ChaCha8Rng> {
        let bytes: [u8; 32] = hex::decode(&self.seed).ok()?.try_into().ok()?;
        let mut rng = ChaCha8Rng::from_seed(bytes);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().ok()?);
        Some(rng)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    agents: usize,
    obs_dim: usize,
    actor_sizes: Vec<usize>,
    critic_sizes: Vec<usize>,
    config: TrainerConfig,
    obs_scale: Vec<f64>,
    temperature: f64,
    env_steps: u64,
    updates: u64,
    actor_adam_steps: Vec<u64>,
    critic_adam_steps: Vec<u64>,
    explore_rng: RngState,
    sample_rng: RngState,
    buffer_capacity: usize,
    buffer_len: usize,
    buffer_cursor: usize,
}

fn put_f64(out: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn f64s(&mut self, n: usize) -> Option<Vec<f64>> {
        let raw = self.take(n.checked_mul(8)?)?;
        Some(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn f32s(&mut self, n: usize) -> Option<Vec<f32>> {
        let raw = self.take(n.checked_mul(4)?)?;
        Some(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

impl Maddpg {
    pub fn save_checkpoint(&self, path: &Path) -> Result<(), LearnerError> {
        let io = |e: std::io::Error| LearnerError::Io { path: path.to_path_buf(), source: e };
        let header = CheckpointHeader {
            agents: self.agents,
            obs_dim: self.obs_dim,
            actor_sizes: self.actors[0].sizes().to_vec(),
            critic_sizes: self.critics[0].sizes().to_vec(),
            config: self.cfg.clone(),
            obs_scale: self.obs_scale.clone(),
            temperature: self.temperature,
            env_steps: self.env_steps,
            updates: self.updates,
            actor_adam_steps: self.actor_opt.iter().map(|a| a.step).collect(),
            critic_adam_steps: self.critic_opt.iter().map(|a| a.step).collect(),
            explore_rng: RngState::capture(&self.explore_rng),
            sample_rng: RngState::capture(&self.sample_rng),
            buffer_capacity: self.buffer.capacity(),
            buffer_len: self.buffer.len,
            buffer_cursor: self.buffer.cursor,
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut body = Vec::new();
        for i in 0..self.agents {
            for net in [&self.actors[i], &self.critics[i], &self.target_actors[i], &self.target_critics[i]] {
                put_f64(&mut body, net.params());
            }
            for opt in [&self.actor_opt[i], &self.critic_opt[i]] {
                put_f64(&mut body, &opt.m);
                put_f64(&mut body, &opt.v);
            }
        }
        let b = &self.buffer;
        let width = b.agents() * b.obs_dim();
        let len = b.len;
        for src in [&b.obs, &b.next_obs] {
            for x in &src[..len * width] {
                body.extend_from_slice(&x.to_le_bytes());
            }
        }
        body.extend_from_slice(&b.actions[..len * b.agents()]);
        put_f64(&mut body, &b.rewards[..len * b.agents()]);
        body.extend_from_slice(&b.dones[..len]);

        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io)?;
        }
        let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
        w.write_all(CHECKPOINT_MAGIC).map_err(io)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(header.len() as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&header).map_err(io)?;
        w.write_all(&body).map_err(io)?;
        w.flush().map_err(io)
    }

    /// Reads a checkpoint written by [`save_checkpoint`](Self::save_checkpoint).
    pub fn from_checkpoint(path: &Path) -> Result<Maddpg, LearnerError> {
        let bytes = fs::read(path).map_err(|e| LearnerError::Io { path: path.to_path_buf(), source: e })?;
        let corrupt = |detail: &str| LearnerError::Format { path: path.to_path_buf(), detail: detail.to_string() };
        let mut r = Reader { bytes: &bytes, pos: 0 };
        if r.take(12) != Some(&CHECKPOINT_MAGIC[..]) {
            return Err(corrupt("bad magic"));
        }
        let version = u32::from_le_bytes(r.take(4).ok_or_else(|| corrupt("truncated"))?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(corrupt(&format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(r.take(8).ok_or_else(|| corrupt("truncated"))?.try_into().unwrap());
        let raw = r.take(hlen as usize).ok_or_else(|| corrupt("truncated header"))?;
        let h: CheckpointHeader = serde_json::from_slice(raw).map_err(|e| corrupt(&format!("header: {e}")))?;

        let actor_sizes = layer_sizes(h.obs_dim, &h.config.actor_hidden, NUM_ACTIONS);
        let critic_sizes = layer_sizes(critic_input_dim(h.agents, h.obs_dim), &h.config.critic_hidden, 1);
        if actor_sizes != h.actor_sizes || critic_sizes != h.critic_sizes {
            return Err(corrupt("layer sizes disagree with obs_dim/agents"));
        }
        if h.obs_scale.len() != h.obs_dim || h.buffer_len > h.buffer_capacity || h.buffer_cursor >= h.buffer_capacity {
            return Err(corrupt("inconsistent header"));
        }
        let mut m = Maddpg::new(h.config.clone(), h.agents, h.obs_dim, h.obs_scale.clone(), 0)
            .map_err(|e| corrupt(&e.to_string()))?;
        let (pa, pc) = (param_count(&actor_sizes), param_count(&critic_sizes));
        let truncated = || corrupt("truncated body");
        for i in 0..h.agents {
            m.actors[i] = Mlp::from_params(&actor_sizes, r.f64s(pa).ok_or_else(truncated)?).expect("sized");
            m.critics[i] = Mlp::from_params(&critic_sizes, r.f64s(pc).ok_or_else(truncated)?).expect("sized");
            m.target_actors[i] = Mlp::from_params(&actor_sizes, r.f64s(pa).ok_or_else(truncated)?).expect("sized");
            m.target_critics[i] = Mlp::from_params(&critic_sizes, r.f64s(pc).ok_or_else(truncated)?).expect("sized");
            let mut aopt = Adam::new(pa, h.config.actor_lr);
            aopt.m = r.f64s(pa).ok_or_else(truncated)?;
            aopt.v = r.f64s(pa).ok_or_else(truncated)?;
            aopt.step = *h.actor_adam_steps.get(i).ok_or_else(|| corrupt("adam steps"))?;
            let mut copt = Adam::new(pc, h.config.critic_lr);
            copt.m = r.f64s(pc).ok_or_else(truncated)?;
            copt.v = r.f64s(pc).ok_or_else(truncated)?;
            copt.step = *h.critic_adam_steps.get(i).ok_or_else(|| corrupt("adam steps"))?;
            m.actor_opt[i] = aopt;
            m.critic_opt[i] = copt;
        }
        let mut buf = ReplayBuffer::new(h.buffer_capacity, h.agents, h.obs_dim);
        let width = h.agents * h.obs_dim;
        let len = h.buffer_len;
        buf.obs[..len * width].copy_from_slice(&r.f32s(len * width).ok_or_else(truncated)?);
        buf.next_obs[..len * width].copy_from_slice(&r.f32s(len * width).ok_or_else(truncated)?);
        buf.actions[..len * h.agents].copy_from_slice(r.take(len * h.agents).ok_or_else(truncated)?);
        buf.rewards[..len * h.agents].copy_from_slice(&r.f64s(len * h.agents).ok_or_else(truncated)?);
        buf.dones[..len].copy_from_slice(r.take(len).ok_or_else(truncated)?);
        buf.len = len;
        buf.cursor = h.buffer_cursor;
        if r.pos != bytes.len() {
            return Err(corrupt("trailing bytes"));
        }
        m.buffer = buf;
        m.explore_rng = h.explore_rng.restore().ok_or_else(|| corrupt("explore rng"))?;
        m.sample_rng = h.sample_rng.restore().ok_or_else(|| corrupt("sample rng"))?;
        m.temperature = h.temperature;
        m.env_steps = h.env_steps;
        m.updates = h.updates;
        Ok(m)
    }

    /// Replaces this learner's state with a checkpoint of the same shape.
    pub fn load_checkpoint(&mut self, path: &Path) -> Result<(), LearnerError> {
        let loaded = Maddpg::from_checkpoint(path)?;
        if loaded.obs_dim != self.obs_dim {
            return Err(LearnerError::Shape { what: "checkpoint obs_dim", expected: self.obs_dim, got: loaded.obs_dim });
        }
        if loaded.agents != self.agents {
            return Err(LearnerError::Shape { what: "checkpoint agents", expected: self.agents, got: loaded.agents });
        }
        *self = loaded;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn trained(seed: u64) -> Maddpg {
        let cfg = TrainerConfig {
            batch_size: 8,
            buffer_capacity: 32,
            warmup_steps: 4,
            actor_hidden: vec![5],
            critic_hidden: vec![7],
            ..Default::default()
        };
        let mut m = Maddpg::new(cfg, 2, 3, vec![1.0; 3], seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..40 {
            let obs: Vec<Vec<f64>> = (0..2).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let next: Vec<Vec<f64>> = (0..2).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let acts = m.act(&obs, true).unwrap();
            m.observe(&obs, &acts, &[rng.random(), rng.random()], &next, false).unwrap();
        }
        m
    }

    #[test]
    fn round_trip_preserves_actions() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = trained(1);
        m.save_checkpoint(&path).unwrap();
        let back = Maddpg::from_checkpoint(&path).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..100 {
            let obs: Vec<Vec<f64>> = (0..2).map(|_| (0..3).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
            let mut r1 = ChaCha8Rng::seed_from_u64(1);
            let mut r2 = ChaCha8Rng::seed_from_u64(1);
            assert_eq!(m.select_actions(&obs, false, &mut r1).unwrap(), back.select_actions(&obs, false, &mut r2).unwrap());
            assert_eq!(m.select_actions(&obs, true, &mut r1).unwrap(), back.select_actions(&obs, true, &mut r2).unwrap());
        }
        assert_eq!(back.buffer(), m.buffer());
        assert_eq!(back.buffer().cursor(), m.buffer().cursor());
        assert_eq!(back.actors(), m.actors());
        assert_eq!(back.target_critics(), m.target_critics());
    }

    #[test]
    fn wrong_obs_dim_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        trained(2).save_checkpoint(&path).unwrap();
        let mut other = Maddpg::new(TrainerConfig::default(), 2, 4, vec![1.0; 4], 0).unwrap();
        assert!(matches!(other.load_checkpoint(&path), Err(LearnerError::Shape { what: "checkpoint obs_dim", .. })));
    }

    #[test]
    fn missing_and_corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.ckpt");
        match Maddpg::from_checkpoint(&missing) {
            Err(LearnerError::Io { path, .. }) => assert_eq!(path, missing),
            other => panic!("{other:?}"),
        }
        let path = dir.path().join("bad.ckpt");
        trained(3).save_checkpoint(&path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(Maddpg::from_checkpoint(&path), Err(LearnerError::Format { .. })));
        fs::write(&path, b"garbage").unwrap();
        assert!(matches!(Maddpg::from_checkpoint(&path), Err(LearnerError::Format { .. })));
    }
}
