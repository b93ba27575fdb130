use rand::Rng;

/// Fixed-capacity FIFO store of joint transitions.
///
/// Observations are stored as `f32`; everything the learner computes is `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    agents: usize,
    obs_dim: usize,
    pub(crate) obs: Vec<f32>,
    pub(crate) next_obs: Vec<f32>,
    pub(crate) actions: Vec<u8>,
    pub(crate) rewards: Vec<f64>,
    pub(crate) dones: Vec<u8>,
    pub(crate) cursor: usize,
    pub(crate) len: usize,
}

/// A sampled batch in row-major (batch, agent, feature) layout.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub obs: Vec<f64>,
    pub next_obs: Vec<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub dones: Vec<f64>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, agents: usize, obs_dim: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        let width = agents * obs_dim;
        ReplayBuffer {
            capacity,
            agents,
            obs_dim,
            obs: vec![0.0; capacity * width],
            next_obs: vec![0.0; capacity * width],
            actions: vec![0; capacity * agents],
            rewards: vec![0.0; capacity * agents],
            dones: vec![0; capacity],
            cursor: 0,
            len: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Slot the next transition will be written to.
    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    /// `obs` and `next_obs` are flat (agent, feature) rows.
    pub fn push(&mut self, obs: &[f64], actions: &[usize], rewards: &[f64], next_obs: &[f64], done: bool) {
        let width = self.agents * self.obs_dim;
        assert_eq!(obs.len(), width);
        assert_eq!(next_obs.len(), width);
        assert_eq!(actions.len(), self.agents);
        assert_eq!(rewards.len(), self.agents);
        let i = self.cursor;
        for (dst, src) in self.obs[i * width..(i + 1) * width].iter_mut().zip(obs) {
            *dst = *src as f32;
        }
        for (dst, src) in self.next_obs[i * width..(i + 1) * width].iter_mut().zip(next_obs) {
            *dst = *src as f32;
        }
        for (dst, src) in self.actions[i * self.agents..(i + 1) * self.agents].iter_mut().zip(actions) {
            *dst = *src as u8;
        }
        self.rewards[i * self.agents..(i + 1) * self.agents].copy_from_slice(rewards);
        self.dones[i] = done as u8;
        self.cursor = (self.cursor + 1) % self.capacity;
        self.len = (self.len + 1).min(self.capacity);
    }

    /// Uniform sample of distinct stored transitions.
    pub fn sample(&self, batch: usize, rng: &mut impl Rng) -> Batch {
        assert!(batch <= self.len, "cannot sample {batch} of {} transitions", self.len);
        let idx = rand::seq::index::sample(rng, self.len, batch);
        self.gather(idx.iter())
    }

    pub fn gather(&self, indices: impl Iterator<Item = usize>) -> Batch {
        let width = self.agents * self.obs_dim;
        let mut b = Batch::default();
        for i in indices {
            b.size += 1;
            b.obs.extend(self.obs[i * width..(i + 1) * width].iter().map(|v| *v as f64));
            b.next_obs.extend(self.next_obs[i * width..(i + 1) * width].iter().map(|v| *v as f64));
            b.actions.extend(self.actions[i * self.agents..(i + 1) * self.agents].iter().map(|a| *a as usize));
            b.rewards.extend_from_slice(&self.rewards[i * self.agents..(i + 1) * self.agents]);
            b.dones.push(self.dones[i] as f64);
        }
        b
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn push_marked(buf: &mut ReplayBuffer, mark: f64) {
        let w = buf.agents * buf.obs_dim;
        buf.push(&vec![mark; w], &vec![0; buf.agents], &vec![mark; buf.agents], &vec![mark; w], false);
    }

    #[test]
    fn evicts_oldest_first() {
        let mut buf = ReplayBuffer::new(3, 2, 2);
        for m in 0..5 {
            push_marked(&mut buf, m as f64);
        }
        assert_eq!(buf.len(), 3);
        assert_eq!(buf.cursor(), 2);
        let all = buf.gather(0..3);
        let mut marks: Vec<f64> = all.rewards.chunks(2).map(|r| r[0]).collect();
        marks.sort_by(f64::total_cmp);
        assert_eq!(marks, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn batch_has_no_repeats() {
        let mut buf = ReplayBuffer::new(50, 1, 1);
        for m in 0..50 {
            push_marked(&mut buf, m as f64);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = buf.sample(50, &mut rng);
        let mut marks = b.rewards.clone();
        marks.sort_by(f64::total_cmp);
        marks.dedup();
        assert_eq!(marks.len(), 50);
    }
}
