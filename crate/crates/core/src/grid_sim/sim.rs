use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{DiscreteCDF, Poisson};
use serde::{Deserialize, Serialize};

use super::network::{Approach, GridNetwork, LaneId, Turn};
use super::{SimError, TrafficContext};

/// Steps of total-queue history carried in each observation.
pub const HISTORY_LEN: usize = 3;
/// Elapsed-phase steps that map to 1.0 in the observation.
pub const ELAPSED_NORM: f64 = 30.0;
pub const NUM_PHASES: usize = 4;

#[derive(Clone, Debug)]
struct Vehicle {
    /// Seeds this vehicle's turn choices.
    key: u64,
    spawn_step: u32,
    links: u32,
    waited: u32,
    waited_here: u32,
    turn: Turn,
}

#[derive(Clone, Debug, Default)]
struct Lane {
    queue: VecDeque<Vehicle>,
    /// (step at which the vehicle reaches the stop line, vehicle)
    transit: VecDeque<(u32, Vehicle)>,
}

impl Lane {
    fn load(&self) -> usize {
        self.queue.len() + self.transit.len()
    }
}

/// Signal and queue state of one intersection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntersectionState {
    /// Queued vehicles per incoming lane, indexed `approach * lanes_per_approach + lane`.
    pub queue: Vec<usize>,
    pub phase: usize,
    pub elapsed_phase: u32,
    pub inflow_count: usize,
    pub outflow_count: usize,
}

/// Agent-local quantities of the last step, used by reward functions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LocalStats {
    /// Vehicles queued at this intersection after discharge.
    pub queue: f64,
    /// Queue-weighted wait: sum over queued vehicles of the steps each has waited here.
    pub wait: f64,
    /// Incoming queue minus queue on the downstream lanes this intersection feeds.
    pub pressure: f64,
    pub outflow: f64,
    pub inflow: f64,
    /// Mean lane load / capacity.
    pub occupancy: f64,
    /// Elapsed phase steps normalized to [0, 1].
    pub phase_elapsed: f64,
    /// Vehicles that left the network from this intersection.
    pub throughput: f64,
}

/// One finished trip.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripRecord {
    pub travel_time: f64,
    /// Links traversed times the network's nominal link time; slowdowns from
    /// a low speed factor count as delay.
    pub free_flow_time: f64,
    pub wait_time: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub throughput: usize,
    /// Queued vehicles in the network plus vehicles held at the boundary.
    pub total_queue: usize,
    /// Vehicle-seconds of delay incurred this step (queued and boundary-held vehicles).
    pub delay: f64,
    /// Vehicle-seconds spent stopped at stop lines this step.
    pub wait: f64,
    pub completed: Vec<TripRecord>,
    /// Vehicles that could not enter because their entry lane was full.
    pub rejected: usize,
}

pub type Observation = Vec<f64>;

/// Result of one simulator step.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub observations: Vec<Observation>,
    pub stats: Vec<LocalStats>,
    pub metrics: StepMetrics,
    pub done: bool,
}

/// Deterministic point-queue simulator of a signalized grid.
#[derive(Clone, Debug)]
pub struct GridSim {
    network: GridNetwork,
    context: TrafficContext,
    steps_per_episode: u32,
    link_delay: u32,
    /// Two draws per entry lane per step: a uniform mapped through the Poisson
    /// quantile function and a key for the vehicles spawned. For a fixed seed a
    /// higher rate only adds vehicles, and shared vehicles turn identically.
    arrival_rng: ChaCha8Rng,
    arrivals: Vec<(LaneId, Option<Poisson>)>,
    lanes: Vec<Vec<Lane>>,
    backlog: Vec<VecDeque<Vehicle>>,
    phase: Vec<usize>,
    elapsed: Vec<u32>,
    inflow: Vec<usize>,
    outflow: Vec<usize>,
    exits: Vec<usize>,
    history: Vec<[f64; HISTORY_LEN]>,
    step: u32,
    spawned: u64,
    exited: u64,
}

impl GridSim {
    pub fn new(network: GridNetwork, steps_per_episode: u32) -> Result<Self, SimError> {
        network.validate()?;
        if steps_per_episode == 0 {
            return Err(SimError::InvalidNetwork("steps_per_episode must be at least 1".into()));
        }
        let n = network.num_agents();
        let mut sim = GridSim {
            context: TrafficContext::default(),
            steps_per_episode,
            link_delay: network.link_travel_steps,
            arrival_rng: ChaCha8Rng::seed_from_u64(0),
            arrivals: Vec::new(),
            lanes: vec![vec![Lane::default(); network.lanes_per_node()]; n],
            backlog: Vec::new(),
            phase: vec![0; n],
            elapsed: vec![0; n],
            inflow: vec![0; n],
            outflow: vec![0; n],
            exits: vec![0; n],
            history: vec![[0.0; HISTORY_LEN]; n],
            step: 0,
            spawned: 0,
            exited: 0,
            network,
        };
        // an unreset simulator is "done" until reset is called
        sim.step = steps_per_episode;
        Ok(sim)
    }

    pub fn network(&self) -> &GridNetwork {
        &self.network
    }

    pub fn context(&self) -> &TrafficContext {
        &self.context
    }

    pub fn num_agents(&self) -> usize {
        self.network.num_agents()
    }

    pub fn steps_per_episode(&self) -> u32 {
        self.steps_per_episode
    }

    pub fn current_step(&self) -> u32 {
        self.step
    }

    /// Steps needed to traverse one link under the current context.
    pub fn link_delay(&self) -> u32 {
        self.link_delay
    }

    /// Length of every agent's observation vector: per-lane queues, inflow, outflow,
    /// one-hot phase, elapsed phase, per-lane occupancy and total-queue history.
    pub fn observation_dim(&self) -> usize {
        observation_dim(&self.network)
    }

    pub fn reset(&mut self, context: &TrafficContext, seed: u64) -> Result<Vec<Observation>, SimError> {
        context.validate()?;
        let net = &self.network;
        let n = net.num_agents();
        self.context = context.clone();
        self.link_delay = (net.link_travel_steps as f64 / context.speed_factor).ceil().max(1.0) as u32;
        self.arrival_rng = ChaCha8Rng::seed_from_u64(seed);
        self.arrivals = net
            .entry_lanes()
            .into_iter()
            .map(|lane| {
                let rate = context.base_arrival_rate * context.approach_asymmetry[lane.approach.index()]
                    / net.lanes_per_approach as f64;
                let dist = if rate > 0.0 { Poisson::new(rate).ok() } else { None };
                (lane, dist)
            })
            .collect();
        self.backlog = vec![VecDeque::new(); self.arrivals.len()];
        self.lanes = vec![vec![Lane::default(); net.lanes_per_node()]; n];
        self.phase = vec![0; n];
        self.elapsed = vec![0; n];
        self.inflow = vec![0; n];
        self.outflow = vec![0; n];
        self.exits = vec![0; n];
        self.history = vec![[0.0; HISTORY_LEN]; n];
        self.step = 0;
        self.spawned = 0;
        self.exited = 0;
        Ok(self.observations())
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.steps_per_episode
    }

    pub fn step(&mut self, actions: &[usize]) -> Result<StepOutcome, SimError> {
        let n = self.num_agents();
        if self.is_done() {
            return Err(SimError::EpisodeDone);
        }
        if actions.len() != n {
            return Err(SimError::ActionCount { expected: n, got: actions.len() });
        }
        if let Some((agent, &action)) = actions.iter().enumerate().find(|(_, a)| **a >= NUM_PHASES) {
            return Err(SimError::ActionOutOfRange { agent, action });
        }
        let now = self.step;
        let lpa = self.network.lanes_per_approach;
        let capacity = self.network.lane_capacity;

        for (i, &a) in actions.iter().enumerate() {
            if a != self.phase[i] {
                self.phase[i] = a;
                self.elapsed[i] = 0;
            } else {
                self.elapsed[i] += 1;
            }
        }
        self.inflow.iter_mut().for_each(|x| *x = 0);
        self.outflow.iter_mut().for_each(|x| *x = 0);
        self.exits.iter_mut().for_each(|x| *x = 0);

        // boundary: held vehicles first, then fresh Poisson arrivals
        let mut rejected = 0;
        for k in 0..self.arrivals.len() {
            let (id, dist) = self.arrivals[k];
            let u: f64 = self.arrival_rng.random();
            let base: u64 = self.arrival_rng.random();
            let count = match dist {
                Some(p) => p.inverse_cdf(u),
                None => 0,
            };
            for i in 0..count {
                self.backlog[k].push_back(Vehicle { key: base.wrapping_add(i), spawn_step: now, links: 0, waited: 0, waited_here: 0, turn: Turn::Straight });
            }
            self.spawned += count;
            let start = id.approach.index() * lpa;
            while !self.backlog[k].is_empty() {
                let lanes = &mut self.lanes[id.node][start..start + lpa];
                let Some(slot) = least_loaded(lanes, capacity) else { break };
                let v = self.backlog[k].pop_front().expect("non-empty");
                lanes[slot].transit.push_back((now + self.link_delay, v));
            }
            rejected += self.backlog[k].len();
        }

        // vehicles reaching the stop line pick their movement
        let [ps, pl, _] = self.context.turn_probs;
        for node in 0..n {
            for lane in self.lanes[node].iter_mut() {
                while lane.transit.front().is_some_and(|(ready, _)| *ready <= now) {
                    let (_, mut v) = lane.transit.pop_front().expect("non-empty");
                    let u: f64 = ChaCha8Rng::seed_from_u64(v.key ^ u64::from(v.links).wrapping_mul(0x9e37_79b9_7f4a_7c15)).random();
                    v.turn = if u < ps {
                        Turn::Straight
                    } else if u < ps + pl {
                        Turn::Left
                    } else {
                        Turn::Right
                    };
                    v.links += 1;
                    v.waited_here = 0;
                    lane.queue.push_back(v);
                    self.inflow[node] += 1;
                }
            }
        }

        // discharge green lanes
        let mut completed = Vec::new();
        for node in 0..n {
            let approach = Approach::from_index(self.phase[node]);
            for l in 0..lpa {
                let idx = approach.index() * lpa + l;
                for _ in 0..self.network.saturation_flow {
                    let Some(front) = self.lanes[node][idx].queue.front() else { break };
                    let heading = front.turn.apply(approach.heading());
                    match self.network.neighbour(node, heading) {
                        None => {
                            let v = self.lanes[node][idx].queue.pop_front().expect("non-empty");
                            completed.push(TripRecord {
                                travel_time: (now - v.spawn_step) as f64,
                                free_flow_time: (v.links * self.network.link_travel_steps) as f64,
                                wait_time: v.waited as f64,
                            });
                            self.outflow[node] += 1;
                            self.exits[node] += 1;
                            self.exited += 1;
                        }
                        Some(next) => {
                            let start = Approach::from_heading(heading).index() * lpa;
                            let Some(slot) = least_loaded(&self.lanes[next][start..start + lpa], capacity) else {
                                break;
                            };
                            let v = self.lanes[node][idx].queue.pop_front().expect("non-empty");
                            self.lanes[next][start + slot].transit.push_back((now + self.link_delay, v));
                            self.outflow[node] += 1;
                        }
                    }
                }
            }
        }

        // everything still queued or held waits one step
        let mut queued = 0usize;
        for node in 0..n {
            for lane in self.lanes[node].iter_mut() {
                for v in lane.queue.iter_mut() {
                    v.waited += 1;
                    v.waited_here += 1;
                }
                queued += lane.queue.len();
            }
        }
        let mut held = 0usize;
        for q in self.backlog.iter_mut() {
            for v in q.iter_mut() {
                v.waited += 1;
            }
            held += q.len();
        }

        for node in 0..n {
            let total = self.lanes[node].iter().map(|l| l.queue.len()).sum::<usize>() as f64;
            let h = &mut self.history[node];
            h.rotate_right(1);
            h[0] = total;
        }

        self.step += 1;
        let metrics = StepMetrics {
            throughput: completed.len(),
            total_queue: queued + held,
            delay: (queued + held) as f64,
            wait: queued as f64,
            completed,
            rejected,
        };
        Ok(StepOutcome {
            observations: self.observations(),
            stats: (0..n).map(|i| self.local_stats(i)).collect(),
            metrics,
            done: self.is_done(),
        })
    }

    pub fn intersection_state(&self, node: usize) -> IntersectionState {
        IntersectionState {
            queue: self.lanes[node].iter().map(|l| l.queue.len()).collect(),
            phase: self.phase[node],
            elapsed_phase: self.elapsed[node],
            inflow_count: self.inflow[node],
            outflow_count: self.outflow[node],
        }
    }

    pub fn local_stats(&self, node: usize) -> LocalStats {
        let lanes = &self.lanes[node];
        let capacity = self.network.lane_capacity as f64;
        let queue: usize = lanes.iter().map(|l| l.queue.len()).sum();
        let wait: u32 = lanes.iter().flat_map(|l| l.queue.iter()).map(|v| v.waited_here).sum();
        let occupancy = lanes.iter().map(|l| l.load() as f64 / capacity).sum::<f64>() / lanes.len() as f64;
        LocalStats {
            queue: queue as f64,
            wait: wait as f64,
            pressure: queue as f64 - self.downstream_queue(node) as f64,
            outflow: self.outflow[node] as f64,
            inflow: self.inflow[node] as f64,
            occupancy,
            phase_elapsed: (self.elapsed[node] as f64 / ELAPSED_NORM).min(1.0),
            throughput: self.exits[node] as f64,
        }
    }

    /// Queue on the neighbouring lanes this intersection discharges into.
    fn downstream_queue(&self, node: usize) -> usize {
        let lpa = self.network.lanes_per_approach;
        let mut total = 0;
        for out in [(1, 0), (0, -1), (-1, 0), (0, 1)] {
            if let Some(next) = self.network.neighbour(node, out) {
                let start = Approach::from_heading(out).index() * lpa;
                total += self.lanes[next][start..start + lpa].iter().map(|l| l.queue.len()).sum::<usize>();
            }
        }
        total
    }

    /// Vehicles spawned since reset, including ones held at the boundary.
    pub fn vehicles_spawned(&self) -> u64 {
        self.spawned
    }

    pub fn vehicles_exited(&self) -> u64 {
        self.exited
    }

    /// Vehicles queued, in transit, or held at the boundary.
    pub fn vehicles_in_network(&self) -> u64 {
        let lanes: usize = self.lanes.iter().flatten().map(Lane::load).sum();
        let held: usize = self.backlog.iter().map(VecDeque::len).sum();
        (lanes + held) as u64
    }

    pub fn observations(&self) -> Vec<Observation> {
        (0..self.num_agents()).map(|i| self.observe(i)).collect()
    }

    fn observe(&self, node: usize) -> Observation {
        let lanes = &self.lanes[node];
        let capacity = self.network.lane_capacity as f64;
        let mut obs = Vec::with_capacity(self.observation_dim());
        obs.extend(lanes.iter().map(|l| l.queue.len() as f64));
        obs.push(self.inflow[node] as f64);
        obs.push(self.outflow[node] as f64);
        obs.extend((0..NUM_PHASES).map(|p| if p == self.phase[node] { 1.0 } else { 0.0 }));
        obs.push((self.elapsed[node] as f64 / ELAPSED_NORM).min(1.0));
        obs.extend(lanes.iter().map(|l| (l.load() as f64 / capacity).min(1.0)));
        obs.extend_from_slice(&self.history[node]);
        obs
    }
}

pub fn observation_dim(network: &GridNetwork) -> usize {
    2 * network.lanes_per_node() + 2 + NUM_PHASES + 1 + HISTORY_LEN
}

/// Per-feature multipliers that bring raw observations to roughly unit scale.
pub fn observation_scale(network: &GridNetwork) -> Vec<f64> {
    let lanes = network.lanes_per_node();
    let cap = network.lane_capacity as f64;
    let flow = (network.saturation_flow * network.lanes_per_approach).max(1) as f64;
    let mut s = Vec::with_capacity(observation_dim(network));
    s.extend(std::iter::repeat_n(1.0 / cap, lanes));
    s.push(1.0 / flow);
    s.push(1.0 / flow);
    s.extend(std::iter::repeat_n(1.0, NUM_PHASES + 1 + lanes));
    s.extend(std::iter::repeat_n(1.0 / (cap * lanes as f64), HISTORY_LEN));
    s
}

fn least_loaded(lanes: &[Lane], capacity: usize) -> Option<usize> {
    lanes
        .iter()
        .enumerate()
        .filter(|(_, l)| l.load() < capacity)
        .min_by_key(|(i, l)| (l.load(), *i))
        .map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_sim::fixed_time_policy;

    fn ctx(rate: f64) -> TrafficContext {
        TrafficContext { base_arrival_rate: rate, ..Default::default() }
    }

    #[test]
    fn reset_gives_one_observation_per_agent() {
        let mut sim = GridSim::new(GridNetwork::default(), 360).unwrap();
        let obs = sim.reset(&ctx(0.1), 200).unwrap();
        assert_eq!(obs.len(), 16);
        assert!(obs.iter().all(|o| o.len() == sim.observation_dim()));
        assert_eq!(sim.observation_dim(), 18);
    }

    #[test]
    fn zero_demand_has_no_arrivals() {
        let mut sim = GridSim::new(GridNetwork::grid(2, 2), 360).unwrap();
        sim.reset(&ctx(0.0), 1).unwrap();
        let out = sim.step(&[0; 4]).unwrap();
        assert_eq!(sim.vehicles_spawned(), 0);
        assert_eq!(out.metrics.total_queue, 0);
    }

    #[test]
    fn reset_is_deterministic() {
        let mut a = GridSim::new(GridNetwork::grid(3, 3), 360).unwrap();
        let mut b = GridSim::new(GridNetwork::grid(3, 3), 360).unwrap();
        let c = ctx(0.3);
        assert_eq!(a.reset(&c, 7).unwrap(), b.reset(&c, 7).unwrap());
        for t in 0..100 {
            let acts = vec![(t / 5) % 4; 9];
            let x = a.step(&acts).unwrap();
            let y = b.step(&acts).unwrap();
            assert_eq!(x.observations, y.observations);
            assert_eq!(x.metrics, y.metrics);
        }
    }

    #[test]
    fn done_exactly_at_final_step() {
        let mut sim = GridSim::new(GridNetwork::grid(2, 2), 360).unwrap();
        sim.reset(&ctx(0.1), 3).unwrap();
        for t in 1..=360 {
            let out = sim.step(&[0; 4]).unwrap();
            assert_eq!(out.done, t == 360, "step {t}");
        }
        assert!(matches!(sim.step(&[0; 4]), Err(SimError::EpisodeDone)));
    }

    #[test]
    fn rejects_bad_actions() {
        let mut sim = GridSim::new(GridNetwork::grid(2, 2), 10).unwrap();
        sim.reset(&ctx(0.1), 3).unwrap();
        assert!(matches!(sim.step(&[0, 4, 0, 0]), Err(SimError::ActionOutOfRange { agent: 1, action: 4 })));
        assert!(matches!(sim.step(&[0, 0]), Err(SimError::ActionCount { .. })));
    }

    #[test]
    fn rejects_invalid_context() {
        let mut sim = GridSim::new(GridNetwork::grid(2, 2), 10).unwrap();
        let bad = TrafficContext { base_arrival_rate: 0.9, ..Default::default() };
        assert!(matches!(sim.reset(&bad, 1), Err(SimError::InvalidContext { field: "base_arrival_rate", .. })));
    }

    fn single_with_queue(queue: usize) -> GridSim {
        let mut sim = GridSim::new(GridNetwork::grid(1, 1), 360).unwrap();
        sim.reset(&ctx(0.0), 1).unwrap();
        for _ in 0..queue {
            sim.lanes[0][0].queue.push_back(Vehicle { key: 0, spawn_step: 0, links: 1, waited: 0, waited_here: 0, turn: Turn::Straight });
        }
        sim
    }

    #[test]
    fn green_lane_discharges_saturation_flow() {
        // queue 5 on the north approach, phase 0 serves north, saturation 2
        let mut sim = single_with_queue(5);
        let out = sim.step(&[0]).unwrap();
        assert_eq!(sim.intersection_state(0).queue[0], 3);
        assert_eq!(out.metrics.throughput, 2);
    }

    #[test]
    fn red_lane_does_not_discharge() {
        let mut sim = single_with_queue(5);
        let out = sim.step(&[2]).unwrap();
        assert_eq!(sim.intersection_state(0).queue[0], 5);
        assert_eq!(out.metrics.throughput, 0);
        assert_eq!(out.stats[0].outflow, 0.0);
    }

    #[test]
    fn elapsed_resets_only_on_phase_change() {
        let mut sim = single_with_queue(0);
        sim.step(&[0]).unwrap();
        sim.step(&[0]).unwrap();
        assert_eq!(sim.intersection_state(0).elapsed_phase, 2);
        sim.step(&[1]).unwrap();
        assert_eq!(sim.intersection_state(0).elapsed_phase, 0);
        assert_eq!(sim.intersection_state(0).phase, 1);
    }

    #[test]
    fn vehicles_are_conserved() {
        for seed in 0..5 {
            let mut sim = GridSim::new(GridNetwork::grid(3, 3), 360).unwrap();
            sim.reset(&ctx(0.45), seed).unwrap();
            let policy = fixed_time_policy(7);
            for t in 0..360 {
                sim.step(&policy.actions(t, 9)).unwrap();
                assert_eq!(sim.vehicles_spawned(), sim.vehicles_exited() + sim.vehicles_in_network());
            }
        }
    }

    #[test]
    fn observations_stay_bounded_under_saturation() {
        let mut sim = GridSim::new(GridNetwork::grid(2, 2), 360).unwrap();
        sim.reset(&ctx(0.5), 11).unwrap();
        for _ in 0..360 {
            let out = sim.step(&[0, 0, 0, 0]).unwrap();
            for o in &out.observations {
                assert!(o.iter().all(|x| x.is_finite()));
                let occ = &o[11..15];
                assert!(occ.iter().all(|x| (0.0..=1.0).contains(x)));
            }
            for node in 0..4 {
                assert!(sim.lanes[node].iter().all(|l| l.load() <= 20));
            }
        }
    }
}
