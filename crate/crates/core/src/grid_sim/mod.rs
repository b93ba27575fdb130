//! Queue-based microscopic simulator of a signalized k x k grid.
//!
//! Each intersection has four approaches (N, E, S, W) and four phases; phase `p`
//! gives green to every movement of approach `p`. Vehicles arrive on boundary
//! lanes as Poisson processes, travel links as point queues, and pick a turn
//! when they reach the stop line. A lane holds at most `lane_capacity`
//! vehicles (queued plus in transit); boundary arrivals that do not fit are
//! held outside the network and keep accruing delay.

mod context;
mod network;
mod sim;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use context::{TrafficContext, ARRIVAL_RATE_RANGE, SPEED_FACTOR_RANGE};
pub use network::{Approach, GridNetwork, LaneId, Turn};
pub use sim::{
    observation_dim, observation_scale, GridSim, IntersectionState, LocalStats, Observation, StepMetrics, StepOutcome, TripRecord,
    ELAPSED_NORM, HISTORY_LEN, NUM_PHASES,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid traffic context: {field} = {value}")]
    InvalidContext { field: &'static str, value: String },
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
    #[error("agent {agent}: action {action} is not a phase index in 0..4")]
    ActionOutOfRange { agent: usize, action: usize },
    #[error("expected {expected} actions, got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error("step called after the episode finished")]
    EpisodeDone,
    #[error("episode metrics need at least one step record")]
    EmptyStream,
}

/// Coefficients of the "flow + wait + pressure" environment reward.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemplateReward {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for TemplateReward {
    fn default() -> Self {
        TemplateReward { alpha: 1.0, beta: 0.02, gamma: 0.01 }
    }
}

impl TemplateReward {
    /// `alpha * outflow - beta * wait - gamma * |pressure|`
    pub fn env_reward(&self, stats: &LocalStats) -> f64 {
        self.alpha * stats.outflow - self.beta * stats.wait - self.gamma * stats.pressure.abs()
    }
}

/// Cycles phases 0 -> 1 -> 2 -> 3 at every intersection, switching every `period` steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FixedTimePolicy {
    period: u32,
}

pub fn fixed_time_policy(period: u32) -> FixedTimePolicy {
    FixedTimePolicy { period: period.max(1) }
}

impl FixedTimePolicy {
    pub fn phase_at(&self, step: u32) -> usize {
        ((step / self.period) % NUM_PHASES as u32) as usize
    }

    pub fn actions(&self, step: u32, agents: usize) -> Vec<usize> {
        vec![self.phase_at(step); agents]
    }
}

/// Episode-level traffic summary. Trip means are `None` when no trip finished.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub throughput_total: usize,
    pub mean_travel_time: Option<f64>,
    /// Mean over finished trips of travel time minus free-flow travel time.
    pub mean_delay: Option<f64>,
    /// Mean over finished trips of time spent stopped at stop lines.
    pub mean_wait: Option<f64>,
    pub mean_queue: f64,
}

pub fn episode_metrics(records: &[StepMetrics]) -> Result<EpisodeMetrics, SimError> {
    if records.is_empty() {
        return Err(SimError::EmptyStream);
    }
    let trips: Vec<&TripRecord> = records.iter().flat_map(|r| r.completed.iter()).collect();
    let mean = |f: &dyn Fn(&TripRecord) -> f64| {
        (!trips.is_empty()).then(|| trips.iter().map(|t| f(t)).sum::<f64>() / trips.len() as f64)
    };
    Ok(EpisodeMetrics {
        throughput_total: records.iter().map(|r| r.throughput).sum(),
        mean_travel_time: mean(&|t| t.travel_time),
        mean_delay: mean(&|t| (t.travel_time - t.free_flow_time).max(0.0)),
        mean_wait: mean(&|t| t.wait_time),
        mean_queue: records.iter().map(|r| r.total_queue as f64).sum::<f64>() / records.len() as f64,
    })
}

/// Relative change of `value` against `baseline`, in percent.
pub fn percent_change(baseline: f64, value: f64) -> f64 {
    100.0 * (value - baseline) / baseline
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_intersection_reward_is_zero() {
        assert_eq!(TemplateReward::default().env_reward(&LocalStats::default()), 0.0);
    }

    #[test]
    fn template_reward_direct_evaluation() {
        let stats = LocalStats { outflow: 2.0, wait: 10.0, pressure: 4.0, ..Default::default() };
        let r = TemplateReward::default().env_reward(&stats);
        assert!((r - 1.76).abs() < 1e-12);
        let neg = LocalStats { pressure: -4.0, ..stats };
        assert_eq!(TemplateReward::default().env_reward(&neg), r);
    }

    #[test]
    fn larger_wait_coefficient_lowers_reward() {
        let stats = LocalStats { outflow: 1.0, wait: 3.0, pressure: 1.0, ..Default::default() };
        let base = TemplateReward::default();
        let doubled = TemplateReward { beta: 2.0 * base.beta, ..base };
        assert!(doubled.env_reward(&stats) < base.env_reward(&stats));
    }

    #[test]
    fn fixed_time_phase_schedule() {
        assert_eq!(fixed_time_policy(10).phase_at(25), 2);
        let p = fixed_time_policy(1);
        let phases: Vec<usize> = (0..6).map(|t| p.phase_at(t)).collect();
        assert_eq!(phases, vec![0, 1, 2, 3, 0, 1]);
    }

    #[test]
    fn percent_change_report() {
        let pct = percent_change(1973.0, 2090.0);
        assert!((pct - 5.93).abs() < 0.01, "{pct}");
        assert_eq!(format!("{pct:+.1}%"), "+5.9%");
    }

    #[test]
    fn no_trips_means_absent_trip_metrics() {
        let m = episode_metrics(&[StepMetrics { total_queue: 3, ..Default::default() }]).unwrap();
        assert_eq!(m.mean_travel_time, None);
        assert_eq!(m.mean_delay, None);
        assert_eq!(m.mean_queue, 3.0);
    }

    #[test]
    fn single_trip_delay() {
        let rec = StepMetrics {
            throughput: 1,
            completed: vec![TripRecord { travel_time: 50.0, free_flow_time: 30.0, wait_time: 20.0 }],
            ..Default::default()
        };
        let m = episode_metrics(&[rec]).unwrap();
        assert_eq!(m.mean_delay, Some(20.0));
        assert_eq!(m.mean_travel_time, Some(50.0));
        assert_eq!(m.throughput_total, 1);
    }

    #[test]
    fn empty_stream_is_an_error() {
        assert!(matches!(episode_metrics(&[]), Err(SimError::EmptyStream)));
    }
}
