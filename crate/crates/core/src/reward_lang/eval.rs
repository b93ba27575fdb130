use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ast::{BinOp, Expr, Feature, Func};
use crate::grid_sim::LocalStats;

/// One value per whitelisted feature, in per-step agent-local units.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub queue: f64,
    pub wait: f64,
    pub pressure: f64,
    pub outflow: f64,
    pub inflow: f64,
    pub occupancy: f64,
    pub phase_elapsed: f64,
    pub throughput: f64,
}

impl FeatureMap {
    pub fn get(&self, f: Feature) -> f64 {
        match f {
            Feature::Queue => self.queue,
            Feature::Wait => self.wait,
            Feature::Pressure => self.pressure,
            Feature::Outflow => self.outflow,
            Feature::Inflow => self.inflow,
            Feature::Occupancy => self.occupancy,
            Feature::PhaseElapsed => self.phase_elapsed,
            Feature::Throughput => self.throughput,
        }
    }

    pub fn set(&mut self, f: Feature, v: f64) {
        let slot = match f {
            Feature::Queue => &mut self.queue,
            Feature::Wait => &mut self.wait,
            Feature::Pressure => &mut self.pressure,
            Feature::Outflow => &mut self.outflow,
            Feature::Inflow => &mut self.inflow,
            Feature::Occupancy => &mut self.occupancy,
            Feature::PhaseElapsed => &mut self.phase_elapsed,
            Feature::Throughput => &mut self.throughput,
        };
        *slot = v;
    }

    pub fn is_finite(&self) -> bool {
        Feature::ALL.iter().all(|f| self.get(*f).is_finite())
    }
}

impl From<&LocalStats> for FeatureMap {
    fn from(s: &LocalStats) -> Self {
        FeatureMap {
            queue: s.queue,
            wait: s.wait,
            pressure: s.pressure,
            outflow: s.outflow,
            inflow: s.inflow,
            occupancy: s.occupancy,
            phase_elapsed: s.phase_elapsed,
            throughput: s.throughput,
        }
    }
}

/// Evaluation ran past its node budget.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BudgetExceeded;

/// Strict evaluation. Division by zero yields NaN, which every operator
/// (including `min`, `max` and `clip`) propagates.
pub fn eval_expr(e: &Expr, f: &FeatureMap) -> f64 {
    let mut unlimited = u64::MAX;
    eval_budgeted(e, f, &mut unlimited).unwrap_or(f64::NAN)
}

pub fn eval_budgeted(e: &Expr, f: &FeatureMap, budget: &mut u64) -> Result<f64, BudgetExceeded> {
    if *budget == 0 {
        return Err(BudgetExceeded);
    }
    *budget -= 1;
    Ok(match e {
        Expr::Num(v) => *v,
        Expr::Feature(x) => f.get(*x),
        Expr::Neg(a) => -eval_budgeted(a, f, budget)?,
        Expr::Binary(op, l, r) => {
            let a = eval_budgeted(l, f, budget)?;
            let b = eval_budgeted(r, f, budget)?;
            match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                BinOp::Mul => a * b,
                BinOp::Div if b == 0.0 => f64::NAN,
                BinOp::Div => a / b,
            }
        }
        Expr::Call(func, args) => {
            let mut vals = Vec::with_capacity(args.len());
            for a in args {
                vals.push(eval_budgeted(a, f, budget)?);
            }
            if vals.iter().any(|v| v.is_nan()) {
                return Ok(f64::NAN);
            }
            match func {
                Func::Abs => vals[0].abs(),
                Func::Tanh => vals[0].tanh(),
                Func::Min => vals.iter().copied().fold(f64::INFINITY, f64::min),
                Func::Max => vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                Func::Clip => {
                    let (x, lo, hi) = (vals[0], vals[1], vals[2]);
                    if lo > hi {
                        f64::NAN
                    } else {
                        x.clamp(lo, hi)
                    }
                }
            }
        }
    })
}

/// Source of feature maps for the sandbox stage.
pub trait FeatureSampler {
    fn sample(&mut self, k: usize) -> Vec<FeatureMap>;
}

/// Draws from fixed ranges covering what a 1-lane intersection produces:
/// queue 0..80, wait 0..2000, pressure -40..40, outflow/inflow 0..8,
/// occupancy and phase_elapsed 0..1, throughput 0..8.
pub struct SyntheticSampler<R: Rng> {
    rng: R,
}

impl<R: Rng> SyntheticSampler<R> {
    pub fn new(rng: R) -> Self {
        SyntheticSampler { rng }
    }
}

pub const SYNTHETIC_RANGES: [(Feature, f64, f64); 8] = [
    (Feature::Queue, 0.0, 80.0),
    (Feature::Wait, 0.0, 2000.0),
    (Feature::Pressure, -40.0, 40.0),
    (Feature::Outflow, 0.0, 8.0),
    (Feature::Inflow, 0.0, 8.0),
    (Feature::Occupancy, 0.0, 1.0),
    (Feature::PhaseElapsed, 0.0, 1.0),
    (Feature::Throughput, 0.0, 8.0),
];

impl<R: Rng> FeatureSampler for SyntheticSampler<R> {
    fn sample(&mut self, k: usize) -> Vec<FeatureMap> {
        (0..k)
            .map(|_| {
                let mut m = FeatureMap::default();
                for (f, lo, hi) in SYNTHETIC_RANGES {
                    let v = self.rng.random_range(lo..=hi);
                    // Counts are integers in the simulator.
                    let v = if matches!(f, Feature::Occupancy | Feature::PhaseElapsed) { v } else { v.round() };
                    m.set(f, v);
                }
                m
            })
            .collect()
    }
}

/// Draws uniformly with replacement from states recorded during rollouts.
pub struct RecordedSampler<R: Rng> {
    states: Vec<FeatureMap>,
    rng: R,
}

impl<R: Rng> RecordedSampler<R> {
    pub fn new(states: Vec<FeatureMap>, rng: R) -> Self {
        RecordedSampler { states, rng }
    }
}

impl<R: Rng> FeatureSampler for RecordedSampler<R> {
    fn sample(&mut self, k: usize) -> Vec<FeatureMap> {
        if self.states.is_empty() {
            return Vec::new();
        }
        (0..k).map(|_| self.states[self.rng.random_range(0..self.states.len())]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn nan_propagates_through_min_and_max() {
        let nan = Expr::Binary(BinOp::Div, Box::new(Expr::Num(1.0)), Box::new(Expr::Num(0.0)));
        let m = Expr::Call(Func::Min, vec![nan.clone(), Expr::Num(1.0)]);
        assert!(eval_expr(&m, &FeatureMap::default()).is_nan());
        let m = Expr::Call(Func::Max, vec![Expr::Num(1.0), nan]);
        assert!(eval_expr(&m, &FeatureMap::default()).is_nan());
    }

    #[test]
    fn budget_stops_evaluation() {
        let e = Expr::Binary(BinOp::Add, Box::new(Expr::Num(1.0)), Box::new(Expr::Num(2.0)));
        let mut b = 2;
        assert_eq!(eval_budgeted(&e, &FeatureMap::default(), &mut b), Err(BudgetExceeded));
        let mut b = 3;
        assert_eq!(eval_budgeted(&e, &FeatureMap::default(), &mut b), Ok(3.0));
    }

    #[test]
    fn synthetic_samples_stay_in_range() {
        let mut s = SyntheticSampler::new(ChaCha8Rng::seed_from_u64(3));
        for m in s.sample(500) {
            for (f, lo, hi) in SYNTHETIC_RANGES {
                assert!((lo..=hi).contains(&m.get(f)));
            }
        }
    }

    #[test]
    fn recorded_sampler_only_returns_recorded_states() {
        let states = vec![FeatureMap { queue: 1.0, ..Default::default() }, FeatureMap { queue: 2.0, ..Default::default() }];
        let mut s = RecordedSampler::new(states.clone(), ChaCha8Rng::seed_from_u64(0));
        let out = s.sample(100);
        assert_eq!(out.len(), 100);
        assert!(out.iter().all(|m| states.contains(m)));
    }
}
