use serde::{Deserialize, Serialize};

use super::SimError;

pub const ARRIVAL_RATE_RANGE: (f64, f64) = (0.0, 0.5);
pub const SPEED_FACTOR_RANGE: (f64, f64) = (0.5, 1.5);

/// Demand parameterization for one curriculum stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrafficContext {
    /// Mean arrivals per step on each boundary entry lane.
    pub base_arrival_rate: f64,
    /// Per-approach demand multipliers [N, E, S, W], summing to 4.
    pub approach_asymmetry: [f64; 4],
    /// (straight, left, right), summing to 1.
    pub turn_probs: [f64; 3],
    /// Divides link travel time; >1 is faster traffic.
    pub speed_factor: f64,
    pub difficulty_tag: f64,
    pub noise_seed: u64,
}

impl Default for TrafficContext {
    fn default() -> Self {
        TrafficContext {
            base_arrival_rate: 0.1,
            approach_asymmetry: [1.0; 4],
            turn_probs: [0.6, 0.2, 0.2],
            speed_factor: 1.0,
            difficulty_tag: 0.5,
            noise_seed: 0,
        }
    }
}

fn invalid(field: &'static str, value: impl std::fmt::Debug) -> SimError {
    SimError::InvalidContext { field, value: format!("{value:?}") }
}

impl TrafficContext {
    pub fn validate(&self) -> Result<(), SimError> {
        let r = self.base_arrival_rate;
        if !r.is_finite() || r < ARRIVAL_RATE_RANGE.0 || r > ARRIVAL_RATE_RANGE.1 {
            return Err(invalid("base_arrival_rate", r));
        }
        let a = self.approach_asymmetry;
        if a.iter().any(|x| !x.is_finite() || *x < 0.0) || (a.iter().sum::<f64>() - 4.0).abs() > 1e-9 {
            return Err(invalid("approach_asymmetry", a));
        }
        let t = self.turn_probs;
        if t.iter().any(|x| !x.is_finite() || *x < 0.0) || (t.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(invalid("turn_probs", t));
        }
        let s = self.speed_factor;
        if !s.is_finite() || s < SPEED_FACTOR_RANGE.0 || s > SPEED_FACTOR_RANGE.1 {
            return Err(invalid("speed_factor", s));
        }
        if !self.difficulty_tag.is_finite() {
            return Err(invalid("difficulty_tag", self.difficulty_tag));
        }
        Ok(())
    }

    /// Projects every field into its valid range. Total: any input, including
    /// non-finite values, yields a context that passes [`validate`](Self::validate).
    pub fn clamped(mut self) -> Self {
        self.base_arrival_rate = clamp_or(self.base_arrival_rate, ARRIVAL_RATE_RANGE, 0.1);
        self.speed_factor = clamp_or(self.speed_factor, SPEED_FACTOR_RANGE, 1.0);
        self.approach_asymmetry = normalize(self.approach_asymmetry, 4.0, 1.0);
        self.turn_probs = normalize(self.turn_probs, 1.0, 1.0 / 3.0);
        if !self.difficulty_tag.is_finite() {
            self.difficulty_tag = 0.5;
        }
        self
    }
}

fn clamp_or(x: f64, (lo, hi): (f64, f64), fallback: f64) -> f64 {
    if x.is_finite() {
        x.clamp(lo, hi)
    } else {
        fallback
    }
}

fn normalize<const N: usize>(v: [f64; N], total: f64, uniform: f64) -> [f64; N] {
    let mut out = v.map(|x| if x.is_finite() && x > 0.0 { x } else { 0.0 });
    let sum: f64 = out.iter().sum();
    if !(sum > 0.0) || !sum.is_finite() {
        return [uniform; N];
    }
    for x in out.iter_mut() {
        *x = *x / sum * total;
    }
    // absorb rounding into the largest entry so the sum is exact to 1e-12
    let err = total - out.iter().sum::<f64>();
    let imax = (0..N).max_by(|&i, &j| out[i].total_cmp(&out[j])).unwrap_or(0);
    out[imax] += err;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn validation_names_the_field() {
        let ctx = TrafficContext { speed_factor: 3.0, ..Default::default() };
        match ctx.validate() {
            Err(SimError::InvalidContext { field, .. }) => assert_eq!(field, "speed_factor"),
            other => panic!("unexpected {other:?}"),
        }
        let ctx = TrafficContext { turn_probs: [0.5, 0.5, 0.5], ..Default::default() };
        assert!(matches!(ctx.validate(), Err(SimError::InvalidContext { field: "turn_probs", .. })));
    }

    proptest! {
        #[test]
        fn clamping_is_total(
            rate in prop::num::f64::ANY,
            speed in prop::num::f64::ANY,
            asym in prop::array::uniform4(prop::num::f64::ANY),
            turns in prop::array::uniform3(prop::num::f64::ANY),
            tag in prop::num::f64::ANY,
        ) {
            let ctx = TrafficContext {
                base_arrival_rate: rate,
                approach_asymmetry: asym,
                turn_probs: turns,
                speed_factor: speed,
                difficulty_tag: tag,
                noise_seed: 1,
            }
            .clamped();
            prop_assert!(ctx.validate().is_ok(), "{ctx:?}");
        }
    }
}
