//! Seed-level summaries, risk-adjusted metrics and pairwise tests.
//!
//! Condition-level functions take per-seed summaries only; raw episodes are
//! never pooled across seeds.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticsError {
    #[error("missing episodes: {0:?}")]
    MissingEpisodes(Vec<usize>),
    #[error("need at least {need} values, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("non-finite value in input")]
    NonFinite,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator); `None` for fewer than two values.
pub fn sample_sd(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs);
    Some((xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt())
}

/// Hazen quantile: the k-th smallest of n values sits at probability (k - 0.5) / n,
/// linear in between and clamped to the extremes outside. With four values the
/// 5th percentile is the minimum.
pub fn quantile(xs: &[f64], p: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let h = p * v.len() as f64 - 0.5;
    if h <= 0.0 {
        return v[0];
    }
    let lo = h.floor() as usize;
    if lo + 1 >= v.len() {
        return v[v.len() - 1];
    }
    v[lo] + (h - lo as f64) * (v[lo + 1] - v[lo])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub mean: f64,
    pub sd: f64,
    pub best: f64,
    pub worst: f64,
    pub time_to_target: Option<usize>,
    pub time_to_90pct: Option<usize>,
}

/// Summary of one seed's per-episode returns over `window`. `returns[e]` is
/// episode `e`'s return; every episode in the window must be present.
pub fn final_window_stats(seed: u64, returns: &[Option<f64>], window: Range<usize>) -> Result<SeedSummary, AnalyticsError> {
    let missing: Vec<usize> = window.clone().filter(|&e| returns.get(e).copied().flatten().is_none()).collect();
    if !missing.is_empty() {
        return Err(AnalyticsError::MissingEpisodes(missing));
    }
    let vals: Vec<f64> = window.map(|e| returns[e].unwrap()).collect();
    if vals.len() < 2 {
        return Err(AnalyticsError::TooFew { need: 2, got: vals.len() });
    }
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(AnalyticsError::NonFinite);
    }
    Ok(SeedSummary {
        seed,
        mean: mean(&vals),
        sd: sample_sd(&vals).unwrap(),
        best: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        worst: vals.iter().copied().fold(f64::INFINITY, f64::min),
        time_to_target: None,
        time_to_90pct: None,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Efficiency {
    pub time_to_target: Option<usize>,
    pub time_to_90pct: Option<usize>,
}

/// First episodes whose eval return reaches `target` and 90% of `final_mean`.
/// For a negative final mean, "90%" means 10% of its magnitude below it.
pub fn learning_efficiency(eval: &[(usize, f64)], target: f64, final_mean: f64) -> Efficiency {
    let ninety = final_mean - 0.1 * final_mean.abs();
    Efficiency {
        time_to_target: eval.iter().find(|(_, r)| *r >= target).map(|(e, _)| *e),
        time_to_90pct: eval.iter().find(|(_, r)| *r >= ninety).map(|(e, _)| *e),
    }
}

/// `(cond_mean - baseline_mean) / cond_sd`; `None` when the spread is zero.
pub fn sharpe(cond_mean: f64, baseline_mean: f64, cond_sd: f64) -> Option<f64> {
    (cond_sd > 0.0).then(|| (cond_mean - baseline_mean) / cond_sd)
}

/// `100 * sd / mean`; `None` for a non-positive mean.
pub fn cv_percent(mean: f64, sd: f64) -> Option<f64> {
    (mean > 0.0).then(|| 100.0 * sd / mean)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskMetrics {
    /// `None` when no seed falls below the baseline.
    pub sortino: Option<f64>,
    pub var5: f64,
    pub max_drawdown: f64,
    pub success_rate: f64,
}

/// Downside deviation is the root mean square shortfall of the seeds below the baseline.
pub fn risk_metrics(per_seed_means: &[f64], baseline_mean: f64) -> Result<RiskMetrics, AnalyticsError> {
    let n = per_seed_means.len();
    if n < 2 {
        return Err(AnalyticsError::TooFew { need: 2, got: n });
    }
    if per_seed_means.iter().any(|v| !v.is_finite()) || !baseline_mean.is_finite() {
        return Err(AnalyticsError::NonFinite);
    }
    let m = mean(per_seed_means);
    let below: Vec<f64> = per_seed_means.iter().filter(|x| **x < baseline_mean).map(|x| x - baseline_mean).collect();
    let downside = (!below.is_empty()).then(|| (below.iter().map(|d| d * d).sum::<f64>() / below.len() as f64).sqrt());
    Ok(RiskMetrics {
        sortino: downside.filter(|d| *d > 0.0).map(|d| (m - baseline_mean) / d),
        var5: quantile(per_seed_means, 0.05),
        max_drawdown: per_seed_means.iter().map(|x| (x - m).abs()).fold(0.0, f64::max),
        success_rate: per_seed_means.iter().filter(|x| **x > baseline_mean).count() as f64 / n as f64,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub label: String,
    pub seeds: Vec<SeedSummary>,
    pub mean: f64,
    pub sd: Option<f64>,
    pub cv_percent: Option<f64>,
    /// Absent for the baseline condition itself.
    pub sharpe: Option<f64>,
    pub sortino: Option<f64>,
    pub var5: Option<f64>,
    pub max_drawdown: Option<f64>,
    pub success_rate: Option<f64>,
    pub best: f64,
    pub worst: f64,
}

pub fn summarize_condition(label: &str, seeds: &[SeedSummary], baseline_mean: f64, is_baseline: bool) -> ConditionSummary {
    let means: Vec<f64> = seeds.iter().map(|s| s.mean).collect();
    let m = mean(&means);
    let sd = sample_sd(&means);
    let risk = risk_metrics(&means, baseline_mean).ok();
    ConditionSummary {
        label: label.to_string(),
        seeds: seeds.to_vec(),
        mean: m,
        sd,
        cv_percent: sd.and_then(|s| cv_percent(m, s)),
        sharpe: if is_baseline { None } else { sd.and_then(|s| sharpe(m, baseline_mean, s)) },
        sortino: if is_baseline { None } else { risk.and_then(|r| r.sortino) },
        var5: risk.map(|r| r.var5),
        max_drawdown: risk.map(|r| r.max_drawdown),
        success_rate: risk.map(|r| r.success_rate),
        best: means.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        worst: means.iter().copied().fold(f64::INFINITY, f64::min),
    }
}

/// `#{x > y} + 0.5 * #{x == y}` over all pairs.
fn u_statistic(xs: &[f64], ys: &[f64]) -> f64 {
    let mut u = 0.0;
    for x in xs {
        for y in ys {
            if x > y {
                u += 1.0;
            } else if x == y {
                u += 0.5;
            }
        }
    }
    u
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// `min(U1, U2)`.
    pub u: f64,
    pub p_two_sided: f64,
    pub exact: bool,
}

pub const EXACT_LIMIT: usize = 12;

/// Two-sided Mann-Whitney U test. Exact (enumerating every split of the
/// pooled values) when `n1 + n2 <= 12`, otherwise the tie-corrected normal
/// approximation with continuity correction.
pub fn mann_whitney_u(xs: &[f64], ys: &[f64]) -> MannWhitney {
    let (n1, n2) = (xs.len(), ys.len());
    assert!(n1 > 0 && n2 > 0, "both samples must be non-empty");
    let u1 = u_statistic(xs, ys);
    let prod = (n1 * n2) as f64;
    let centre = prod / 2.0;
    let u = u1.min(prod - u1);
    let observed = (u1 - centre).abs();
    if n1 + n2 <= EXACT_LIMIT {
        let pooled: Vec<f64> = xs.iter().chain(ys).copied().collect();
        let (mut hits, mut total) = (0u64, 0u64);
        let mut chosen = Vec::with_capacity(n1);
        enumerate_splits(&pooled, n1, 0, &mut chosen, &mut |first| {
            let rest: Vec<f64> = (0..pooled.len()).filter(|i| !first.contains(i)).map(|i| pooled[i]).collect();
            let a: Vec<f64> = first.iter().map(|&i| pooled[i]).collect();
            total += 1;
            if (u_statistic(&a, &rest) - centre).abs() >= observed - 1e-9 {
                hits += 1;
            }
        });
        return MannWhitney { u, p_two_sided: hits as f64 / total as f64, exact: true };
    }
    let n = (n1 + n2) as f64;
    let pooled: Vec<f64> = xs.iter().chain(ys).copied().collect();
    let mut sorted = pooled.clone();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = prod / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    let p = if var <= 0.0 {
        1.0
    } else {
        let z = ((observed - 0.5).max(0.0)) / var.sqrt();
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        (2.0 * (1.0 - normal.cdf(z))).min(1.0)
    };
    MannWhitney { u, p_two_sided: p, exact: false }
}

fn enumerate_splits(pooled: &[f64], k: usize, start: usize, chosen: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
    if chosen.len() == k {
        f(chosen);
        return;
    }
    for i in start..pooled.len() {
        if pooled.len() - i < k - chosen.len() {
            break;
        }
        chosen.push(i);
        enumerate_splits(pooled, k, i + 1, chosen, f);
        chosen.pop();
    }
}

/// Difference of means over the pooled sample standard deviation.
pub fn cohens_d(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let (n1, n2) = (xs.len() as f64, ys.len() as f64);
    let (s1, s2) = (sample_sd(xs)?, sample_sd(ys)?);
    let pooled = (((n1 - 1.0) * s1 * s1 + (n2 - 1.0) * s2 * s2) / (n1 + n2 - 2.0)).sqrt();
    let diff = mean(xs) - mean(ys);
    if pooled > 0.0 {
        Some(diff / pooled)
    } else if diff == 0.0 {
        Some(0.0)
    } else {
        None
    }
}

fn percentile_interval(mut stats: Vec<f64>, level: f64) -> (f64, f64) {
    stats.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    let pick = |p: f64| {
        let h = p * (stats.len() - 1) as f64;
        let lo = h.floor() as usize;
        let hi = (lo + 1).min(stats.len() - 1);
        stats[lo] + (h - lo as f64) * (stats[hi] - stats[lo])
    };
    (pick(tail), pick(1.0 - tail))
}

/// Percentile bootstrap interval of the mean.
pub fn bootstrap_ci(xs: &[f64], resamples: usize, level: f64, seed: u64) -> (f64, f64) {
    assert!(xs.len() >= 2 && resamples > 0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = xs.len();
    let means = (0..resamples).map(|_| (0..n).map(|_| xs[rng.random_range(0..n)]).sum::<f64>() / n as f64).collect();
    let (lo, hi) = percentile_interval(means, level);
    // Summation rounding can push a mean of equal values one ulp outside the sample.
    let mn = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let mx = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo.clamp(mn, mx), hi.clamp(mn, mx))
}

/// Percentile bootstrap interval of `mean(xs) - mean(ys)`, resampling each group on its own.
pub fn bootstrap_diff_ci(xs: &[f64], ys: &[f64], resamples: usize, level: f64, seed: u64) -> (f64, f64) {
    assert!(!xs.is_empty() && !ys.is_empty() && resamples > 0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let resample_mean = |v: &[f64], rng: &mut ChaCha8Rng| v.iter().map(|_| v[rng.random_range(0..v.len())]).sum::<f64>() / v.len() as f64;
    let diffs = (0..resamples).map(|_| resample_mean(xs, &mut rng) - resample_mean(ys, &mut rng)).collect();
    percentile_interval(diffs, level)
}

/// `p * comparisons`, capped at 1.
pub fn bonferroni(p: f64, comparisons: usize) -> f64 {
    (p * comparisons as f64).min(1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub label: String,
    pub n1: usize,
    pub n2: usize,
    pub u: f64,
    pub p: f64,
    pub p_adjusted: f64,
    pub exact: bool,
    pub cohens_d: Option<f64>,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Compares per-seed means of two conditions; the interval is for `mean(ys) - mean(xs)`.
pub fn compare(label: &str, xs: &[f64], ys: &[f64], comparisons: usize, seed: u64) -> ComparisonReport {
    let mw = mann_whitney_u(xs, ys);
    let (ci_low, ci_high) = bootstrap_diff_ci(ys, xs, 10_000, 0.95, seed);
    ComparisonReport {
        label: label.to_string(),
        n1: xs.len(),
        n2: ys.len(),
        u: mw.u,
        p: mw.p_two_sided,
        p_adjusted: bonferroni(mw.p_two_sided, comparisons),
        exact: mw.exact,
        cohens_d: cohens_d(ys, xs),
        ci_low,
        ci_high,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn two_by_two_exact_p() {
        let r = mann_whitney_u(&[1.0, 2.0], &[3.0, 4.0]);
        assert_eq!(r.u, 0.0);
        assert!(r.exact);
        assert!(close(r.p_two_sided, 2.0 / 6.0, 1e-12));
    }

    #[test]
    fn identical_samples_give_half_product() {
        let r = mann_whitney_u(&[5.0, 5.0, 5.0], &[5.0, 5.0]);
        assert_eq!(r.u, 3.0);
        assert_eq!(r.p_two_sided, 1.0);
    }

    #[test]
    fn large_samples_use_normal_approximation() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ys: Vec<f64> = (0..10).map(|i| i as f64 + 0.5).collect();
        let r = mann_whitney_u(&xs, &ys);
        assert!(!r.exact);
        assert!(r.p_two_sided > 0.5 && r.p_two_sided <= 1.0);
        let far: Vec<f64> = (0..10).map(|i| 100.0 + i as f64).collect();
        assert!(mann_whitney_u(&xs, &far).p_two_sided < 0.001);
    }

    #[test]
    fn cohens_d_examples() {
        // Means 1 and 2, both sample sds sqrt(2).
        let d = cohens_d(&[0.0, 2.0], &[1.0, 3.0]).unwrap();
        assert!(close(d, -1.0 / 2f64.sqrt(), 1e-12));
        assert_eq!(cohens_d(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), Some(0.0));
        assert_eq!(cohens_d(&[4.0, 6.0], &[3.0, 5.0, 7.0]), Some(0.0));
        assert_eq!(cohens_d(&[1.0, 1.0], &[2.0, 2.0]), None);
    }

    #[test]
    fn sharpe_and_cv_markers() {
        assert_eq!(sharpe(3.0, 3.0, 1.0), Some(0.0));
        assert_eq!(sharpe(3.0, 1.0, 0.0), None);
        assert_eq!(cv_percent(10.0, 0.0), Some(0.0));
        assert_eq!(cv_percent(0.0, 1.0), None);
        assert_eq!(cv_percent(-4.0, 1.0), None);
    }

    #[test]
    fn constant_window() {
        let r: Vec<Option<f64>> = vec![Some(7.0); 200];
        let s = final_window_stats(1, &r, 180..200).unwrap();
        assert_eq!((s.mean, s.sd, s.best, s.worst), (7.0, 0.0, 7.0, 7.0));
    }

    #[test]
    fn gaps_are_listed() {
        let mut r: Vec<Option<f64>> = vec![Some(1.0); 200];
        r[185] = None;
        r[190] = None;
        assert_eq!(final_window_stats(1, &r, 180..200), Err(AnalyticsError::MissingEpisodes(vec![185, 190])));
        assert_eq!(final_window_stats(1, &r[..190], 180..200).unwrap_err(), AnalyticsError::MissingEpisodes((185..200).filter(|e| *e == 185 || *e >= 190).collect()));
    }

    #[test]
    fn efficiency_crossings() {
        let eval = vec![(0, 100.0), (2, 166.0), (4, 170.0)];
        let e = learning_efficiency(&eval, 165.0, 170.0);
        assert_eq!(e.time_to_target, Some(2));
        assert_eq!(learning_efficiency(&[(0, 1.0), (2, 2.0)], 165.0, 2.0).time_to_target, None);

        // Linear ramp from 0 to 200 over episodes 0..199.
        let ramp: Vec<(usize, f64)> = (0..200).map(|e| (e, 200.0 * e as f64 / 199.0)).collect();
        let final_mean = 200.0 / 199.0 * 189.5;
        let e = learning_efficiency(&ramp, 165.0, final_mean);
        // 0.9 * final_mean = 171.407..., first e with 200 e / 199 >= that is 171.
        assert_eq!(e.time_to_90pct, Some(171));
        // 200 e / 199 >= 165 first at e = 165 (164.17 < 165 <= 165.16).
        assert_eq!(e.time_to_target, Some(165));
    }

    #[test]
    fn bootstrap_basics() {
        assert_eq!(bootstrap_ci(&[4.0; 6], 1000, 0.95, 1), (4.0, 4.0));
        let xs = [1.0, 5.0, 2.0, 8.0, 3.0];
        assert_eq!(bootstrap_ci(&xs, 2000, 0.95, 9), bootstrap_ci(&xs, 2000, 0.95, 9));
    }

    #[test]
    fn bootstrap_width_for_normal_sample() {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let xs: Vec<f64> = (0..100).map(|_| StandardNormal.sample(&mut rng)).collect();
        let (lo, hi) = bootstrap_ci(&xs, 10_000, 0.95, 7);
        let m = mean(&xs);
        assert!(lo < m && m < hi);
        let expected = 2.0 * 1.96 / 10.0;
        assert!(((hi - lo) - expected).abs() <= 0.15 * expected, "width {}", hi - lo);
    }

    #[test]
    fn quantile_rule() {
        assert_eq!(quantile(&[3.0, 1.0, 2.0, 4.0], 0.05), 1.0);
        assert_eq!(quantile(&[3.0, 1.0, 2.0, 4.0], 0.5), 2.5);
        assert_eq!(quantile(&[3.0, 1.0, 2.0, 4.0], 1.0), 4.0);
        let xs: Vec<f64> = (1..=20).map(|i| i as f64).collect();
        assert!(close(quantile(&xs, 0.05), 1.5, 1e-12));
    }

    #[test]
    fn risk_rejects_single_seed() {
        assert_eq!(risk_metrics(&[1.0], 0.0), Err(AnalyticsError::TooFew { need: 2, got: 1 }));
        let r = risk_metrics(&[1.0, 2.0], 5.0).unwrap();
        assert_eq!(r.success_rate, 0.0);
    }

    #[test]
    fn bonferroni_caps() {
        assert_eq!(bonferroni(0.2, 3), 0.6000000000000001);
        assert_eq!(bonferroni(0.5, 3), 1.0);
    }

    /// Ground truth by brute force over bitmasks of the pooled sample.
    fn oracle_p(xs: &[f64], ys: &[f64]) -> f64 {
        let pooled: Vec<f64> = xs.iter().chain(ys).copied().collect();
        let n = pooled.len();
        let n1 = xs.len();
        let count_u = |a: &[f64], b: &[f64]| -> f64 {
            a.iter().map(|x| b.iter().map(|y| if x > y { 1.0 } else if x == y { 0.5 } else { 0.0 }).sum::<f64>()).sum()
        };
        let centre = (xs.len() * ys.len()) as f64 / 2.0;
        let obs = (count_u(xs, ys) - centre).abs();
        let (mut hit, mut tot) = (0, 0);
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != n1 {
                continue;
            }
            let a: Vec<f64> = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| pooled[i]).collect();
            let b: Vec<f64> = (0..n).filter(|i| mask >> i & 1 == 0).map(|i| pooled[i]).collect();
            tot += 1;
            if (count_u(&a, &b) - centre).abs() >= obs - 1e-9 {
                hit += 1;
            }
        }
        hit as f64 / tot as f64
    }

    fn sample(max: usize) -> impl Strategy<Value = Vec<f64>> {
        // Small integer grid so ties are common.
        prop::collection::vec((0i32..6).prop_map(f64::from), 1..=max)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn exact_test_matches_oracle((xs, ys) in (1usize..=7).prop_flat_map(|n1| (sample(n1).prop_map(move |v| v[..v.len().min(n1)].to_vec()), sample(8 - n1)))) {
            prop_assume!(xs.len() + ys.len() <= 8);
            let r = mann_whitney_u(&xs, &ys);
            prop_assert!(r.exact);
            prop_assert!((r.p_two_sided - oracle_p(&xs, &ys)).abs() < 1e-12);
            prop_assert!(r.u >= 0.0 && r.u <= (xs.len() * ys.len()) as f64);
            prop_assert!((0.0..=1.0).contains(&r.p_two_sided));
        }

        #[test]
        fn bootstrap_within_sample_range(xs in prop::collection::vec(-100.0f64..100.0, 2..20), seed in any::<u64>()) {
            let (lo, hi) = bootstrap_ci(&xs, 500, 0.95, seed);
            let mn = xs.iter().copied().fold(f64::INFINITY, f64::min);
            let mx = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(mn <= lo && lo <= hi && hi <= mx);
        }

        #[test]
        fn scale_consistency(xs in prop::collection::vec(1.0f64..100.0, 2..8), ys in prop::collection::vec(1.0f64..100.0, 2..8), c in 0.1f64..50.0) {
            let scale = |v: &[f64]| v.iter().map(|x| x * c).collect::<Vec<_>>();
            let (sx, sy) = (scale(&xs), scale(&ys));
            if let (Some(a), Some(b)) = (cohens_d(&xs, &ys), cohens_d(&sx, &sy)) {
                prop_assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
            }
            let (m, s) = (mean(&xs), sample_sd(&xs).unwrap());
            if let (Some(a), Some(b)) = (cv_percent(m, s), cv_percent(m * c, s * c)) {
                prop_assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
            }
            let base = mean(&ys);
            if let (Some(a), Some(b)) = (sharpe(m, base, s), sharpe(m * c, base * c, s * c)) {
                prop_assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
            }
        }
    }
}
