use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::Deserialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::run::{EPISODE_LOG, LOG_SCHEMA, LOG_SCHEMA_VERSION};
use super::HarnessError;
use crate::analytics::{
    compare, final_window_stats, learning_efficiency, mean, sample_sd, summarize_condition, ComparisonReport, ConditionSummary,
    SeedSummary,
};
use crate::architect::Condition;

pub const REPORT_BOOTSTRAP_SEED: u64 = 7;

/// The columns of an episode log the report needs; the rest are ignored.
#[derive(Deserialize)]
struct LogRow {
    episode: usize,
    seed: u64,
    condition: Condition,
    difficulty: f64,
    train_return: f64,
    eval_return: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeedLog {
    pub seed: u64,
    /// Indexed by episode.
    pub train_returns: Vec<f64>,
    pub difficulty: Vec<f64>,
    pub eval: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionLogs {
    pub condition: Condition,
    /// Sorted by seed.
    pub seeds: Vec<SeedLog>,
}

/// Parses one `episodes.csv`, checking the schema line and episode continuity.
pub fn read_episode_log(path: &Path) -> Result<(Condition, SeedLog), HarnessError> {
    let bad = |detail: String| HarnessError::Log { path: path.to_path_buf(), detail };
    let file = fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut first = String::new();
    reader.read_line(&mut first).map_err(|e| HarnessError::io(path, e))?;
    let expected = format!("# {LOG_SCHEMA} v{LOG_SCHEMA_VERSION}");
    if first.trim_end() != expected {
        return Err(bad(format!("expected schema line '{expected}', found '{}'", first.trim_end())));
    }
    let mut rows = csv::Reader::from_reader(reader);
    let mut out: Option<(Condition, SeedLog)> = None;
    for (i, row) in rows.deserialize::<LogRow>().enumerate() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        if row.episode != i {
            return Err(bad(format!("row {i} has episode {}", row.episode)));
        }
        let (cond, log) = out.get_or_insert_with(|| {
            (row.condition, SeedLog { seed: row.seed, train_returns: Vec::new(), difficulty: Vec::new(), eval: Vec::new() })
        });
        if *cond != row.condition || log.seed != row.seed {
            return Err(bad(format!("row {i} mixes runs")));
        }
        log.train_returns.push(row.train_return);
        log.difficulty.push(row.difficulty);
        if let Some(e) = row.eval_return {
            log.eval.push((row.episode, e));
        }
    }
    out.ok_or_else(|| bad("no episode rows".into()))
}

fn sorted_dir(dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let mut v: Vec<PathBuf> =
        fs::read_dir(dir).map_err(|e| HarnessError::io(dir, e))?.filter_map(|e| e.ok().map(|e| e.path())).collect();
    v.sort();
    Ok(v)
}

/// Completed runs under `dir/<condition>/seed_*/`; runs with an `error.txt` are skipped.
fn collect_logs(dir: &Path) -> Result<Vec<ConditionLogs>, HarnessError> {
    let mut by_condition: BTreeMap<Condition, Vec<SeedLog>> = BTreeMap::new();
    for cdir in sorted_dir(dir)?.into_iter().filter(|p| p.is_dir()) {
        for run in sorted_dir(&cdir)?.into_iter().filter(|p| p.is_dir()) {
            let log = run.join(EPISODE_LOG);
            if !log.exists() || run.join("error.txt").exists() {
                continue;
            }
            let (condition, seed_log) = read_episode_log(&log)?;
            by_condition.entry(condition).or_default().push(seed_log);
        }
    }
    Ok(by_condition
        .into_iter()
        .map(|(condition, mut seeds)| {
            seeds.sort_by_key(|s| s.seed);
            ConditionLogs { condition, seeds }
        })
        .collect())
}

/// Mean with a two-sided 95% Student-t band; the band collapses for one value.
pub fn t_band(xs: &[f64]) -> (f64, f64, f64) {
    let m = mean(xs);
    match sample_sd(xs) {
        Some(sd) => {
            let t = StudentsT::new(0.0, 1.0, (xs.len() - 1) as f64).expect("positive dof").inverse_cdf(0.975);
            let half = t * sd / (xs.len() as f64).sqrt();
            (m, m - half, m + half)
        }
        None => (m, m, m),
    }
}

/// Per eval episode: (episode, seeds contributing, mean, lower, upper).
pub fn learning_curve(seeds: &[SeedLog]) -> Vec<(usize, usize, f64, f64, f64)> {
    let mut by_ep: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for s in seeds {
        for &(e, r) in &s.eval {
            by_ep.entry(e).or_default().push(r);
        }
    }
    by_ep
        .into_iter()
        .map(|(e, xs)| {
            let (m, lo, hi) = t_band(&xs);
            (e, xs.len(), m, lo, hi)
        })
        .collect()
}

pub struct Report {
    pub summaries: Vec<ConditionSummary>,
    pub comparisons: Vec<ComparisonReport>,
    pub markdown: String,
    pub files: Vec<PathBuf>,
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.digits$}"))
}

fn write_file(path: PathBuf, text: &str, files: &mut Vec<PathBuf>) -> Result<(), HarnessError> {
    fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))?;
    files.push(path);
    Ok(())
}

/// Summarizes every completed run under `log_dir` into `out_dir`: `report.md`
/// plus plot-ready CSVs. Output depends only on the logs and the arguments.
pub fn emit_report(
    log_dir: &Path,
    out_dir: &Path,
    final_window: usize,
    target: f64,
    bootstrap_seed: u64,
) -> Result<Report, HarnessError> {
    let logs = collect_logs(log_dir)?;
    if logs.is_empty() {
        return Err(HarnessError::Data(format!("no completed episode logs under {}", log_dir.display())));
    }

    let mut per_condition: Vec<(Condition, Vec<SeedSummary>)> = Vec::new();
    for c in &logs {
        let mut seeds = Vec::new();
        for s in &c.seeds {
            let n = s.train_returns.len();
            if n < final_window {
                return Err(HarnessError::Data(format!(
                    "{} seed {} has {n} episodes, fewer than the final window of {final_window}",
                    c.condition, s.seed
                )));
            }
            let returns: Vec<Option<f64>> = s.train_returns.iter().copied().map(Some).collect();
            let mut summary = final_window_stats(s.seed, &returns, n - final_window..n)
                .map_err(|e| HarnessError::Data(format!("{} seed {}: {e}", c.condition, s.seed)))?;
            let eff = learning_efficiency(&s.eval, target, summary.mean);
            summary.time_to_target = eff.time_to_target;
            summary.time_to_90pct = eff.time_to_90pct;
            seeds.push(summary);
        }
        per_condition.push((c.condition, seeds));
    }

    let baseline = per_condition.iter().find(|(c, _)| *c == Condition::A2).unwrap_or(&per_condition[0]).0;
    let seed_means = |seeds: &[SeedSummary]| seeds.iter().map(|s| s.mean).collect::<Vec<_>>();
    let baseline_mean = mean(&seed_means(&per_condition.iter().find(|(c, _)| *c == baseline).unwrap().1));
    let summaries: Vec<ConditionSummary> =
        per_condition.iter().map(|(c, s)| summarize_condition(c.name(), s, baseline_mean, *c == baseline)).collect();

    let pairs: Vec<(usize, usize)> =
        (0..per_condition.len()).flat_map(|i| (i + 1..per_condition.len()).map(move |j| (i, j))).collect();
    let comparisons: Vec<ComparisonReport> = pairs
        .iter()
        .map(|&(i, j)| {
            let (a, b) = (&per_condition[i], &per_condition[j]);
            compare(&format!("{} vs {}", a.0, b.0), &seed_means(&a.1), &seed_means(&b.1), pairs.len(), bootstrap_seed)
        })
        .collect();

    let mut md = String::new();
    let _ = writeln!(md, "# Ablation report\n");
    let _ = writeln!(
        md,
        "Per-seed score: mean training return over the last {final_window} episodes. Baseline: {baseline}. \
         Target return: {target}. Bootstrap seed: {bootstrap_seed}.\n"
    );
    let _ = writeln!(md, "## Condition summary\n");
    let _ = writeln!(md, "| Condition | Seeds | Mean ± SD | CV (%) | SR | Best | Worst |");
    let _ = writeln!(md, "|---|---|---|---|---|---|---|");
    for s in &summaries {
        let _ = writeln!(
            md,
            "| {} | {} | {:.2} ± {} | {} | {} | {:.2} | {:.2} |",
            s.label,
            s.seeds.len(),
            s.mean,
            opt(s.sd, 2),
            opt(s.cv_percent, 2),
            if s.label == baseline.name() { "-".to_string() } else { opt(s.sharpe, 2) },
            s.best,
            s.worst
        );
    }

    let all_seeds: BTreeSet<u64> = summaries.iter().flat_map(|s| s.seeds.iter().map(|x| x.seed)).collect();
    let _ = writeln!(md, "\n## Per-seed final-window means\n");
    let header: Vec<String> = all_seeds.iter().map(|s| format!("Seed {s}")).collect();
    let _ = writeln!(md, "| Condition | {} | Mean | SD | Range |", header.join(" | "));
    let _ = writeln!(md, "|---|{}---|---|---|", "---|".repeat(all_seeds.len()));
    for s in &summaries {
        let cells: Vec<String> = all_seeds
            .iter()
            .map(|seed| s.seeds.iter().find(|x| x.seed == *seed).map_or("-".to_string(), |x| format!("{:.2}", x.mean)))
            .collect();
        let _ = writeln!(
            md,
            "| {} | {} | {:.2} | {} | {:.2} |",
            s.label,
            cells.join(" | "),
            s.mean,
            opt(s.sd, 2),
            s.best - s.worst
        );
    }

    let _ = writeln!(md, "\n## Risk\n");
    let _ = writeln!(md, "| Condition | Sharpe | Sortino | VaR (5%) | Max drawdown | Success rate |");
    let _ = writeln!(md, "|---|---|---|---|---|---|");
    for s in &summaries {
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} | {} | {} |",
            s.label,
            opt(s.sharpe, 2),
            opt(s.sortino, 2),
            opt(s.var5, 2),
            opt(s.max_drawdown, 2),
            s.success_rate.map_or("n/a".to_string(), |r| format!("{:.0}%", 100.0 * r))
        );
    }

    let _ = writeln!(md, "\n## Learning efficiency\n");
    let _ = writeln!(md, "| Condition | Seed | Time to target | Time to 90% of final |");
    let _ = writeln!(md, "|---|---|---|---|");
    for s in &summaries {
        for x in &s.seeds {
            let ep = |v: Option<usize>| v.map_or("not reached".to_string(), |e| e.to_string());
            let _ = writeln!(md, "| {} | {} | {} | {} |", s.label, x.seed, ep(x.time_to_target), ep(x.time_to_90pct));
        }
    }

    let _ = writeln!(md, "\n## Pairwise comparisons\n");
    if comparisons.is_empty() {
        let _ = writeln!(md, "No pairwise comparisons: only one condition is present.");
    } else {
        let _ = writeln!(
            md,
            "Mann-Whitney U on per-seed means, Bonferroni over {} comparisons. Cohen's d and the bootstrap CI are for second minus first.\n",
            comparisons.len()
        );
        let _ = writeln!(md, "| Comparison | n1 | n2 | U | p | p (adjusted) | Test | Cohen's d | 95% CI |");
        let _ = writeln!(md, "|---|---|---|---|---|---|---|---|---|");
        for c in &comparisons {
            let _ = writeln!(
                md,
                "| {} | {} | {} | {:.1} | {:.4} | {:.4} | {} | {} | [{:.2}, {:.2}] |",
                c.label,
                c.n1,
                c.n2,
                c.u,
                c.p,
                c.p_adjusted,
                if c.exact { "exact" } else { "normal" },
                opt(c.cohens_d, 2),
                c.ci_low,
                c.ci_high
            );
        }
    }

    fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let mut files = Vec::new();
    write_file(out_dir.join("report.md"), &md, &mut files)?;

    let mut curves = String::from("condition,episode,n,mean,lower,upper\n");
    let mut traj = String::from("condition,seed,episode,difficulty\n");
    let mut seeds_csv = String::from("condition,seed,mean,sd,best,worst,time_to_target,time_to_90pct\n");
    for c in &logs {
        for (e, n, m, lo, hi) in learning_curve(&c.seeds) {
            let _ = writeln!(curves, "{},{e},{n},{m},{lo},{hi}", c.condition);
        }
        for s in &c.seeds {
            for (e, d) in s.difficulty.iter().enumerate() {
                let _ = writeln!(traj, "{},{},{e},{d}", c.condition, s.seed);
            }
        }
    }
    let field = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    let mut cv = String::from("condition,mean,sd,cv_percent\n");
    for s in &summaries {
        let _ = writeln!(cv, "{},{},{},{}", s.label, s.mean, field(s.sd), field(s.cv_percent));
        for x in &s.seeds {
            let e = |v: Option<usize>| v.map_or(String::new(), |e| e.to_string());
            let _ = writeln!(
                seeds_csv,
                "{},{},{},{},{},{},{},{}",
                s.label,
                x.seed,
                x.mean,
                x.sd,
                x.best,
                x.worst,
                e(x.time_to_target),
                e(x.time_to_90pct)
            );
        }
    }
    write_file(out_dir.join("learning_curves.csv"), &curves, &mut files)?;
    write_file(out_dir.join("difficulty.csv"), &traj, &mut files)?;
    write_file(out_dir.join("cv.csv"), &cv, &mut files)?;
    write_file(out_dir.join("seed_summary.csv"), &seeds_csv, &mut files)?;

    Ok(Report { summaries, comparisons, markdown: md, files })
}
