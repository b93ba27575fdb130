use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use maestro::architect::Condition;
use maestro::curriculum::verify_monotonicity;
use maestro::grid_sim::fixed_time_policy;
use maestro::harness::{
    calibrate, emit_report, run_ablation, run_seed, ClientKind, ExperimentConfig, Profile, REPORT_BOOTSTRAP_SEED,
};
use maestro::reward_lang::{gate, SyntheticSampler, ValidationConfig};

/// Dual-loop traffic-signal training: curriculum and reward programs from a
/// chat model (or deterministic mock), MADDPG agents in a grid simulator.
#[derive(Parser)]
#[command(name = "maestro", version)]
struct Cli {
    /// Log progress to stderr (repeat for debug output).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment config; keys not given keep the profile's values.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Preset the config starts from: desk (2x2 grid, 20 episodes) or full (4x4, 200 episodes).
    #[arg(long, default_value = "desk", value_parser = parse_profile)]
    profile: Profile,
    /// Chat client: mock, http (needs MAESTRO_LLM_API_KEY) or replay.
    #[arg(long, value_name = "CLIENT", value_parser = parse_client)]
    llm: Option<ClientKind>,
    /// Output directory for run logs.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Override the number of training episodes.
    #[arg(long)]
    episodes: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one condition on one seed.
    Train {
        #[command(flatten)]
        common: Common,
        /// A2, A7 or A8.
        #[arg(long, value_parser = parse_condition)]
        condition: Option<Condition>,
        /// Run seed; defaults to the first configured seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train A2, A7 and A8 on every configured seed.
    Ablation {
        #[command(flatten)]
        common: Common,
        /// Single seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Summarize the logs of an ablation into report.md and plot CSVs.
    Report {
        /// Directory holding <condition>/seed_<n>/episodes.csv.
        #[arg(long, value_name = "DIR")]
        logs: PathBuf,
        /// Where to write the report; defaults to <logs>/report.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Config supplying the final window and target return.
        #[arg(long, value_name = "PATH")]
        config: Option<PathBuf>,
        #[arg(long, default_value = "desk", value_parser = parse_profile)]
        profile: Profile,
        /// Bootstrap seed for confidence intervals.
        #[arg(long, default_value_t = REPORT_BOOTSTRAP_SEED)]
        seed: u64,
    },
    /// Fixed-time sweep over difficulty; prints Spearman rho for queue and delay.
    VerifyCurriculum {
        #[arg(long, value_name = "PATH")]
        config: Option<PathBuf>,
        #[arg(long, default_value = "full", value_parser = parse_profile)]
        profile: Profile,
        /// First of the consecutive seeds to run.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Number of seeds per difficulty.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        /// Fixed-time phase period in steps.
        #[arg(long, default_value_t = 10)]
        period: u32,
    },
    /// Run a reward program through the syntax, sandbox and safety gates.
    ValidateReward {
        /// Program text, e.g. "-(0.6*queue + 0.4*wait)/50".
        #[arg(required_unless_present = "file")]
        source: Option<String>,
        /// Read the program from a file instead.
        #[arg(long, value_name = "PATH", conflicts_with = "source")]
        file: Option<PathBuf>,
        /// Seed of the synthetic input sampler.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Suggest a target return from fixed-time and random control at one difficulty.
    Calibrate {
        #[arg(long, value_name = "PATH")]
        config: Option<PathBuf>,
        #[arg(long, default_value = "desk", value_parser = parse_profile)]
        profile: Profile,
        #[arg(long, default_value_t = 0.5)]
        difficulty: f64,
        /// Episodes per policy.
        #[arg(long, default_value_t = 10)]
        episodes: u64,
    },
}

fn parse_profile(s: &str) -> Result<Profile, String> {
    s.parse()
}

fn parse_client(s: &str) -> Result<ClientKind, String> {
    s.parse()
}

fn parse_condition(s: &str) -> Result<Condition, String> {
    s.parse()
}

fn load_config(path: Option<&Path>, profile: Profile) -> Result<ExperimentConfig> {
    let base = ExperimentConfig::profile(profile);
    Ok(match path {
        Some(p) => ExperimentConfig::load(p, &base)?,
        None => base,
    })
}

fn apply(common: &Common, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = load_config(common.config.as_deref(), common.profile)?;
    if let Some(k) = common.llm {
        cfg.client.kind = k;
    }
    if let Some(o) = &common.out {
        cfg.out_dir = o.clone();
    }
    if let Some(e) = common.episodes {
        cfg.episodes = e;
        cfg.final_window = cfg.final_window.min(e);
    }
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common, condition, seed } => {
            let mut cfg = apply(&common, seed)?;
            if let Some(c) = condition {
                cfg.condition = c;
            }
            let seed = cfg.seeds[0];
            let r = run_seed(&cfg, seed)?;
            let last = r.records.last().context("no episodes ran")?;
            println!(
                "{} seed {seed}: {} episodes, final return {:.2}, d {:.3}; log {}",
                cfg.condition,
                r.records.len(),
                last.train_return,
                last.difficulty,
                r.dir.join("episodes.csv").display()
            );
        }
        Command::Ablation { common, seed } => {
            let cfg = apply(&common, seed)?;
            let configs: Vec<ExperimentConfig> = Condition::ALL.iter().map(|&c| cfg.with_condition(c)).collect();
            let out = run_ablation(&configs, &cfg.out_dir)?;
            for (c, s, r) in &out.runs {
                match r {
                    Ok(dir) => println!("{c} seed {s}: ok ({})", dir.display()),
                    Err(e) => println!("{c} seed {s}: FAILED: {e}"),
                }
            }
            println!("manifest {}", out.manifest.display());
            if out.failures() > 0 {
                bail!("{} of {} runs failed", out.failures(), out.runs.len());
            }
        }
        Command::Report { logs, out, config, profile, seed } => {
            let cfg = load_config(config.as_deref(), profile)?;
            let out = out.unwrap_or_else(|| logs.join("report"));
            let report = emit_report(&logs, &out, cfg.final_window, cfg.curriculum.target, seed)?;
            print!("{}", report.markdown);
            for f in &report.files {
                eprintln!("wrote {}", f.display());
            }
        }
        Command::VerifyCurriculum { config, profile, seed, seeds, period } => {
            let cfg = load_config(config.as_deref(), profile)?;
            let grid: Vec<f64> = (3..=10).map(|i| i as f64 / 10.0).collect();
            let seed_list: Vec<u64> = (seed..seed + seeds).collect();
            let r = verify_monotonicity(&grid, &seed_list, fixed_time_policy(period), &cfg.grid, cfg.steps_per_episode)?;
            println!("{:>5} {:>12} {:>12}", "d", "mean_queue", "mean_delay");
            for i in 0..r.d_grid.len() {
                println!("{:>5.2} {:>12.3} {:>12.3}", r.d_grid[i], r.mean_queue[i], r.mean_delay[i]);
            }
            println!("spearman rho queue: {:.4}", r.rho_queue);
            println!("spearman rho delay: {:.4}", r.rho_delay);
        }
        Command::ValidateReward { source, file, seed } => {
            let text = match (source, file) {
                (Some(s), _) => s,
                (None, Some(p)) => std::fs::read_to_string(&p).with_context(|| p.display().to_string())?,
                (None, None) => unreachable!("clap requires one of them"),
            };
            let mut sampler = SyntheticSampler::new(ChaCha8Rng::seed_from_u64(seed));
            let (report, program) = gate(&text, &mut sampler, &ValidationConfig::default());
            println!("{}", serde_json::to_string_pretty(&report)?);
            match program {
                Some(p) => println!("accepted: {}", p.program().ast),
                None => bail!("rejected at {:?} stage: {}", report.stage, report.detail),
            }
        }
        Command::Calibrate { config, profile, difficulty, episodes } => {
            let cfg = load_config(config.as_deref(), profile)?;
            let seeds: Vec<u64> = (0..episodes).collect();
            let c = calibrate(&cfg, difficulty, &seeds)?;
            println!("difficulty {:.2}, {} episodes per policy", c.difficulty, c.episodes);
            println!("fixed-time mean return: {:.3}", c.fixed_time_mean);
            println!("random mean return:     {:.3}", c.random_mean);
            println!("midpoint:               {:.3}", c.midpoint);
            if c.midpoint <= 0.0 {
                println!("midpoint is not positive; falling back to the random-policy mean");
            }
            println!("suggested target:       {:.3}", c.suggested_target);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
