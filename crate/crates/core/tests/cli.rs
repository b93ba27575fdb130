use std::fs;
use std::process::{Command, Output};

fn maestro(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maestro")).args(args).output().unwrap()
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

const SHORT: &str = "steps_per_episode = 40\nepisodes = 3\nfinal_window = 2\n";

#[test]
fn train_writes_a_log() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("short.toml");
    fs::write(&cfg, SHORT).unwrap();
    let out = tmp.path().join("runs");
    let o = maestro(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--llm",
        "mock",
        "--condition",
        "A7",
        "--seed",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o));
    let log = fs::read_to_string(out.join("A7/seed_3/episodes.csv")).unwrap();
    assert!(log.starts_with("# maestro-episode-log v1\nepisode,seed,condition"));
    assert_eq!(log.lines().count(), 2 + 3);
    assert!(out.join("A7/seed_3/config.json").exists());
    assert!(out.join("A7/seed_3/chat_log.jsonl").exists());
}

#[test]
fn replayed_chat_log_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("short.toml");
    fs::write(&cfg, SHORT).unwrap();
    let first = tmp.path().join("first");
    let args = |out: &str, cfg: &str| {
        vec!["train".to_string(), "--config".into(), cfg.into(), "--condition".into(), "A7".into(), "--seed".into(), "5".into(), "--out".into(), out.into()]
    };
    let run = |a: Vec<String>| maestro(&a.iter().map(String::as_str).collect::<Vec<_>>());
    let o = run(args(first.to_str().unwrap(), cfg.to_str().unwrap()));
    assert!(o.status.success(), "{}", text(&o));

    let log = first.join("A7/seed_5/chat_log.jsonl");
    let replay_cfg = tmp.path().join("replay.toml");
    fs::write(&replay_cfg, format!("{SHORT}[client]\nkind = \"replay\"\nreplay_path = {:?}\n", log.to_str().unwrap())).unwrap();
    let second = tmp.path().join("second");
    let o = run(args(second.to_str().unwrap(), replay_cfg.to_str().unwrap()));
    assert!(o.status.success(), "{}", text(&o));
    for f in ["episodes.csv", "programs.jsonl", "contexts.jsonl"] {
        assert_eq!(fs::read(first.join("A7/seed_5").join(f)).unwrap(), fs::read(second.join("A7/seed_5").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn validate_reward_accepts_and_rejects() {
    let ok = maestro(&["validate-reward", "tanh(outflow - 0.1 * queue)"]);
    assert!(ok.status.success(), "{}", text(&ok));
    assert!(text(&ok).contains("accepted"));
    let bad = maestro(&["validate-reward", "queue ** 2"]);
    assert_eq!(bad.status.code(), Some(1), "{}", text(&bad));
    assert!(text(&bad).contains("Syntax"));
    let unsafe_ = maestro(&["validate-reward", "queue * 1e9"]);
    assert_eq!(unsafe_.status.code(), Some(1));
    assert!(text(&unsafe_).contains("Safety"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(maestro(&["train", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(maestro(&["train", "--condition", "A9"]).status.code(), Some(2));
    assert_eq!(maestro(&["ablation", "--profile", "huge"]).status.code(), Some(2));
    assert_eq!(maestro(&[]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing.toml");
    let o = maestro(&["train", "--config", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "episodes = 10\nunknown_key = 1\n").unwrap();
    let o = maestro(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", text(&o));
    let o = maestro(&["report", "--logs", tmp.path().join("nothing").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn verify_curriculum_prints_rho() {
    let o = maestro(&["verify-curriculum", "--profile", "desk", "--seeds", "2"]);
    assert!(o.status.success(), "{}", text(&o));
    let out = text(&o);
    assert!(out.contains("spearman rho queue:") && out.contains("spearman rho delay:"), "{out}");
    assert_eq!(out.lines().filter(|l| l.trim_start().starts_with("0.") || l.trim_start().starts_with("1.")).count(), 8);
}

#[test]
fn calibrate_reports_a_target() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("short.toml");
    fs::write(&cfg, "steps_per_episode = 60\n").unwrap();
    let o = maestro(&["calibrate", "--config", cfg.to_str().unwrap(), "--episodes", "2"]);
    assert!(o.status.success(), "{}", text(&o));
    assert!(text(&o).contains("suggested target:"));
}

#[test]
fn ablation_then_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("short.toml");
    fs::write(&cfg, format!("{SHORT}seeds = [1, 2]\n")).unwrap();
    let out = tmp.path().join("runs");
    let o = maestro(&["ablation", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", text(&o));
    assert!(out.join("manifest.json").exists());
    let o = maestro(&["report", "--logs", out.to_str().unwrap(), "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", text(&o));
    assert!(text(&o).contains("## Pairwise comparisons"));
    assert!(out.join("report/report.md").exists());
}
