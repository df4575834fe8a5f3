use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hiernav::action::LanguageAction;
use hiernav::pipeline::read_jsonl;
use hiernav::sim::EpisodeSet;
use serde_json::Value;

fn hiernav(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hiernav"))
        .args(args)
        .env_remove("HIERNAV_CLI_TEST_KEY")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn generate(dir: &Path, name: &str, seed: u64, count: usize, difficulty: &str) -> PathBuf {
    let out = dir.join(name);
    let o = hiernav(&[
        "generate",
        "--seed",
        &seed.to_string(),
        "--count",
        &count.to_string(),
        "--difficulty",
        difficulty,
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn run(episodes: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--episodes", s(episodes), "--out", s(out)];
    args.extend_from_slice(extra);
    hiernav(&args)
}

#[test]
fn generate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = generate(dir.path(), "a.json", 42, 5, "rooms");
    let b = generate(dir.path(), "b.json", 42, 5, "rooms");
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn zero_count_gives_an_empty_valid_set() {
    let dir = tempfile::tempdir().unwrap();
    let p = generate(dir.path(), "e.json", 1, 0, "corridor");
    let set = EpisodeSet::from_json(&fs::read_to_string(p).unwrap()).unwrap();
    assert!(set.episodes.is_empty());
}

#[test]
fn invalid_difficulty_is_a_usage_error_listing_names() {
    let dir = tempfile::tempdir().unwrap();
    let o = hiernav(&["generate", "--difficulty", "maze", "--out", s(&dir.path().join("x.json"))]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    for name in ["corridor", "rooms", "backtrack", "depth_hole"] {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn run_writes_suffixed_logs_and_eval_reports_full_success() {
    let dir = tempfile::tempdir().unwrap();
    let eps = generate(dir.path(), "c.json", 7, 3, "corridor");
    let out = dir.path().join("out");
    let o = run(&eps, &out, &["--runs", "3", "--jobs", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("calls per episode"), "{stdout}");
    let logs: Vec<PathBuf> = (0..3).map(|k| out.join(format!("run{k}.jsonl"))).collect();
    for l in &logs {
        assert!(l.exists());
        assert!(out.join(format!("usage.{}", l.file_name().unwrap().to_str().unwrap().replace("jsonl", "json"))).exists());
    }
    // Same seed and oracle clients give byte-identical runs.
    let first = fs::read(&logs[0]).unwrap();
    assert!(logs.iter().all(|l| fs::read(l).unwrap() == first));

    let json_out = dir.path().join("summary.json");
    let mut args = vec!["eval", "--episodes", s(&eps), "--json", s(&json_out)];
    args.extend(logs.iter().map(|l| s(l)));
    let o = hiernav(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("SR (%)"));
    let summary: Value = serde_json::from_str(&fs::read_to_string(json_out).unwrap()).unwrap();
    assert_eq!(summary["runs"], 3);
    assert_eq!(summary["sr"]["mean"], 100.0);
    assert_eq!(summary["sr"]["std"], 0.0);

    let single = hiernav(&["eval", "--episodes", s(&eps), s(&logs[0])]);
    assert!(single.status.success());
    let v: Value = serde_json::from_str(
        String::from_utf8_lossy(&single.stdout)
            .split_once('{')
            .map(|(_, rest)| format!("{{{rest}"))
            .unwrap()
            .as_str(),
    )
    .unwrap();
    for key in ["ne", "osr", "sr", "spl"] {
        assert_eq!(v[key]["std"], 0.0, "{key}");
    }
}

#[test]
fn eval_rejects_empty_and_mismatched_logs() {
    let dir = tempfile::tempdir().unwrap();
    let eps = generate(dir.path(), "c.json", 7, 2, "corridor");
    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let o = hiernav(&["eval", "--episodes", s(&eps), s(&empty)]);
    assert_eq!(o.status.code(), Some(3));

    let out = dir.path().join("out");
    assert!(run(&eps, &out, &[]).status.success());
    let other = generate(dir.path(), "r.json", 7, 2, "rooms");
    let o = hiernav(&["eval", "--episodes", s(&other), s(&out.join("run0.jsonl"))]);
    assert_eq!(o.status.code(), Some(3));
    let log = read_jsonl(fs::read(out.join("run0.jsonl")).unwrap().as_slice()).unwrap();
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains(&log[0].episode_id), "{err}");
}

#[test]
fn missing_credential_fails_before_any_episode() {
    let dir = tempfile::tempdir().unwrap();
    let eps = generate(dir.path(), "c.json", 7, 2, "corridor");
    let cfg = dir.path().join("http.toml");
    fs::write(
        &cfg,
        "[planner]\nkind = \"http\"\nurl = \"http://127.0.0.1:9/v1/chat/completions\"\nmodel = \"m\"\napi_key_env = \"HIERNAV_CLI_TEST_KEY\"\n\n\
         [grounder]\nkind = \"http\"\nurl = \"http://127.0.0.1:9/v1/chat/completions\"\nmodel = \"m\"\napi_key_env = \"HIERNAV_CLI_TEST_KEY\"\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = run(&eps, &out, &["--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("HIERNAV_CLI_TEST_KEY"));
    assert!(!out.join("run0.jsonl").exists());
}

#[test]
fn bad_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let eps = generate(dir.path(), "c.json", 7, 1, "corridor");
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[episode]\nmax_steps = 0\n").unwrap();
    let o = run(&eps, &dir.path().join("out"), &["--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn replay_draws_the_backtracking_episode() {
    let dir = tempfile::tempdir().unwrap();
    let eps = generate(dir.path(), "b.json", 5, 1, "backtrack");
    let cfg = dir.path().join("adv.toml");
    fs::write(&cfg, "[planner]\nkind = \"adversarial_oracle\"\n[grounder]\nkind = \"adversarial_oracle\"\n").unwrap();
    let out = dir.path().join("out");
    let o = run(&eps, &out, &["--config", s(&cfg)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let logs = read_jsonl(fs::read(out.join("run0.jsonl")).unwrap().as_slice()).unwrap();
    let log = &logs[0];

    // The agent walks away from the start and later returns to it.
    let bt = log
        .steps
        .iter()
        .position(|s| matches!(s.language_action, LanguageAction::Backtrack(_)))
        .expect("adversarial run backtracks");
    let start = log.start_pose.position();
    let away = log.steps[bt].pose.position().distance(&start);
    let back = log.steps[bt].poses.last().unwrap().position().distance(&start);
    assert!(away > 1.0 && back < away / 2.0, "away {away} back {back}");

    let png = dir.path().join("replay.png");
    let o = hiernav(&[
        "replay",
        "--log",
        s(&out.join("run0.jsonl")),
        "--episodes",
        s(&eps),
        "--episode",
        &log.episode_id,
        "--out",
        s(&png),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let navigates = log
        .steps
        .iter()
        .filter(|s| matches!(s.language_action, LanguageAction::Navigate(_)))
        .count();
    assert!(String::from_utf8_lossy(&o.stdout).contains(&format!("{navigates} goals")));
    let img = image::open(&png).unwrap().to_rgb8();
    assert!(img.width() > 0 && img.pixels().any(|p| p.0 == [20, 170, 40]));

    let o = hiernav(&[
        "replay",
        "--log",
        s(&out.join("run0.jsonl")),
        "--episodes",
        s(&eps),
        "--episode",
        "nope",
        "--out",
        s(&png),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope"));
}
