//! `hiernav`: generate episode sets, run the navigator over them, evaluate
//! trajectory logs and replay one episode as a top-down image.
//!
//! Exit status: 0 on success, 2 for usage errors, 3 for data errors and 4
//! for model transport or credential errors.

mod replay;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use hiernav::metrics::{aggregate, run_metrics};
use hiernav::mllm::UsageLedger;
use hiernav::pipeline::{read_jsonl, run_episodes, write_jsonl, ConfigError, RunConfig, RunError, TrajectoryLog};
use hiernav::sim::{generate_episodes, Difficulty, EpisodeSet};

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Transport(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Transport(_) => 4,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => CliError::Data(e.to_string()),
            ConfigError::Parse(_) | ConfigError::Invalid(_) => CliError::Usage(e.to_string()),
        }
    }
}

impl From<RunError> for CliError {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Client(_) => CliError::Transport(e.to_string()),
            RunError::Data(_) | RunError::Pool(_) => CliError::Data(e.to_string()),
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "hiernav", version, about = "Hierarchical instruction-following navigation in a gridworld")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a seeded episode set.
    Generate(GenerateArgs),
    /// Run the navigator over an episode set.
    Run(RunArgs),
    /// Compute NE, OSR, SR and SPL over one or more run logs.
    Eval(EvalArgs),
    /// Draw one episode of a log as a top-down PNG.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    count: usize,
    /// corridor, rooms, backtrack or depth_hole.
    #[arg(long, default_value = "corridor", value_parser = parse_difficulty)]
    difficulty: Difficulty,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    episodes: PathBuf,
    /// TOML run configuration; defaults to oracle clients.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    runs: u32,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    jobs: Option<u32>,
    /// Output directory for run<k>.jsonl and usage.run<k>.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    episodes: PathBuf,
    /// One JSONL log per run.
    #[arg(required = true)]
    logs: Vec<PathBuf>,
    /// Also write the JSON summary here.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    #[arg(long)]
    log: PathBuf,
    /// Episode set the log was run on; supplies the walls.
    #[arg(long)]
    episodes: PathBuf,
    #[arg(long)]
    episode: String,
    #[arg(long)]
    out: PathBuf,
}

fn parse_difficulty(s: &str) -> Result<Difficulty, String> {
    s.parse()
}

fn load_episodes(path: &Path) -> Result<EpisodeSet, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    EpisodeSet::from_json(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_log(path: &Path) -> Result<Vec<TrajectoryLog>, CliError> {
    let file = File::open(path).map_err(|e| io_error(path, e))?;
    read_jsonl(BufReader::new(file)).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| io_error(path, e))
}

fn generate(args: GenerateArgs) -> Result<(), CliError> {
    let set = generate_episodes(args.seed, args.count, args.difficulty);
    write_file(&args.out, set.to_json().as_bytes())?;
    println!(
        "wrote {} {} episodes to {}",
        set.episodes.len(),
        args.difficulty,
        args.out.display()
    );
    Ok(())
}

fn run(args: RunArgs) -> Result<(), CliError> {
    let cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let set = load_episodes(&args.episodes)?;
    fs::create_dir_all(&args.out).map_err(|e| io_error(&args.out, e))?;
    for k in 0..args.runs {
        let ledger = UsageLedger::new(cfg.prices);
        let logs = run_episodes(&set, &cfg, &ledger, args.jobs.map(|j| j as usize))?;
        let path = args.out.join(format!("run{k}.jsonl"));
        let file = File::create(&path).map_err(|e| io_error(&path, e))?;
        let mut w = BufWriter::new(file);
        write_jsonl(&mut w, &logs)
            .and_then(|_| w.flush())
            .map_err(|e| io_error(&path, e))?;
        let report = ledger.report();
        let usage = args.out.join(format!("usage.run{k}.json"));
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        write_file(&usage, json.as_bytes())?;
        let failed = logs.iter().filter(|l| l.error.is_some()).count();
        println!("run {k}: {} episodes -> {}", logs.len(), path.display());
        if failed > 0 {
            println!("run {k}: {failed} episodes ended unrecoverable");
        }
        println!("{report}");
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Result<(), CliError> {
    let set = load_episodes(&args.episodes)?;
    let mut runs = Vec::with_capacity(args.logs.len());
    for path in &args.logs {
        let logs = load_log(path)?;
        let metrics = run_metrics(&logs, &set).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        runs.push(metrics);
    }
    let agg = aggregate(&runs).map_err(|e| CliError::Data(e.to_string()))?;
    let json = agg.to_json();
    println!("{agg}");
    println!("{json}");
    if let Some(p) = &args.json {
        write_file(p, json.as_bytes())?;
    }
    Ok(())
}

fn replay(args: ReplayArgs) -> Result<(), CliError> {
    let logs = load_log(&args.log)?;
    let log = logs
        .iter()
        .find(|l| l.episode_id == args.episode)
        .ok_or_else(|| CliError::Data(format!("episode {} not in {}", args.episode, args.log.display())))?;
    let set = load_episodes(&args.episodes)?;
    let episode = set
        .episode(&args.episode)
        .ok_or_else(|| CliError::Data(format!("episode {} not in {}", args.episode, args.episodes.display())))?;
    let world = set.world(&episode.world_id).map_err(|e| CliError::Data(e.to_string()))?;
    let scene = replay::Scene::of(log);
    replay::render(&scene, &world)
        .save_with_format(&args.out, image::ImageFormat::Png)
        .map_err(|e| CliError::Data(format!("{}: {e}", args.out.display())))?;
    println!(
        "wrote {} ({} waypoints, {} goals)",
        args.out.display(),
        scene.waypoints.len(),
        scene.goals.len()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Run(a) => run(a),
        Command::Eval(a) => eval(a),
        Command::Replay(a) => replay(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
