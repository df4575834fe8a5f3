//! Navigation error, success, oracle success and SPL, per episode and
//! aggregated over repeated runs.
//!
//! Navigation error is the geodesic distance on the ground-truth world, not
//! the straight-line distance. Success requires an explicit stop strictly
//! within the success radius.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::{Termination, TrajectoryLog};
use crate::sim::{Episode, EpisodeSet, SimError, World};

/// Stopping strictly closer than this to the goal counts as success.
pub const SUCCESS_RADIUS: f64 = 3.0;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("episode {episode}: goal is unreachable from the agent's position")]
    Unreachable { episode: String },
    #[error("log references episode {0}, which is not in the episode set")]
    UnknownEpisode(String),
    #[error("run {run} covers a different episode set (first difference: {episode})")]
    MismatchedRuns { run: usize, episode: String },
    #[error("no runs to aggregate")]
    NoRuns,
    #[error("episode set: {0}")]
    Data(#[from] SimError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode_id: String,
    /// Geodesic distance from the final pose to the goal, meters.
    pub ne: f64,
    pub success: bool,
    pub oracle_success: bool,
    pub spl: f64,
    /// Meters actually moved.
    pub path_length: f64,
}

/// SPL for one episode: `S * L / max(P, L)`.
pub fn spl(success: bool, shortest: f64, taken: f64) -> f64 {
    if !success {
        return 0.0;
    }
    let denom = taken.max(shortest);
    if denom <= 0.0 {
        return 1.0;
    }
    shortest / denom
}

pub fn episode_metrics(
    log: &TrajectoryLog,
    episode: &Episode,
    world: &World,
) -> Result<EpisodeMetrics, MetricsError> {
    let field = world.geodesic_field(episode.goal);
    let unreachable = || MetricsError::Unreachable {
        episode: episode.id.clone(),
    };
    let ne = field.distance(log.final_pose.position());
    if !ne.is_finite() {
        return Err(unreachable());
    }
    let closest = log
        .visited_poses()
        .iter()
        .map(|p| field.distance(p.position()))
        .fold(f64::INFINITY, f64::min);
    let success = ne < SUCCESS_RADIUS && log.termination == Termination::Stopped;
    let path_length = log.path_length();
    Ok(EpisodeMetrics {
        episode_id: episode.id.clone(),
        ne,
        success,
        oracle_success: closest < SUCCESS_RADIUS,
        spl: spl(success, episode.gt_path_length, path_length),
        path_length,
    })
}

/// Metrics for every log of one run, matched to `set` by episode id.
pub fn run_metrics(logs: &[TrajectoryLog], set: &EpisodeSet) -> Result<Vec<EpisodeMetrics>, MetricsError> {
    logs.iter()
        .map(|log| {
            let ep = set
                .episode(&log.episode_id)
                .ok_or_else(|| MetricsError::UnknownEpisode(log.episode_id.clone()))?;
            let world = set.world(&ep.world_id)?;
            episode_metrics(log, ep, &world)
        })
        .collect()
}

/// Mean and sample standard deviation across runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len();
        if n == 0 {
            return Stat { mean: 0.0, std: 0.0 };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
            (ss / (n - 1) as f64).sqrt()
        };
        Stat { mean, std }
    }
}

impl fmt::Display for Stat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = f.precision().unwrap_or(1);
        write!(f, "{:.p$}±{:.p$}", self.mean, self.std)
    }
}

/// Per-run episode means, then mean±std across runs. SR and OSR are
/// percentages; NE is meters; SPL is a ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunAggregate {
    pub runs: usize,
    pub episodes: usize,
    pub ne: Stat,
    pub osr: Stat,
    pub sr: Stat,
    pub spl: Stat,
}

/// Per-run means: (NE, OSR %, SR %, SPL).
fn run_means(run: &[EpisodeMetrics]) -> (f64, f64, f64, f64) {
    let n = run.len().max(1) as f64;
    let pct = |f: fn(&EpisodeMetrics) -> bool| 100.0 * run.iter().filter(|m| f(m)).count() as f64 / n;
    (
        run.iter().map(|m| m.ne).sum::<f64>() / n,
        pct(|m| m.oracle_success),
        pct(|m| m.success),
        run.iter().map(|m| m.spl).sum::<f64>() / n,
    )
}

pub fn aggregate(runs: &[Vec<EpisodeMetrics>]) -> Result<RunAggregate, MetricsError> {
    let first = runs.first().ok_or(MetricsError::NoRuns)?;
    let ids = |run: &[EpisodeMetrics]| run.iter().map(|m| m.episode_id.clone()).collect::<BTreeSet<_>>();
    let reference = ids(first);
    for (k, run) in runs.iter().enumerate().skip(1) {
        let other = ids(run);
        if other != reference || run.len() != first.len() {
            let episode = reference
                .symmetric_difference(&other)
                .next()
                .cloned()
                .unwrap_or_else(|| "(duplicate ids)".to_string());
            return Err(MetricsError::MismatchedRuns { run: k, episode });
        }
    }
    let means: Vec<_> = runs.iter().map(|r| run_means(r)).collect();
    let col = |f: fn(&(f64, f64, f64, f64)) -> f64| Stat::of(&means.iter().map(f).collect::<Vec<_>>());
    Ok(RunAggregate {
        runs: runs.len(),
        episodes: first.len(),
        ne: col(|m| m.0),
        osr: col(|m| m.1),
        sr: col(|m| m.2),
        spl: col(|m| m.3),
    })
}

impl RunAggregate {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("aggregate serializes")
    }
}

impl fmt::Display for RunAggregate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "runs: {}  episodes: {}", self.runs, self.episodes)?;
        writeln!(f, "{:>12} {:>12} {:>12} {:>12}", "NE (m)", "OSR (%)", "SR (%)", "SPL")?;
        write!(
            f,
            "{:>12} {:>12} {:>12} {:>12}",
            format!("{:.2}", self.ne),
            format!("{:.1}", self.osr),
            format!("{:.1}", self.sr),
            format!("{:.3}", self.spl)
        )
    }
}
