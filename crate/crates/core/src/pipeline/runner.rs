//! Runs an episode set, in parallel across episodes.

use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::mllm::{ChatModel, ClientError, HttpChatClient, OracleConfig, OracleMode, ScriptedOracle, UsageLedger};
use crate::sim::{EpisodeSet, SimEnv, SimError};

use super::{run_episode, ClientKind, Clients, EpisodeInfo, RunConfig, TrajectoryLog};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("model client: {0}")]
    Client(#[from] ClientError),
    #[error("episode set: {0}")]
    Data(#[from] SimError),
    #[error("thread pool: {0}")]
    Pool(String),
}

/// Runs every episode of `set` once and returns the logs in episode order.
/// HTTP clients are built before any episode starts, so a missing
/// credential fails immediately.
pub fn run_episodes(
    set: &EpisodeSet,
    cfg: &RunConfig,
    ledger: &UsageLedger,
    jobs: Option<usize>,
) -> Result<Vec<TrajectoryLog>, RunError> {
    let shared: Option<(Arc<dyn ChatModel>, Arc<dyn ChatModel>)> = match cfg.planner.kind {
        ClientKind::Http => Some((
            Arc::new(HttpChatClient::new(cfg.planner.http.clone())?),
            Arc::new(HttpChatClient::new(cfg.grounder.http.clone())?),
        )),
        _ => None,
    };
    let mut worlds = Vec::with_capacity(set.episodes.len());
    for e in &set.episodes {
        worlds.push(Arc::new(set.world(&e.world_id)?));
    }

    let run_one = |idx: usize| -> TrajectoryLog {
        let episode = Arc::new(set.episodes[idx].clone());
        let mut env = SimEnv::new(
            Arc::clone(&worlds[idx]),
            Arc::clone(&episode),
            cfg.camera,
            cfg.render,
            cfg.episode.control,
        );
        let info = EpisodeInfo {
            id: &episode.id,
            instruction: &episode.instruction,
        };
        match &shared {
            Some((planner, grounder)) => run_episode(
                &mut env,
                Clients {
                    planner: planner.as_ref(),
                    grounder: grounder.as_ref(),
                    ledger: Some(ledger),
                },
                info,
                &cfg.episode,
            ),
            None => {
                let mode = if cfg.planner.kind == ClientKind::AdversarialOracle {
                    OracleMode::Adversarial
                } else {
                    OracleMode::Faithful
                };
                let oracle = ScriptedOracle::new(
                    env.handle(),
                    mode,
                    OracleConfig {
                        success_radius: cfg.episode.success_radius,
                        ..OracleConfig::default()
                    },
                );
                run_episode(
                    &mut env,
                    Clients {
                        planner: &oracle,
                        grounder: &oracle,
                        ledger: Some(ledger),
                    },
                    info,
                    &cfg.episode,
                )
            }
        }
    };

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        builder = builder.num_threads(n.max(1));
    }
    let pool = builder.build().map_err(|e| RunError::Pool(e.to_string()))?;
    Ok(pool.install(|| (0..set.episodes.len()).into_par_iter().map(run_one).collect()))
}
