//! Trajectory log: everything an episode decided and did.
//!
//! Persisted as JSON lines, one [`TrajectoryLog`] object per line. The
//! `schema_version` field is bumped on any incompatible change.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{LanguageAction, VisionAction};
use crate::geometry::{AgentPose, WorldPoint};
use crate::mllm::Usage;
use crate::planner::ControlCommand;

pub const LOG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Stopped,
    StepBudget,
    Unrecoverable,
}

/// A recovery taken after a stage failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    ReaskPlanner,
    ReaskGrounder,
    MedianDepth,
    NearestFreeCell,
    ForwardProbe,
    Skipped,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepUsage {
    pub planner_calls: u32,
    pub grounder_calls: u32,
    pub planner: Usage,
    pub grounder: Usage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Pose when the step was decided.
    pub pose: AgentPose,
    pub language_action: LanguageAction,
    pub progress: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vision_action: Option<VisionAction>,
    /// Navigation target actually planned to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub world_goal: Option<WorldPoint>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fallbacks: Vec<Fallback>,
    pub commands: Vec<ControlCommand>,
    /// Pose after each executed command.
    pub poses: Vec<AgentPose>,
    pub collisions: usize,
    pub usage: StepUsage,
    pub waypoint: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub schema_version: u32,
    pub episode_id: String,
    pub instruction: String,
    pub start_pose: AgentPose,
    pub steps: Vec<StepRecord>,
    pub final_pose: AgentPose,
    pub termination: Termination,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TrajectoryLog {
    /// Every pose the agent occupied, in order, starting with the start pose.
    pub fn visited_poses(&self) -> Vec<AgentPose> {
        let mut out = vec![self.start_pose];
        for s in &self.steps {
            out.extend(s.poses.iter().copied());
        }
        out
    }

    /// Sum of executed forward displacements.
    pub fn path_length(&self) -> f64 {
        self.visited_poses()
            .windows(2)
            .map(|w| w[0].position().distance(&w[1].position()))
            .sum()
    }

    pub fn fallback_count(&self) -> usize {
        self.steps.iter().map(|s| s.fallbacks.len()).sum()
    }

    pub fn total_usage(&self) -> StepUsage {
        self.steps.iter().fold(StepUsage::default(), |mut acc, s| {
            acc.planner_calls += s.usage.planner_calls;
            acc.grounder_calls += s.usage.grounder_calls;
            acc.planner.input_tokens += s.usage.planner.input_tokens;
            acc.planner.output_tokens += s.usage.planner.output_tokens;
            acc.grounder.input_tokens += s.usage.grounder.input_tokens;
            acc.grounder.output_tokens += s.usage.grounder.output_tokens;
            acc
        })
    }
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("log contains no episodes")]
    Empty,
}

pub fn write_jsonl(out: &mut impl Write, logs: &[TrajectoryLog]) -> std::io::Result<()> {
    for log in logs {
        serde_json::to_writer(&mut *out, log)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a JSON-lines log. An empty file is an error.
pub fn read_jsonl(input: impl BufRead) -> Result<Vec<TrajectoryLog>, LogError> {
    let mut logs = Vec::new();
    for (k, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let log: TrajectoryLog = serde_json::from_str(&line).map_err(|e| LogError::Parse {
            line: k + 1,
            message: e.to_string(),
        })?;
        if log.schema_version != LOG_SCHEMA_VERSION {
            return Err(LogError::Parse {
                line: k + 1,
                message: format!(
                    "schema version {} is not supported (expected {LOG_SCHEMA_VERSION})",
                    log.schema_version
                ),
            });
        }
        logs.push(log);
    }
    if logs.is_empty() {
        return Err(LogError::Empty);
    }
    Ok(logs)
}
