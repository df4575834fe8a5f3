//! Waypoint history: what the agent saw and decided at each planner step.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{LanguageAction, ProgressEstimate};
use crate::geometry::{AgentPose, View, WorldPoint};
use crate::mapping::GrayImage;
use crate::mllm::PromptPart;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HistoryError {
    #[error("waypoint {requested} does not exist ({available} recorded)")]
    StaleWaypoint { requested: usize, available: usize },
    #[error("backtrack to waypoint {requested} violates policy {policy}")]
    Policy {
        requested: usize,
        policy: BacktrackPolicy,
    },
}

/// What the history shows the planner.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryMode {
    #[default]
    VisualAndActions,
    TextObsAndActions,
    ActionsOnly,
    VisualOnly,
    TextOnly,
    None,
}

impl HistoryMode {
    pub fn stores_images(self) -> bool {
        matches!(self, HistoryMode::VisualAndActions | HistoryMode::VisualOnly)
    }

    pub fn stores_text(self) -> bool {
        matches!(self, HistoryMode::TextObsAndActions | HistoryMode::TextOnly)
    }

    pub fn shows_actions(self) -> bool {
        matches!(
            self,
            HistoryMode::VisualAndActions | HistoryMode::TextObsAndActions | HistoryMode::ActionsOnly
        )
    }
}

/// Which recorded waypoints a backtrack may target.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BacktrackPolicy {
    #[default]
    Any,
    /// Only the waypoint before the latest one.
    LastOnly,
    Disabled,
}

impl fmt::Display for BacktrackPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BacktrackPolicy::Any => "any",
            BacktrackPolicy::LastOnly => "last_only",
            BacktrackPolicy::Disabled => "disabled",
        })
    }
}

/// One captured view as history keeps it: a downscaled image plus a short
/// text caption of what is visible.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSnapshot {
    pub image: Arc<GrayImage>,
    pub caption: String,
}

/// Index into the history's image store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObservationRef(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub id: usize,
    pub pose: AgentPose,
    pub step_index: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub observation_refs: Vec<ObservationRef>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub text_observations: Vec<String>,
    pub action_taken: String,
    pub progress: String,
}

#[derive(Debug, Clone, Default)]
pub struct NavigationHistory {
    mode: HistoryMode,
    waypoints: Vec<Waypoint>,
    images: Vec<Arc<GrayImage>>,
}

impl NavigationHistory {
    pub fn new(mode: HistoryMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    pub fn mode(&self) -> HistoryMode {
        self.mode
    }

    /// Changes how history renders; recorded waypoints are not touched.
    pub fn set_mode(&mut self, mode: HistoryMode) {
        self.mode = mode;
    }

    pub fn waypoints(&self) -> &[Waypoint] {
        &self.waypoints
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    pub fn image(&self, r: ObservationRef) -> Option<&Arc<GrayImage>> {
        self.images.get(r.0)
    }

    /// Appends a waypoint for the step just decided and returns its id.
    pub fn record_step(
        &mut self,
        pose: AgentPose,
        step_index: usize,
        views: &[ViewSnapshot; 4],
        action: &LanguageAction,
        progress: &ProgressEstimate,
    ) -> usize {
        let id = self.waypoints.len();
        let observation_refs = if self.mode.stores_images() {
            views
                .iter()
                .map(|v| {
                    self.images.push(Arc::clone(&v.image));
                    ObservationRef(self.images.len() - 1)
                })
                .collect()
        } else {
            Vec::new()
        };
        let text_observations = if self.mode.stores_text() {
            View::ALL
                .iter()
                .zip(views.iter())
                .map(|(view, snap)| format!("{view}: {}", snap.caption))
                .collect()
        } else {
            Vec::new()
        };
        self.waypoints.push(Waypoint {
            id,
            pose,
            step_index,
            observation_refs,
            text_observations,
            action_taken: action.to_string(),
            progress: progress.as_str().to_string(),
        });
        id
    }

    /// Position recorded for `waypoint_id`, subject to `policy`.
    pub fn resolve_backtrack(
        &self,
        waypoint_id: usize,
        policy: BacktrackPolicy,
    ) -> Result<WorldPoint, HistoryError> {
        let wp = self
            .waypoints
            .get(waypoint_id)
            .ok_or(HistoryError::StaleWaypoint {
                requested: waypoint_id,
                available: self.waypoints.len(),
            })?;
        let allowed = match policy {
            BacktrackPolicy::Any => true,
            BacktrackPolicy::LastOnly => waypoint_id + 1 == self.waypoints.len() - 1,
            BacktrackPolicy::Disabled => false,
        };
        if !allowed {
            return Err(HistoryError::Policy {
                requested: waypoint_id,
                policy,
            });
        }
        Ok(wp.pose.position())
    }

    /// Prompt fragment for the current mode. Over budget, keeps waypoint 0
    /// and the most recent `budget` waypoints with a marker for the gap.
    pub fn render_history_context(&self, budget: usize) -> Vec<PromptPart> {
        if self.mode == HistoryMode::None || self.waypoints.is_empty() {
            return Vec::new();
        }
        let n = self.waypoints.len();
        let mut parts = Vec::new();
        if n <= budget + 1 {
            for wp in &self.waypoints {
                self.render_waypoint(wp, &mut parts);
            }
        } else {
            self.render_waypoint(&self.waypoints[0], &mut parts);
            let omitted = n - 1 - budget;
            parts.push(PromptPart::text(format!(
                "[... {omitted} earlier waypoint{} omitted ...]",
                if omitted == 1 { "" } else { "s" }
            )));
            for wp in &self.waypoints[n - budget..] {
                self.render_waypoint(wp, &mut parts);
            }
        }
        parts
    }

    fn render_waypoint(&self, wp: &Waypoint, parts: &mut Vec<PromptPart>) {
        let mut line = format!("Waypoint {} (step {})", wp.id, wp.step_index);
        if self.mode.stores_text() && !wp.text_observations.is_empty() {
            line.push_str(&format!(" observed: {}.", wp.text_observations.join("; ")));
        }
        if self.mode.shows_actions() {
            line.push_str(&format!(" Action taken: {}.", wp.action_taken));
        }
        if self.mode.stores_images() && !wp.observation_refs.is_empty() {
            line.push_str(" Views (front, left, right, back):");
        }
        parts.push(PromptPart::text(line));
        if self.mode.stores_images() {
            for r in &wp.observation_refs {
                if let Some(img) = self.images.get(r.0) {
                    parts.push(PromptPart::image(Arc::clone(img)));
                }
            }
        }
    }
}
