//! The per-step loop: language action, vision action, robot action.

mod config;
mod trajectory;
mod runner;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{
    parse_language_action, parse_vision_action, LanguageAction, ProgressEstimate, VisionAction,
};
use crate::geometry::{
    camera_to_world, select_target_pixel, unproject_pixel, view_heading, AgentPose,
    CameraIntrinsics, PixelSelection, View, WorldPoint,
};
use crate::history::{BacktrackPolicy, HistoryMode, NavigationHistory, ViewSnapshot};
use crate::mapping::{CellState, DepthImage, GrayImage, MapConfig, OccupancyGrid};
use crate::mllm::{
    build_language_prompt, build_vision_prompt, ChatModel, ClientError, LabeledView,
    LanguagePromptOptions, PromptPayload, Stage, UsageLedger, VisionPromptOptions,
};
use crate::planner::{
    compute_distance_field, extract_path, nearest_free_cell, path_to_commands, ControlCommand,
    ControlConfig, Path,
};

pub use config::{ClientKind, ClientSection, ConfigError, RunConfig};
pub use trajectory::{
    read_jsonl, write_jsonl, Fallback, LogError, StepRecord, StepUsage, Termination,
    TrajectoryLog, LOG_SCHEMA_VERSION,
};
pub use runner::{run_episodes, RunError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("sensor failure: {0}")]
    Sensor(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewObservation {
    pub view: View,
    pub depth: DepthImage,
    /// Short description of visible objects, used by text history modes.
    pub caption: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub pose: AgentPose,
    /// Front, Left, Right, Back.
    pub views: [ViewObservation; 4],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub pose: AgentPose,
    pub collided: bool,
}

/// What the agent needs from the world: posed four-view depth and motion.
pub trait Environment {
    fn intrinsics(&self) -> CameraIntrinsics;
    fn pose(&self) -> AgentPose;
    fn observe(&mut self) -> Result<Observation, EnvError>;
    fn execute(&mut self, cmd: ControlCommand) -> StepResult;
}

/// How the goal pixel is picked from a grounding box.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PixelStrategy {
    #[default]
    BottomCenter,
    MedianDepth,
    /// Use the model's `point_2d` when present.
    DirectPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub max_steps: usize,
    pub success_radius: f64,
    pub pixel_selection: PixelStrategy,
    pub backtrack: BacktrackPolicy,
    pub history: HistoryMode,
    /// Most recent waypoints shown to the planner (waypoint 0 always kept).
    pub history_budget: usize,
    pub parse_retries: usize,
    pub commands_per_step: usize,
    pub replan_every: usize,
    /// Planner images are downscaled by this factor.
    pub image_downscale: usize,
    /// Depth mapped to full brightness in prompt images.
    pub image_max_range: f32,
    pub image_cap: usize,
    /// Search radius when snapping a goal to free space.
    pub snap_radius: f64,
    pub forward_probe: f64,
    pub seed: u64,
    pub map: MapConfig,
    pub control: ControlConfig,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            max_steps: 12,
            success_radius: 3.0,
            pixel_selection: PixelStrategy::BottomCenter,
            backtrack: BacktrackPolicy::Any,
            history: HistoryMode::VisualAndActions,
            history_budget: 6,
            parse_retries: 2,
            commands_per_step: 40,
            replan_every: 5,
            image_downscale: 4,
            image_max_range: 10.0,
            image_cap: 64,
            snap_radius: 1.0,
            forward_probe: 0.5,
            seed: 0,
            map: MapConfig::default(),
            control: ControlConfig::default(),
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.success_radius > 0.0) {
            return Err("success_radius must be positive".into());
        }
        if self.max_steps < 1 {
            return Err("max_steps must be at least 1".into());
        }
        if self.commands_per_step < 1 || self.replan_every < 1 {
            return Err("commands_per_step and replan_every must be at least 1".into());
        }
        if self.image_downscale < 1 {
            return Err("image_downscale must be at least 1".into());
        }
        Ok(())
    }
}

/// Per-episode identity handed to [`run_episode`].
#[derive(Debug, Clone, Copy)]
pub struct EpisodeInfo<'a> {
    pub id: &'a str,
    pub instruction: &'a str,
}

/// Model clients backing the two stages.
#[derive(Clone, Copy)]
pub struct Clients<'a> {
    pub planner: &'a dyn ChatModel,
    pub grounder: &'a dyn ChatModel,
    pub ledger: Option<&'a UsageLedger>,
}

enum Abort {
    Client(ClientError),
    Env(EnvError),
}

struct Run<'a, 'e> {
    env: &'e mut dyn Environment,
    clients: Clients<'a>,
    info: EpisodeInfo<'a>,
    cfg: &'a EpisodeConfig,
    k: CameraIntrinsics,
    map: OccupancyGrid,
    history: NavigationHistory,
}

/// Runs one episode to termination.
pub fn run_episode(
    env: &mut dyn Environment,
    clients: Clients<'_>,
    info: EpisodeInfo<'_>,
    cfg: &EpisodeConfig,
) -> TrajectoryLog {
    let start_pose = env.pose();
    let k = env.intrinsics();
    if let Some(ledger) = clients.ledger {
        ledger.begin_episode(info.id);
    }
    let mut run = Run {
        map: OccupancyGrid::new(cfg.map, start_pose.position()),
        history: NavigationHistory::new(cfg.history),
        env,
        clients,
        info,
        cfg,
        k,
    };
    let mut steps = Vec::new();
    let mut termination = Termination::StepBudget;
    let mut error = None;
    for t in 0..cfg.max_steps {
        match run.step(t) {
            Ok(record) => {
                let stop = record.language_action == LanguageAction::Stop;
                steps.push(record);
                if stop {
                    termination = Termination::Stopped;
                    break;
                }
            }
            Err(Abort::Client(e)) => {
                log::warn!("episode {}: model client failed: {e}", info.id);
                termination = Termination::Unrecoverable;
                error = Some(e.to_string());
                break;
            }
            Err(Abort::Env(e)) => {
                log::warn!("episode {}: environment failed: {e}", info.id);
                termination = Termination::Unrecoverable;
                error = Some(e.to_string());
                break;
            }
        }
    }
    TrajectoryLog {
        schema_version: LOG_SCHEMA_VERSION,
        episode_id: info.id.to_string(),
        instruction: info.instruction.to_string(),
        start_pose,
        final_pose: run.env.pose(),
        steps,
        termination,
        error,
    }
}

/// Distance from the agent center to the obstacle recorded after a bump,
/// less one forward step.
const BUMP_REACH: f64 = 0.15;
/// Consecutive blocked moves after which a step gives up on its goal.
const MAX_STALLED_BUMPS: usize = 3;

/// Outcome of the goal-resolution part of a step.
struct Resolved {
    goal: Option<WorldPoint>,
}

impl Run<'_, '_> {
    fn step(&mut self, t: usize) -> Result<StepRecord, Abort> {
        let obs = self.env.observe().map_err(Abort::Env)?;
        let pose = obs.pose;
        for v in &obs.views {
            self.map.integrate_depth(&v.depth, &self.k, &pose, v.view);
        }
        self.map.inflate();

        let small: Vec<Arc<GrayImage>> = obs
            .views
            .iter()
            .map(|v| Arc::new(v.depth.to_gray8(self.cfg.image_downscale, self.cfg.image_max_range)))
            .collect();
        let labeled: Vec<LabeledView> = obs
            .views
            .iter()
            .zip(&small)
            .map(|(v, img)| LabeledView {
                view: v.view,
                image: Arc::clone(img),
            })
            .collect();

        let mut rec = StepRecord {
            step: t,
            pose,
            language_action: LanguageAction::Stop,
            progress: String::new(),
            vision_action: None,
            world_goal: None,
            fallbacks: Vec::new(),
            commands: Vec::new(),
            poses: Vec::new(),
            collisions: 0,
            usage: StepUsage::default(),
            waypoint: self.history.len(),
            notes: Vec::new(),
        };

        // Language action.
        let history_parts = self.history.render_history_context(self.cfg.history_budget);
        let lang_opts = LanguagePromptOptions {
            allow_backtrack: self.cfg.backtrack != BacktrackPolicy::Disabled,
            image_cap: self.cfg.image_cap,
            ..Default::default()
        };
        let lang_payload = match build_language_prompt(self.info.instruction, &history_parts, &labeled, &lang_opts) {
            Ok(p) => Some(p),
            Err(e) => {
                rec.notes.push(format!("language prompt: {e}"));
                None
            }
        };
        let probe_only = lang_payload.is_none();
        let parsed = match lang_payload {
            Some(p) => self.ask(&p, &mut rec, |raw| parse_language_action(raw).map_err(|e| e.to_string()))?,
            None => None,
        };
        // With no usable planner reply the step grounds the front view with
        // an empty progress estimate.
        let (action, progress) = parsed.unwrap_or_else(|| {
            rec.notes.push("no usable planner reply; navigating front".into());
            (LanguageAction::Navigate(View::Front), ProgressEstimate::default())
        });
        if probe_only {
            rec.fallbacks.push(Fallback::ForwardProbe);
        }
        rec.language_action = action;
        rec.progress = progress.as_str().to_string();

        let resolved = match action {
            LanguageAction::Stop => Resolved { goal: None },
            LanguageAction::Backtrack(id) => match self.history.resolve_backtrack(id, self.cfg.backtrack) {
                Ok(p) => self.snap_goal(p, &pose, &mut rec),
                Err(e) => {
                    rec.notes.push(e.to_string());
                    rec.fallbacks.push(Fallback::ForwardProbe);
                    self.probe_goal(&pose, &mut rec)
                }
            },
            LanguageAction::Navigate(_) if probe_only => self.probe_goal(&pose, &mut rec),
            LanguageAction::Navigate(view) => {
                let obs_view = &obs.views[view.index()];
                self.ground(view, obs_view, &progress, &pose, &mut rec)?
            }
        };

        if let Some(goal) = resolved.goal {
            rec.world_goal = Some(goal);
            self.navigate(goal, &mut rec);
        }

        let snapshots: [ViewSnapshot; 4] = std::array::from_fn(|k| ViewSnapshot {
            image: Arc::clone(&small[k]),
            caption: obs.views[k].caption.clone(),
        });
        rec.waypoint = self.history.record_step(pose, t, &snapshots, &action, &progress);
        Ok(rec)
    }

    /// Sends `payload`, re-asking with a format reminder on parse failure.
    /// `Ok(None)` means every attempt was unparseable.
    fn ask<T>(
        &self,
        payload: &PromptPayload,
        rec: &mut StepRecord,
        parse: impl Fn(&str) -> Result<T, String>,
    ) -> Result<Option<T>, Abort> {
        let mut current = payload.clone();
        for attempt in 0..=self.cfg.parse_retries {
            if attempt > 0 {
                rec.fallbacks.push(match payload.stage {
                    Stage::Planner => Fallback::ReaskPlanner,
                    Stage::Grounder => Fallback::ReaskGrounder,
                });
                current = payload.with_format_reminder();
            }
            let client = match payload.stage {
                Stage::Planner => self.clients.planner,
                Stage::Grounder => self.clients.grounder,
            };
            let reply = client.complete(&current).map_err(Abort::Client)?;
            if let Some(ledger) = self.clients.ledger {
                ledger.record(self.info.id, payload.stage, &reply.usage);
            }
            let (calls, usage) = match payload.stage {
                Stage::Planner => (&mut rec.usage.planner_calls, &mut rec.usage.planner),
                Stage::Grounder => (&mut rec.usage.grounder_calls, &mut rec.usage.grounder),
            };
            *calls += 1;
            usage.input_tokens += reply.usage.input_tokens;
            usage.output_tokens += reply.usage.output_tokens;
            match parse(&reply.text) {
                Ok(v) => return Ok(Some(v)),
                Err(e) => {
                    log::debug!("episode {}: unparseable {} reply: {e}", self.info.id, payload.stage.name());
                    rec.notes.push(format!("{} parse: {e}", payload.stage.name()));
                }
            }
        }
        Ok(None)
    }

    fn ground(
        &self,
        view: View,
        obs_view: &ViewObservation,
        progress: &ProgressEstimate,
        pose: &AgentPose,
        rec: &mut StepRecord,
    ) -> Result<Resolved, Abort> {
        let full = Arc::new(obs_view.depth.to_gray8(1, self.cfg.image_max_range));
        let opts = VisionPromptOptions {
            request_point: self.cfg.pixel_selection == PixelStrategy::DirectPoint,
            ..Default::default()
        };
        let payload = build_vision_prompt(self.info.instruction, progress, view, full, &opts);
        let (w, h) = (obs_view.depth.width, obs_view.depth.height);
        let va: Option<VisionAction> =
            self.ask(&payload, rec, |raw| parse_vision_action(raw, w, h).map_err(|e| e.to_string()))?;
        let Some(va) = va else {
            rec.fallbacks.push(Fallback::ForwardProbe);
            return Ok(self.probe_goal(pose, rec));
        };
        rec.vision_action = Some(va.clone());

        let primary = match (self.cfg.pixel_selection, va.point) {
            (PixelStrategy::BottomCenter, _) => PixelSelection::BottomCenter,
            (PixelStrategy::MedianDepth, _) => PixelSelection::MedianDepth,
            (PixelStrategy::DirectPoint, Some(p)) => PixelSelection::DirectPoint(p),
            (PixelStrategy::DirectPoint, None) => {
                rec.notes.push("grounding reply has no point_2d; using bottom-center".into());
                PixelSelection::BottomCenter
            }
        };
        let selected = match select_target_pixel(&va.bbox, &obs_view.depth, primary) {
            Ok(s) => Some(s),
            Err(e) if primary != PixelSelection::MedianDepth => {
                rec.notes.push(format!("pixel selection: {e}"));
                rec.fallbacks.push(Fallback::MedianDepth);
                select_target_pixel(&va.bbox, &obs_view.depth, PixelSelection::MedianDepth).ok()
            }
            Err(e) => {
                rec.notes.push(format!("pixel selection: {e}"));
                None
            }
        };
        let goal = selected.and_then(|(px, d)| {
            let c = unproject_pixel(&self.k, px, d).ok()?;
            let cam_pose = pose.facing(view_heading(pose, view));
            Some(camera_to_world(&c, &cam_pose))
        });
        match goal {
            Some(g) => Ok(self.snap_goal(g, pose, rec)),
            None => {
                rec.fallbacks.push(Fallback::ForwardProbe);
                Ok(self.probe_goal(pose, rec))
            }
        }
    }

    fn planning_grid(&self, pose: &AgentPose) -> crate::grid::PlanningGrid {
        let mut grid = self.map.planning_grid();
        let radius = self.cfg.map.inflation_radius + self.cfg.map.resolution;
        grid.clear_disk(pose.position(), radius, |c| self.map.state(c) == CellState::Occupied);
        grid
    }

    /// Plans to `goal`, moving it to the nearest free cell if needed; falls
    /// back to the forward probe when no path exists.
    fn snap_goal(&self, goal: WorldPoint, pose: &AgentPose, rec: &mut StepRecord) -> Resolved {
        let grid = self.planning_grid(pose);
        let mut target = goal;
        if !grid.is_free_point(goal) {
            match nearest_free_cell(&grid, goal, self.cfg.snap_radius) {
                Ok(c) => {
                    rec.fallbacks.push(Fallback::NearestFreeCell);
                    target = grid.frame.center(c);
                }
                Err(e) => {
                    rec.notes.push(format!("goal snapping: {e}"));
                    rec.fallbacks.push(Fallback::ForwardProbe);
                    return self.probe_goal(pose, rec);
                }
            }
        }
        if self.plan(&grid, target, pose).is_some() {
            Resolved { goal: Some(target) }
        } else {
            rec.notes.push("goal unreachable on the current map".into());
            rec.fallbacks.push(Fallback::ForwardProbe);
            self.probe_goal(pose, rec)
        }
    }

    /// Goal a short distance straight ahead, or a skipped step.
    fn probe_goal(&self, pose: &AgentPose, rec: &mut StepRecord) -> Resolved {
        let (fx, fz) = pose.forward();
        let probe = WorldPoint::new(
            pose.x + self.cfg.forward_probe * fx,
            pose.z + self.cfg.forward_probe * fz,
        );
        let grid = self.planning_grid(pose);
        if grid.is_free_point(probe) && self.plan(&grid, probe, pose).is_some() {
            return Resolved { goal: Some(probe) };
        }
        rec.fallbacks.push(Fallback::Skipped);
        Resolved { goal: None }
    }

    fn plan(&self, grid: &crate::grid::PlanningGrid, goal: WorldPoint, pose: &AgentPose) -> Option<Path> {
        let field = compute_distance_field(grid, goal, self.cfg.snap_radius).ok()?;
        extract_path(&field, pose.position()).ok()
    }

    /// Follows FMM paths to `goal`, replanning every few commands and after
    /// collisions.
    fn navigate(&mut self, goal: WorldPoint, rec: &mut StepRecord) {
        let cap = self.cfg.commands_per_step;
        let mut stalled = 0;
        while rec.commands.len() < cap {
            let pose = self.env.pose();
            let grid = self.planning_grid(&pose);
            let Some(path) = self.plan(&grid, goal, &pose) else {
                rec.notes.push("lost the path while navigating".into());
                break;
            };
            let budget = self.cfg.replan_every.min(cap - rec.commands.len());
            let cmds = path_to_commands(&path, &pose, &self.cfg.control, budget);
            if cmds.is_empty() {
                break;
            }
            for cmd in cmds {
                let before = self.env.pose();
                let res = self.env.execute(cmd);
                rec.commands.push(cmd);
                rec.poses.push(res.pose);
                if res.collided {
                    rec.collisions += 1;
                    stalled += 1;
                    self.mark_bump(&before);
                    break;
                }
                stalled = 0;
            }
            if stalled >= MAX_STALLED_BUMPS {
                rec.notes.push("blocked ahead; ending the step early".into());
                break;
            }
        }
    }

    /// Records an obstacle just ahead after a blocked forward move.
    fn mark_bump(&mut self, pose: &AgentPose) {
        let (fx, fz) = pose.forward();
        let reach = BUMP_REACH + self.cfg.control.forward_step;
        let p = WorldPoint::new(pose.x + reach * fx, pose.z + reach * fz);
        let c = self.map.frame().cell_of(p);
        self.map.set_state(c, CellState::Occupied);
        self.map.inflate();
    }
}
