//! The simulator as an agent environment.

use std::sync::{Arc, Mutex};

use crate::geometry::{AgentPose, CameraIntrinsics};
use crate::pipeline::{EnvError, Environment, Observation, StepResult, ViewObservation};
use crate::planner::{ControlCommand, ControlConfig};

use super::{Episode, RenderConfig, RenderedView, SimError, World};

/// Agent body radius used for collision checks, in meters.
pub const AGENT_RADIUS: f64 = 0.15;

/// Read-only view of a running episode for ground-truth consumers such as
/// the scripted oracle.
#[derive(Debug, Clone)]
pub struct EpisodeHandle {
    pub world: Arc<World>,
    pub episode: Arc<Episode>,
    pub intrinsics: CameraIntrinsics,
    pub render: RenderConfig,
    pose: Arc<Mutex<AgentPose>>,
}

impl EpisodeHandle {
    pub fn pose(&self) -> AgentPose {
        *self.pose.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn render(&self, view: crate::geometry::View) -> Result<RenderedView, SimError> {
        self.world
            .render_view(&self.pose(), view, &self.intrinsics, &self.render)
    }
}

#[derive(Debug)]
pub struct SimEnv {
    handle: EpisodeHandle,
    control: ControlConfig,
    agent_radius: f64,
    collisions: usize,
    wall_violations: usize,
}

impl SimEnv {
    pub fn new(
        world: Arc<World>,
        episode: Arc<Episode>,
        intrinsics: CameraIntrinsics,
        render: RenderConfig,
        control: ControlConfig,
    ) -> Self {
        let pose = Arc::new(Mutex::new(episode.start));
        Self {
            handle: EpisodeHandle {
                world,
                episode,
                intrinsics,
                render,
                pose,
            },
            control,
            agent_radius: AGENT_RADIUS,
            collisions: 0,
            wall_violations: 0,
        }
    }

    pub fn handle(&self) -> EpisodeHandle {
        self.handle.clone()
    }

    pub fn collisions(&self) -> usize {
        self.collisions
    }

    /// Executed moves whose path crossed a wall cell.
    pub fn wall_violations(&self) -> usize {
        self.wall_violations
    }

    fn set_pose(&self, p: AgentPose) {
        *self.handle.pose.lock().unwrap_or_else(|e| e.into_inner()) = p;
    }
}

impl Environment for SimEnv {
    fn intrinsics(&self) -> CameraIntrinsics {
        self.handle.intrinsics
    }

    fn pose(&self) -> AgentPose {
        self.handle.pose()
    }

    fn observe(&mut self) -> Result<Observation, EnvError> {
        let pose = self.pose();
        let views = self
            .handle
            .world
            .render_views(&pose, &self.handle.intrinsics, &self.handle.render)
            .map_err(|e| EnvError::Sensor(e.to_string()))?;
        Ok(Observation {
            pose,
            views: views.map(|r| ViewObservation {
                view: r.view,
                caption: r.caption(),
                depth: r.depth,
            }),
        })
    }

    fn execute(&mut self, cmd: ControlCommand) -> StepResult {
        let pose = self.pose();
        let (next, collided) =
            self.handle
                .world
                .execute(&pose, cmd, &self.control, self.agent_radius);
        if collided {
            self.collisions += 1;
        }
        if self.handle.world.segment_hits_wall(pose.position(), next.position()) {
            self.wall_violations += 1;
        }
        self.set_pose(next);
        StepResult {
            pose: next,
            collided,
        }
    }
}
