//! Scripted stand-in for both model stages, answering from ground truth.
//!
//! Planner rule: stop once the geodesic distance to the goal is below the
//! success radius minus a margin. Otherwise take the first instruction
//! landmark not yet passed (a landmark counts as passed when the agent is
//! within 1.5 m of its target point or geodesically closer to the goal
//! than that point), follow the shortest path toward it that keeps 0.45 m
//! from obstacles for 1.5 m, and pick the view whose heading is closest to
//! that bearing among the views where the grounder rule below finds a
//! target.
//!
//! Grounder rule: if the destination landmark is rendered in the chosen
//! view, box its rendered extent. Otherwise box the farthest point of the
//! remaining route that is visible on the floor of that view between
//! 1.3 m and 4 m away and at least 0.35 m from any obstacle, with the box's
//! bottom-center on that point.
//!
//! The adversarial mode answers the first planner call with the view
//! opposite to the correct one and grounds it on the farthest visible floor
//! straight ahead (up to 6 m). Its second planner call asks to backtrack to
//! waypoint 0 when the prompt offers backtracking.

use std::sync::{LazyLock, Mutex};

use regex::Regex;

use crate::geometry::{view_heading, normalize_angle, AgentPose, BoundingBox, View, WorldPoint};
use crate::grid::PlanningGrid;
use crate::planner::{compute_distance_field, extract_path, DistanceField};
use crate::sim::{EpisodeHandle, GeodesicField, RenderedView, World, GEODESIC_SUBDIVISION};

use super::{estimate_tokens, text_tokens, ChatModel, ClientError, ModelReply, PromptPayload, Usage};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMode {
    Faithful,
    Adversarial,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    pub success_radius: f64,
    /// Stop this far inside the success radius.
    pub stop_margin: f64,
    pub look_ahead: f64,
    pub pass_radius: f64,
    pub min_depth: f64,
    pub grounding_range: f64,
    /// Grounded floor points keep at least this distance from obstacles.
    pub min_clearance: f64,
    /// Obstacle clearance of the routes the oracle follows.
    pub route_clearance: f64,
    pub lure_range: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            success_radius: 3.0,
            stop_margin: 0.25,
            look_ahead: 1.5,
            pass_radius: 1.5,
            min_depth: 1.3,
            grounding_range: 4.0,
            min_clearance: 0.35,
            route_clearance: 0.45,
            lure_range: 6.0,
        }
    }
}

#[derive(Debug, Default)]
struct State {
    planner_calls: usize,
    lure: Option<View>,
}

pub struct ScriptedOracle {
    handle: EpisodeHandle,
    mode: OracleMode,
    cfg: OracleConfig,
    /// One field per instruction landmark target; the last is the goal.
    fields: Vec<GeodesicField>,
    /// Same targets on the clearance-eroded grid, used for routing.
    route_fields: Vec<DistanceField>,
    /// Route from each landmark target on to the goal.
    onward: Vec<Vec<WorldPoint>>,
    state: Mutex<State>,
}

impl std::fmt::Debug for ScriptedOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScriptedOracle")
            .field("episode", &self.handle.episode.id)
            .field("mode", &self.mode)
            .finish()
    }
}

static DIRECTION: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"Chosen direction: (front|left|right|back)").unwrap());

impl ScriptedOracle {
    pub fn new(handle: EpisodeHandle, mode: OracleMode, cfg: OracleConfig) -> Self {
        let ep = &handle.episode;
        let fields: Vec<GeodesicField> = ep
            .landmark_targets
            .iter()
            .map(|t| handle.world.geodesic_field(*t))
            .collect();
        let grid = route_grid(&handle.world, &ep.landmark_targets, cfg.route_clearance);
        let route_fields: Vec<DistanceField> = ep
            .landmark_targets
            .iter()
            .map(|t| {
                compute_distance_field(&grid, *t, 1.0)
                    .unwrap_or_else(|_| fields.last().expect("episode has a goal").field.clone())
            })
            .collect();
        let goal_field = route_fields.last().expect("episode has a goal");
        let onward = ep
            .landmark_targets
            .iter()
            .map(|t| extract_path(goal_field, *t).map(|p| p.points).unwrap_or_default())
            .collect();
        Self {
            handle,
            mode,
            cfg,
            fields,
            route_fields,
            onward,
            state: Mutex::new(State::default()),
        }
    }

    fn goal_field(&self) -> &GeodesicField {
        self.fields.last().expect("episode has a goal")
    }

    fn label(&self, k: usize) -> &str {
        let letter = self.handle.episode.landmarks[k];
        self.handle
            .world
            .landmark(letter)
            .map_or("landmark", |l| l.label.as_str())
    }

    /// Index of the first instruction landmark not yet passed.
    fn next_target(&self, pos: WorldPoint) -> usize {
        let last = self.fields.len() - 1;
        let to_goal = self.goal_field().distance(pos);
        for k in 0..last {
            let t = self.handle.episode.landmark_targets[k];
            let passed = pos.distance(&t) < self.cfg.pass_radius
                || to_goal < self.goal_field().distance(t);
            if !passed {
                return k;
            }
        }
        last
    }

    /// Route from `pos` through landmark `k` to the goal, entering the
    /// clearance-respecting routes at the nearest reachable cell.
    fn route(&self, pos: WorldPoint, k: usize) -> Vec<WorldPoint> {
        let field = &self.route_fields[k];
        let frame = &field.frame;
        let c0 = frame.cell_of(pos);
        let reach = (1.0 / frame.resolution).ceil() as i64;
        let mut entry = None;
        for dj in -reach..=reach {
            for di in -reach..=reach {
                let c = c0.offset(di, dj);
                if !field.is_reachable(c) {
                    continue;
                }
                let d = frame.center(c).distance(&pos);
                if d <= 1.0 && entry.is_none_or(|(bd, _)| d < bd) {
                    entry = Some((d, c));
                }
            }
        }
        let mut pts = vec![pos];
        match entry.and_then(|(_, c)| extract_path(field, frame.center(c)).ok()) {
            Some(p) => pts.extend(p.points),
            None => pts.extend(self.fields[k].path_from(pos).map(|p| p.points).unwrap_or_default()),
        }
        if k + 1 < self.fields.len() {
            pts.extend(self.onward[k].iter().skip(1));
        }
        pts
    }

    /// Views ordered by how closely their heading matches the route bearing
    /// `look_ahead` meters ahead.
    fn ranked_views(&self, pose: &AgentPose, route: &[WorldPoint]) -> [View; 4] {
        let pos = pose.position();
        let mut arc = 0.0;
        let mut aim = route.last().copied();
        for w in route.windows(2) {
            arc += w[0].distance(&w[1]);
            if arc >= self.cfg.look_ahead {
                aim = Some(w[1]);
                break;
            }
        }
        let mut views = View::ALL;
        let Some(aim) = aim.filter(|a| a.distance(&pos) > 1e-9) else {
            return views;
        };
        let bearing = (aim.z - pos.z).atan2(aim.x - pos.x);
        let err = |v: &View| normalize_angle(bearing - view_heading(pose, *v)).abs();
        views.sort_by(|a, b| err(a).total_cmp(&err(b)));
        views
    }

    /// The best-aligned view that has something to ground in it.
    fn choose_view(&self, pose: &AgentPose, route: &[WorldPoint]) -> View {
        let views = self.ranked_views(pose, route);
        views
            .iter()
            .copied()
            .find(|v| {
                self.handle
                    .render(*v)
                    .is_ok_and(|r| self.ground(pose, *v, &r, route).is_some())
            })
            .unwrap_or(views[0])
    }

    /// Destination landmark box if rendered, else the farthest visible route
    /// point.
    fn ground(
        &self,
        pose: &AgentPose,
        view: View,
        rendered: &RenderedView,
        route: &[WorldPoint],
    ) -> Option<(BoundingBox, String)> {
        let dest = *self.handle.episode.landmarks.last().expect("episode has landmarks");
        if let Some(a) = rendered.annotation(dest).filter(|a| a.pixels >= 20) {
            return Some((a.bbox, a.label.clone()));
        }
        self.farthest_visible(pose, view, rendered, route)
            .map(|b| (b, "floor along the way".to_string()))
    }

    fn planner_reply(&self, prompt: &str) -> String {
        let pose = self.handle.pose();
        let pos = pose.position();
        let mut st = self.state.lock().unwrap_or_else(|e| e.into_inner());
        let call = st.planner_calls;
        st.planner_calls += 1;

        let to_goal = self.goal_field().distance(pos);
        let last = self.fields.len() - 1;
        if to_goal < self.cfg.success_radius - self.cfg.stop_margin {
            return format!(
                "Progress: reached the {}, the instruction is complete.\nAction: stop",
                self.label(last)
            );
        }
        let k = self.next_target(pos);
        let progress = if k == 0 {
            format!("just started; looking for the {}", self.label(0))
        } else {
            format!("passed the {}; heading for the {}", self.label(k - 1), self.label(k))
        };
        let route = self.route(pos, k);
        let view = self.choose_view(&pose, &route);

        if self.mode == OracleMode::Adversarial {
            if call == 0 {
                let wrong = opposite(view);
                st.lure = Some(wrong);
                return format!("Progress: {progress}\nAction: navigate to {wrong}");
            }
            if call == 1 && prompt.contains("backtrack to <waypoint id>") {
                return "Progress: this direction looks wrong; returning to the start.\nAction: backtrack to 0".to_string();
            }
        }
        format!("Progress: {progress}\nAction: navigate to {view}")
    }

    fn grounder_reply(&self, prompt: &str) -> String {
        let pose = self.handle.pose();
        let view = DIRECTION
            .captures(prompt)
            .and_then(|c| c.get(1))
            .map_or(View::Front, |m| match m.as_str() {
                "left" => View::Left,
                "right" => View::Right,
                "back" => View::Back,
                _ => View::Front,
            });
        let want_point = prompt.contains("point_2d");
        let Ok(rendered) = self.handle.render(view) else {
            return grounding_json(BoundingBox::new(310, 460, 330, 479), "floor", want_point);
        };

        let lure = {
            let mut st = self.state.lock().unwrap_or_else(|e| e.into_inner());
            st.lure.take_if(|v| *v == view).is_some()
        };
        if lure {
            let (bbox, _) = self.floor_ahead(&rendered, self.cfg.lure_range);
            return grounding_json(bbox, "open floor", want_point);
        }

        let pos = pose.position();
        let k = self.next_target(pos);
        let route = self.route(pos, k);
        if let Some((bbox, label)) = self.ground(&pose, view, &rendered, &route) {
            return grounding_json(bbox, &label, want_point);
        }
        let (bbox, _) = self.floor_ahead(&rendered, 2.0);
        grounding_json(bbox, "open floor", want_point)
    }

    /// Box whose bottom-center is the farthest visible route point on the
    /// floor within grounding range.
    fn farthest_visible(
        &self,
        pose: &AgentPose,
        view: View,
        rendered: &RenderedView,
        route: &[WorldPoint],
    ) -> Option<BoundingBox> {
        let k = &self.handle.intrinsics;
        let hc = self.handle.render.camera_height;
        let heading = view_heading(pose, view);
        let (fx, fz) = (heading.cos(), heading.sin());
        let (rx, rz) = (heading.sin(), -heading.cos());
        let pos = pose.position();
        let mut best = None;
        for p in densify(route, 0.1) {
            if p.distance(&pos) > self.cfg.grounding_range {
                continue;
            }
            let (dx, dz) = (p.x - pos.x, p.z - pos.z);
            let zc = dx * fx + dz * fz;
            let xc = dx * rx + dz * rz;
            if zc < self.cfg.min_depth
                || self.handle.world.clearance(p, self.cfg.min_clearance) < self.cfg.min_clearance
            {
                continue;
            }
            let u = (k.cx + k.fx * xc / zc).round();
            let v = (k.cy + k.fy * hc / zc).round();
            if u < 8.0 || u > (k.width - 9) as f64 || v < 16.0 || v > (k.height - 1) as f64 {
                continue;
            }
            let (ui, vi) = (u as usize, v as usize);
            // The floor point must be what the camera sees at that pixel.
            let expected = hc * k.fy / (vi as f64 - k.cy);
            match rendered.depth.get(ui, vi) {
                Some(d) if (d - expected).abs() <= 0.02 * expected => {
                    best = Some(BoundingBox::new(ui as i64 - 8, vi as i64 - 16, ui as i64 + 8, vi as i64));
                }
                _ => {}
            }
        }
        best
    }

    /// Box on the farthest floor pixel straight ahead within `range`.
    fn floor_ahead(&self, rendered: &RenderedView, range: f64) -> (BoundingBox, f64) {
        let k = &self.handle.intrinsics;
        let hc = self.handle.render.camera_height;
        let u = k.cx.round() as usize;
        let mut pick = (k.height - 1, 0.0);
        for v in (k.cy.floor() as usize + 1..k.height).rev() {
            let expected = hc * k.fy / (v as f64 - k.cy);
            if expected > range {
                break;
            }
            match rendered.depth.get(u, v) {
                Some(d) if (d - expected).abs() <= 0.02 * expected => pick = (v, expected),
                _ => break,
            }
        }
        let (v, d) = pick;
        (
            BoundingBox::new(u as i64 - 8, v as i64 - 16, u as i64 + 8, v as i64),
            d,
        )
    }

    /// Reply for a prompt given as plain text, as either stage.
    pub fn reply_text(&self, prompt: &str) -> String {
        if prompt.contains("bbox_2d") {
            self.grounder_reply(prompt)
        } else {
            self.planner_reply(prompt)
        }
    }
}

impl ChatModel for ScriptedOracle {
    fn complete(&self, payload: &PromptPayload) -> Result<ModelReply, ClientError> {
        let text = self.reply_text(&payload.text());
        Ok(ModelReply {
            usage: Usage {
                input_tokens: estimate_tokens(payload),
                output_tokens: text_tokens(&text),
            },
            text,
            latency_ms: 0,
        })
    }

    fn name(&self) -> &str {
        match self.mode {
            OracleMode::Faithful => "scripted-oracle",
            OracleMode::Adversarial => "adversarial-oracle",
        }
    }
}

/// Fine grid whose free cells keep `clearance` from every obstacle, with
/// the targets' surroundings left open so each stays reachable.
fn route_grid(world: &World, targets: &[WorldPoint], clearance: f64) -> PlanningGrid {
    let raw = world.planning_grid(GEODESIC_SUBDIVISION);
    let mut grid = raw.clone();
    for idx in 0..raw.frame.len() {
        let c = raw.frame.cell_at(idx);
        if raw.is_free(c) && world.clearance(raw.frame.center(c), clearance) < clearance {
            grid.set(c, false);
        }
    }
    for t in targets {
        grid.clear_disk(*t, clearance + raw.frame.resolution, |c| !raw.is_free(c));
    }
    grid
}

fn opposite(v: View) -> View {
    match v {
        View::Front => View::Back,
        View::Back => View::Front,
        View::Left => View::Right,
        View::Right => View::Left,
    }
}

fn grounding_json(b: BoundingBox, description: &str, with_point: bool) -> String {
    let mut obj = serde_json::json!({
        "bbox_2d": [b.x1, b.y1, b.x2, b.y2],
        "description": description,
    });
    if with_point {
        let c = b.bottom_center();
        obj["point_2d"] = serde_json::json!([c.u, c.v]);
    }
    format!("```json\n{obj}\n```")
}

/// Polyline resampled every `step` meters (endpoints kept).
fn densify(points: &[WorldPoint], step: f64) -> Vec<WorldPoint> {
    let mut out = Vec::new();
    if let Some(first) = points.first() {
        out.push(*first);
    }
    for w in points.windows(2) {
        let len = w[0].distance(&w[1]);
        let n = (len / step).ceil().max(1.0) as usize;
        for s in 1..=n {
            let t = s as f64 / n as f64;
            out.push(WorldPoint::new(
                w[0].x + t * (w[1].x - w[0].x),
                w[0].z + t * (w[1].z - w[0].z),
            ));
        }
    }
    out
}
