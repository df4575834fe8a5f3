//! Fast-marching distance fields, steepest-descent path extraction and the
//! greedy forward/turn tracker.
//!
//! The marcher is first order with an 8-neighbor stencil: every update takes
//! the cheapest of the single-neighbor moves, the two-axis quadratic update
//! and the axis/diagonal simplex update. The diagonal terms keep it below an
//! 8-connected Dijkstra on the same grid; the simplex form keeps it above the
//! straight-line distance.
//!
//! Moves between diagonal neighbors are allowed when at least one of the two
//! shared axis neighbors is traversable (no squeezing through a corner gap).

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

use ordered_float::OrderedFloat;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{normalize_angle, AgentPose, WorldPoint};
use crate::grid::{GridCell, GridFrame, PlanningGrid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("goal ({x:.2}, {z:.2}) has no traversable cell within {radius:.2} m")]
    GoalUnreachable { x: f64, z: f64, radius: f64 },
    #[error("start ({x:.2}, {z:.2}) is not connected to the goal")]
    NoPath { x: f64, z: f64 },
}

pub const UNREACHABLE: f64 = f64::INFINITY;

const AXES: [(i64, i64); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
const DIAGONALS: [(i64, i64); 4] = [(1, 1), (1, -1), (-1, 1), (-1, -1)];

/// Geodesic distance (meters) to the goal set for every cell of a grid
/// window; [`UNREACHABLE`] where no traversable path exists.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    pub frame: GridFrame,
    pub values: Vec<f64>,
}

impl DistanceField {
    pub fn value(&self, c: GridCell) -> f64 {
        self.frame.index(c).map_or(UNREACHABLE, |k| self.values[k])
    }

    pub fn value_at(&self, p: WorldPoint) -> f64 {
        self.value(self.frame.cell_of(p))
    }

    pub fn is_reachable(&self, c: GridCell) -> bool {
        self.value(c).is_finite()
    }

    /// Distance from an arbitrary point: the best neighboring cell center
    /// plus the straight hop to it.
    pub fn distance_from(&self, p: WorldPoint) -> f64 {
        let c0 = self.frame.cell_of(p);
        let mut best = UNREACHABLE;
        for dj in -1..=1 {
            for di in -1..=1 {
                let c = c0.offset(di, dj);
                let v = self.value(c);
                if v.is_finite() {
                    best = best.min(v + self.frame.center(c).distance(&p));
                }
            }
        }
        best
    }

    /// Largest gap between a reachable cell's value and the update its
    /// upwind neighbors produce. Seeds (cells with no upwind neighbor) are
    /// skipped. First-order marching makes this zero up to rounding.
    pub fn eikonal_residual(&self, grid: &PlanningGrid) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 0..self.values.len() {
            let t = self.values[k];
            if !t.is_finite() {
                continue;
            }
            let c = self.frame.cell_at(k);
            let upwind = |n: GridCell| {
                let v = self.value(n);
                (v < t).then_some(v)
            };
            let recomputed = local_update(grid, c, upwind);
            if recomputed.is_finite() {
                worst = worst.max((recomputed - t).abs());
            }
        }
        worst
    }

    /// Binary PGM, reachable distances scaled to 0..=254, unreachable 255.
    pub fn to_pgm(&self) -> Vec<u8> {
        let max = self
            .values
            .iter()
            .copied()
            .filter(|v| v.is_finite())
            .fold(0.0f64, f64::max);
        let mut out = format!("P5\n{} {}\n255\n", self.frame.width, self.frame.height).into_bytes();
        out.extend(self.values.iter().map(|v| {
            if !v.is_finite() {
                255
            } else if max > 0.0 {
                (v / max * 254.0).round() as u8
            } else {
                0
            }
        }));
        out
    }
}

fn diagonal_allowed(grid: &PlanningGrid, c: GridCell, d: (i64, i64)) -> bool {
    grid.is_free(c.offset(d.0, 0)) || grid.is_free(c.offset(0, d.1))
}

/// Upwind update for `c` from whatever neighbor values `known` reports.
fn local_update(
    grid: &PlanningGrid,
    c: GridCell,
    known: impl Fn(GridCell) -> Option<f64>,
) -> f64 {
    let h = grid.resolution();
    let mut best = UNREACHABLE;
    let axis_val = |d: (i64, i64)| {
        let n = c.offset(d.0, d.1);
        if grid.is_free(n) {
            known(n)
        } else {
            None
        }
    };

    for d in AXES {
        if let Some(t) = axis_val(d) {
            best = best.min(t + h);
        }
    }
    // Two-axis quadratic update. The front it models crosses the quadrant's
    // corner cell, so that cell must be free or the update cuts the corner.
    for dx in [(1, 0), (-1, 0)] {
        for dz in [(0, 1), (0, -1)] {
            if !grid.is_free(c.offset(dx.0, dz.1)) {
                continue;
            }
            if let (Some(a), Some(b)) = (axis_val(dx), axis_val(dz)) {
                let delta = a - b;
                if delta.abs() < h {
                    best = best.min(0.5 * (a + b + (2.0 * h * h - delta * delta).sqrt()));
                }
            }
        }
    }
    for d in DIAGONALS {
        let dn = c.offset(d.0, d.1);
        if !grid.is_free(dn) || !diagonal_allowed(grid, c, d) {
            continue;
        }
        let Some(td) = known(dn) else { continue };
        best = best.min(td + SQRT_2 * h);
        // Simplex update on the triangle (c, axis neighbor, diagonal neighbor):
        // minimize Ta + t (Td - Ta) + h sqrt(1 + t^2) over t in [0, 1].
        for a in [(d.0, 0), (0, d.1)] {
            let Some(ta) = axis_val(a) else { continue };
            let s = (ta - td) / h;
            if s > 0.0 && s < FRAC_1_SQRT_2 {
                let t = s / (1.0 - s * s).sqrt();
                best = best.min(ta + t * (td - ta) + h * (1.0 + t * t).sqrt());
            }
        }
    }
    best
}

/// Marches outward from the seed cells (each with its initial distance).
/// Seeds outside the traversable set are ignored.
pub fn compute_distance_field_seeded(grid: &PlanningGrid, seeds: &[(GridCell, f64)]) -> DistanceField {
    let frame = grid.frame;
    let n = frame.len();
    let mut values = vec![UNREACHABLE; n];
    let mut known = vec![false; n];
    let mut heap: BinaryHeap<(Reverse<OrderedFloat<f64>>, usize)> = BinaryHeap::new();

    for &(c, t) in seeds {
        if !grid.is_free(c) {
            continue;
        }
        let k = frame.index(c).expect("free cells are in frame");
        if t < values[k] {
            values[k] = t;
            heap.push((Reverse(OrderedFloat(t)), k));
        }
    }

    while let Some((Reverse(OrderedFloat(t)), k)) = heap.pop() {
        if known[k] || t > values[k] {
            continue;
        }
        known[k] = true;
        let c = frame.cell_at(k);
        for (di, dj) in AXES.iter().chain(DIAGONALS.iter()) {
            let nc = c.offset(*di, *dj);
            let Some(nk) = frame.index(nc) else { continue };
            if known[nk] || !grid.traversable[nk] {
                continue;
            }
            let cand = local_update(grid, nc, |m| {
                frame
                    .index(m)
                    .and_then(|mk| known[mk].then_some(values[mk]))
            });
            if cand < values[nk] {
                values[nk] = cand;
                heap.push((Reverse(OrderedFloat(cand)), nk));
            }
        }
    }
    DistanceField { frame, values }
}

/// Distance field to `goal`, snapping the goal to the nearest traversable
/// cell within `snap_radius` when it lands on a blocked or unknown cell.
pub fn compute_distance_field(
    grid: &PlanningGrid,
    goal: WorldPoint,
    snap_radius: f64,
) -> Result<DistanceField, PlanError> {
    let cell = nearest_free_cell(grid, goal, snap_radius)?;
    Ok(compute_distance_field_seeded(grid, &[(cell, 0.0)]))
}

/// Nearest traversable cell (by distance from `p` to the cell center) within
/// `max_radius`; ties go to the smaller `i`, then the smaller `j`.
pub fn nearest_free_cell(
    grid: &PlanningGrid,
    p: WorldPoint,
    max_radius: f64,
) -> Result<GridCell, PlanError> {
    let frame = &grid.frame;
    let c0 = frame.cell_of(p);
    if grid.is_free(c0) {
        return Ok(c0);
    }
    let res = frame.resolution;
    let rings = (max_radius / res).ceil() as i64 + 1;
    let mut best: Option<(f64, GridCell)> = None;
    for r in 1..=rings {
        // Every cell on Chebyshev ring r is at least (r - 0.5) cells from p.
        if let Some((d, _)) = best {
            if (r as f64 - 0.5) * res > d {
                break;
            }
        }
        for dj in -r..=r {
            for di in -r..=r {
                if di.abs() != r && dj.abs() != r {
                    continue;
                }
                let c = c0.offset(di, dj);
                if !grid.is_free(c) {
                    continue;
                }
                let d = frame.center(c).distance(&p);
                if d > max_radius {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((bd, bc)) => d < bd || (d == bd && (c.i, c.j) < (bc.i, bc.j)),
                };
                if better {
                    best = Some((d, c));
                }
            }
        }
    }
    best.map(|(_, c)| c).ok_or(PlanError::GoalUnreachable {
        x: p.x,
        z: p.z,
        radius: max_radius,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub points: Vec<WorldPoint>,
    pub total_length: f64,
}

impl Path {
    pub fn from_points(points: Vec<WorldPoint>) -> Self {
        let total_length = points.windows(2).map(|w| w[0].distance(&w[1])).sum();
        Self {
            points,
            total_length,
        }
    }

    pub fn goal(&self) -> Option<WorldPoint> {
        self.points.last().copied()
    }
}

/// Steepest descent over the 8-neighborhood from `start` to a local minimum
/// of the field (a goal cell). Values strictly decrease along the path.
pub fn extract_path(field: &DistanceField, start: WorldPoint) -> Result<Path, PlanError> {
    let frame = &field.frame;
    let mut c = frame.cell_of(start);
    let mut v = field.value(c);
    if !v.is_finite() {
        return Err(PlanError::NoPath {
            x: start.x,
            z: start.z,
        });
    }
    let mut points = vec![frame.center(c)];
    for _ in 0..frame.len() {
        let mut next: Option<(f64, GridCell)> = None;
        for (di, dj) in AXES.iter().chain(DIAGONALS.iter()) {
            let n = c.offset(*di, *dj);
            let nv = field.value(n);
            if !nv.is_finite() || nv >= v {
                continue;
            }
            if *di != 0
                && *dj != 0
                && !(field.is_reachable(c.offset(*di, 0)) || field.is_reachable(c.offset(0, *dj)))
            {
                continue;
            }
            if next.is_none_or(|(bv, _)| nv < bv) {
                next = Some((nv, n));
            }
        }
        match next {
            Some((nv, n)) => {
                c = n;
                v = nv;
                points.push(frame.center(c));
            }
            None => break,
        }
    }
    Ok(Path::from_points(points))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControlCommand {
    MoveForward,
    TurnLeft,
    TurnRight,
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlConfig {
    /// Meters per forward step.
    pub forward_step: f64,
    /// Degrees per turn.
    pub turn_degrees: f64,
    /// Tracking target: first path point at least this far ahead (meters).
    pub lookahead: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            forward_step: 0.25,
            turn_degrees: 15.0,
            lookahead: 0.25,
        }
    }
}

impl ControlConfig {
    pub fn turn_radians(&self) -> f64 {
        self.turn_degrees.to_radians()
    }

    /// Kinematic effect of a command, ignoring collisions.
    pub fn apply(&self, pose: &AgentPose, cmd: ControlCommand) -> AgentPose {
        match cmd {
            ControlCommand::MoveForward => {
                let (fx, fz) = pose.forward();
                AgentPose::new(
                    pose.x + self.forward_step * fx,
                    pose.z + self.forward_step * fz,
                    pose.heading,
                )
            }
            ControlCommand::TurnLeft => pose.facing(pose.heading + self.turn_radians()),
            ControlCommand::TurnRight => pose.facing(pose.heading - self.turn_radians()),
            ControlCommand::Stop => *pose,
        }
    }
}

/// Greedy tracker: turn in fixed increments until the lookahead point is
/// within half a turn of the heading, then step forward; repeat from the
/// predicted pose. Emits nothing once the path end is within half a step
/// (or a further step would not bring the agent closer).
pub fn path_to_commands(
    path: &Path,
    pose: &AgentPose,
    cfg: &ControlConfig,
    max_commands: usize,
) -> Vec<ControlCommand> {
    let Some(goal) = path.goal() else {
        return Vec::new();
    };
    let half_turn = cfg.turn_radians() / 2.0;
    let mut pose = *pose;
    let mut cmds = Vec::new();
    let mut progress = 0usize;
    while cmds.len() < max_commands {
        let pos = pose.position();
        let remaining = pos.distance(&goal);
        if remaining < cfg.forward_step / 2.0 {
            break;
        }
        // Advance the progress index to the closest upcoming path point.
        let window_end = (progress + 64).min(path.points.len());
        if let Some((k, _)) = path.points[progress..window_end]
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.distance(&pos).total_cmp(&b.1.distance(&pos)))
        {
            progress += k;
        }
        let target = path.points[progress..]
            .iter()
            .find(|p| p.distance(&pos) >= cfg.lookahead)
            .copied()
            .unwrap_or(goal);
        let bearing = (target.z - pos.z).atan2(target.x - pos.x);
        let err = normalize_angle(bearing - pose.heading);
        let cmd = if err.abs() < half_turn {
            let next = cfg.apply(&pose, ControlCommand::MoveForward);
            if remaining < cfg.forward_step && next.position().distance(&goal) >= remaining {
                break;
            }
            ControlCommand::MoveForward
        } else if err > 0.0 || err <= -PI + 1e-9 {
            ControlCommand::TurnLeft
        } else {
            ControlCommand::TurnRight
        };
        pose = cfg.apply(&pose, cmd);
        cmds.push(cmd);
    }
    cmds
}
