//! Deterministic gridworld: wall map, labeled landmarks, synthetic four-view
//! depth rendering, motion execution, ground-truth geodesics and episode
//! generation.
//!
//! # World text format
//!
//! The map is one line per row `j` (top line is `j = 0`), one character per
//! column `i`: `#` wall, `.` free floor, `A`-`Z` a landmark footprint cell.
//! Cell `(i, j)` covers `x` in `[i r, (i+1) r)` and `z` in `[j r, (j+1) r)`
//! for resolution `r`. Landmarks stand on the floor and block motion.
//!
//! The sidecar label table is tab-separated:
//!
//! ```text
//! @resolution	0.25
//! A	red sofa	1.0	0.0
//! ```
//!
//! with columns letter, label, height in meters, and the height below which
//! the landmark's surface returns no depth (a transparent lower part).

mod env;
mod episodes;
mod render;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{AgentPose, WorldPoint};
use crate::grid::{GridFrame, PlanningGrid};
use crate::planner::{compute_distance_field_seeded, extract_path, DistanceField, Path, PlanError};

pub use env::{EpisodeHandle, SimEnv, AGENT_RADIUS};
pub use episodes::{
    generate_episodes, Difficulty, Episode, EpisodeSet, WorldDoc, EPISODE_SET_VERSION,
};
pub use render::{LandmarkAnnotation, RenderConfig, RenderedView};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("map line {line}: {message}")]
    Map { line: usize, message: String },
    #[error("label table line {line}: {message}")]
    Labels { line: usize, message: String },
    #[error("pose ({x:.3}, {z:.3}) is inside an obstacle")]
    PoseInObstacle { x: f64, z: f64 },
    #[error("unknown world {0}")]
    UnknownWorld(String),
    #[error("invalid episode set: {0}")]
    EpisodeSet(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub letter: char,
    pub label: String,
    pub height: f64,
    /// Surface below this height returns no depth.
    pub glass_below: f64,
    pub cells: Vec<(i64, i64)>,
    /// Centroid of the footprint.
    pub position: WorldPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    Free,
    Wall,
    Landmark(u8),
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    cells: Vec<Cell>,
    pub landmarks: Vec<Landmark>,
}

/// Extra label-table data for a landmark letter.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSpec {
    pub label: String,
    pub height: f64,
    pub glass_below: f64,
}

impl World {
    /// Builds a world from a character grid and per-letter specs.
    pub fn from_chars(
        resolution: f64,
        rows: &[Vec<char>],
        specs: &BTreeMap<char, LandmarkSpec>,
    ) -> Result<Self, SimError> {
        let height = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        let mut cells = Vec::with_capacity(width * height);
        let mut footprints: BTreeMap<char, Vec<(i64, i64)>> = BTreeMap::new();
        for (j, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(SimError::Map {
                    line: j + 1,
                    message: format!("expected {width} columns, found {}", row.len()),
                });
            }
            for (i, &ch) in row.iter().enumerate() {
                cells.push(match ch {
                    '#' => Cell::Wall,
                    '.' => Cell::Free,
                    'A'..='Z' => {
                        footprints.entry(ch).or_default().push((i as i64, j as i64));
                        Cell::Free
                    }
                    other => {
                        return Err(SimError::Map {
                            line: j + 1,
                            message: format!("unexpected character {other:?}"),
                        })
                    }
                });
            }
        }
        let mut landmarks = Vec::new();
        for (letter, fp) in footprints {
            let spec = specs.get(&letter).ok_or_else(|| SimError::Labels {
                line: 0,
                message: format!("no label for landmark {letter}"),
            })?;
            let n = fp.len() as f64;
            let (sx, sz) = fp.iter().fold((0.0, 0.0), |(sx, sz), &(i, j)| {
                (sx + (i as f64 + 0.5) * resolution, sz + (j as f64 + 0.5) * resolution)
            });
            let idx = landmarks.len() as u8;
            for &(i, j) in &fp {
                cells[j as usize * width + i as usize] = Cell::Landmark(idx);
            }
            landmarks.push(Landmark {
                letter,
                label: spec.label.clone(),
                height: spec.height,
                glass_below: spec.glass_below,
                cells: fp,
                position: WorldPoint::new(sx / n, sz / n),
            });
        }
        Ok(Self {
            resolution,
            width,
            height,
            cells,
            landmarks,
        })
    }

    /// Parses the map text and the sidecar label table.
    pub fn parse(map: &str, labels: &str) -> Result<Self, SimError> {
        let mut resolution = None;
        let mut specs = BTreeMap::new();
        for (k, line) in labels.lines().enumerate() {
            let line_no = k + 1;
            let err = |message: String| SimError::Labels {
                line: line_no,
                message,
            };
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with("//") {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols[0] == "@resolution" {
                let r: f64 = cols
                    .get(1)
                    .and_then(|s| s.trim().parse().ok())
                    .filter(|r: &f64| *r > 0.0 && r.is_finite())
                    .ok_or_else(|| err("resolution must be a positive number".into()))?;
                resolution = Some(r);
                continue;
            }
            if cols.len() != 4 {
                return Err(err(format!("expected 4 tab-separated columns, found {}", cols.len())));
            }
            let mut chars = cols[0].chars();
            let letter = match (chars.next(), chars.next()) {
                (Some(c @ 'A'..='Z'), None) => c,
                _ => return Err(err(format!("bad landmark letter {:?}", cols[0]))),
            };
            let num = |s: &str, what: &str| -> Result<f64, SimError> {
                s.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite() && *v >= 0.0)
                    .ok_or_else(|| err(format!("bad {what} {s:?}")))
            };
            specs.insert(
                letter,
                LandmarkSpec {
                    label: cols[1].trim().to_string(),
                    height: num(cols[2], "height")?,
                    glass_below: num(cols[3], "glass height")?,
                },
            );
        }
        let resolution = resolution.ok_or(SimError::Labels {
            line: 0,
            message: "missing @resolution line".into(),
        })?;
        let rows: Vec<Vec<char>> = map
            .lines()
            .map(|l| l.trim_end_matches('\r'))
            .filter(|l| !l.is_empty())
            .map(|l| l.chars().collect())
            .collect();
        Self::from_chars(resolution, &rows, &specs)
    }

    pub fn map_text(&self) -> String {
        let mut s = String::with_capacity((self.width + 1) * self.height);
        for j in 0..self.height {
            for i in 0..self.width {
                s.push(match self.cells[j * self.width + i] {
                    Cell::Free => '.',
                    Cell::Wall => '#',
                    Cell::Landmark(k) => self.landmarks[k as usize].letter,
                });
            }
            s.push('\n');
        }
        s
    }

    pub fn label_table(&self) -> String {
        let mut s = format!("@resolution\t{}\n", self.resolution);
        for l in &self.landmarks {
            let _ = writeln!(s, "{}\t{}\t{}\t{}", l.letter, l.label, l.height, l.glass_below);
        }
        s
    }

    /// Out-of-bounds cells read as walls.
    pub fn cell(&self, i: i64, j: i64) -> Cell {
        if i < 0 || j < 0 || i >= self.width as i64 || j >= self.height as i64 {
            return Cell::Wall;
        }
        self.cells[j as usize * self.width + i as usize]
    }

    pub fn is_wall(&self, i: i64, j: i64) -> bool {
        self.cell(i, j) == Cell::Wall
    }

    /// Wall or landmark.
    pub fn is_blocked(&self, i: i64, j: i64) -> bool {
        self.cell(i, j) != Cell::Free
    }

    pub fn cell_of(&self, p: WorldPoint) -> (i64, i64) {
        (
            (p.x / self.resolution).floor() as i64,
            (p.z / self.resolution).floor() as i64,
        )
    }

    pub fn landmark(&self, letter: char) -> Option<&Landmark> {
        self.landmarks.iter().find(|l| l.letter == letter)
    }

    /// Distance from `p` to the nearest blocked cell, searched out to `reach`.
    pub fn clearance(&self, p: WorldPoint, reach: f64) -> f64 {
        let r = self.resolution;
        let (ci, cj) = self.cell_of(p);
        let k = (reach / r).ceil() as i64 + 1;
        let mut best = reach;
        for j in cj - k..=cj + k {
            for i in ci - k..=ci + k {
                if self.is_blocked(i, j) {
                    best = best.min(point_rect_distance(p, self.cell_rect(i, j)));
                }
            }
        }
        best
    }

    fn cell_rect(&self, i: i64, j: i64) -> Rect {
        let r = self.resolution;
        Rect {
            x0: i as f64 * r,
            z0: j as f64 * r,
            x1: (i + 1) as f64 * r,
            z1: (j + 1) as f64 * r,
        }
    }

    /// True if a disk of `radius` swept from `a` to `b` touches no blocked
    /// cell.
    pub fn sweep_clear(&self, a: WorldPoint, b: WorldPoint, radius: f64) -> bool {
        let r = self.resolution;
        let i0 = ((a.x.min(b.x) - radius) / r).floor() as i64;
        let i1 = ((a.x.max(b.x) + radius) / r).floor() as i64;
        let j0 = ((a.z.min(b.z) - radius) / r).floor() as i64;
        let j1 = ((a.z.max(b.z) + radius) / r).floor() as i64;
        for j in j0..=j1 {
            for i in i0..=i1 {
                if self.is_blocked(i, j) && segment_rect_distance(a, b, self.cell_rect(i, j)) < radius {
                    return false;
                }
            }
        }
        true
    }

    /// True if the segment from `a` to `b` enters a wall cell.
    pub fn segment_hits_wall(&self, a: WorldPoint, b: WorldPoint) -> bool {
        let r = self.resolution;
        let i0 = (a.x.min(b.x) / r).floor() as i64;
        let i1 = (a.x.max(b.x) / r).floor() as i64;
        let j0 = (a.z.min(b.z) / r).floor() as i64;
        let j1 = (a.z.max(b.z) / r).floor() as i64;
        for j in j0..=j1 {
            for i in i0..=i1 {
                if self.is_wall(i, j) && segment_rect_distance(a, b, self.cell_rect(i, j)) == 0.0 {
                    return true;
                }
            }
        }
        false
    }

    /// Applies one command. A blocked forward move leaves the pose unchanged
    /// and reports a collision.
    pub fn execute(
        &self,
        pose: &AgentPose,
        cmd: crate::planner::ControlCommand,
        control: &crate::planner::ControlConfig,
        agent_radius: f64,
    ) -> (AgentPose, bool) {
        let next = control.apply(pose, cmd);
        if cmd == crate::planner::ControlCommand::MoveForward
            && !self.sweep_clear(pose.position(), next.position(), agent_radius)
        {
            return (*pose, true);
        }
        (next, false)
    }

    /// Ground-truth traversability at `1/subdivision` of the world
    /// resolution.
    pub fn planning_grid(&self, subdivision: usize) -> PlanningGrid {
        let s = subdivision.max(1);
        let frame = GridFrame {
            anchor: WorldPoint::new(0.0, 0.0),
            resolution: self.resolution / s as f64,
            i0: 0,
            j0: 0,
            width: self.width * s,
            height: self.height * s,
        };
        let mut traversable = vec![false; frame.len()];
        for (k, t) in traversable.iter_mut().enumerate() {
            let c = frame.cell_at(k);
            *t = !self.is_blocked(c.i / s as i64, c.j / s as i64);
        }
        PlanningGrid::new(frame, traversable)
    }

    /// Geodesic field toward `goal` on the true obstacle layout.
    pub fn geodesic_field(&self, goal: WorldPoint) -> GeodesicField {
        let grid = self.planning_grid(GEODESIC_SUBDIVISION);
        // Seed the cells around the goal with exact distances so the seed
        // offset does not bias the field.
        let cell = grid.frame.cell_of(goal);
        let reach = 1.5 * grid.frame.resolution;
        let mut seeds = Vec::new();
        if grid.is_free(cell) {
            for dj in -2..=2 {
                for di in -2..=2 {
                    let c = cell.offset(di, dj);
                    let d = goal.distance(&grid.frame.center(c));
                    if grid.is_free(c) && d <= reach {
                        seeds.push((c, d));
                    }
                }
            }
        }
        GeodesicField {
            field: compute_distance_field_seeded(&grid, &seeds),
            goal,
        }
    }
}

/// Ground-truth geodesics are solved on cells this many times finer than
/// the world grid.
pub const GEODESIC_SUBDIVISION: usize = 5;

/// Shortest obstacle-respecting distance between two free points, or
/// infinity when disconnected.
pub fn geodesic_distance(world: &World, a: WorldPoint, b: WorldPoint) -> f64 {
    world.geodesic_field(b).distance(a)
}

#[derive(Debug, Clone)]
pub struct GeodesicField {
    pub field: DistanceField,
    pub goal: WorldPoint,
}

impl GeodesicField {
    pub fn distance(&self, p: WorldPoint) -> f64 {
        if p.distance(&self.goal) < 1e-12 {
            return 0.0;
        }
        if self.in_sight(p) {
            return p.distance(&self.goal);
        }
        self.field.distance_from(p)
    }

    /// True if the straight segment to the goal stays on reachable cells,
    /// in which case the geodesic is the Euclidean distance.
    fn in_sight(&self, p: WorldPoint) -> bool {
        let step = self.field.frame.resolution / 8.0;
        let n = (p.distance(&self.goal) / step).ceil() as usize;
        (0..=n).all(|k| {
            let t = k as f64 / n as f64;
            let q = WorldPoint::new(p.x + t * (self.goal.x - p.x), p.z + t * (self.goal.z - p.z));
            self.field.is_reachable(self.field.frame.cell_of(q))
        })
    }

    pub fn path_from(&self, p: WorldPoint) -> Result<Path, PlanError> {
        let mut path = extract_path(&self.field, p)?;
        if path.goal() != Some(self.goal) {
            path.points.push(self.goal);
            path = Path::from_points(path.points);
        }
        Ok(path)
    }
}

#[derive(Debug, Clone, Copy)]
struct Rect {
    x0: f64,
    z0: f64,
    x1: f64,
    z1: f64,
}

fn point_rect_distance(p: WorldPoint, r: Rect) -> f64 {
    let dx = (r.x0 - p.x).max(0.0).max(p.x - r.x1);
    let dz = (r.z0 - p.z).max(0.0).max(p.z - r.z1);
    dx.hypot(dz)
}

fn point_segment_distance(p: WorldPoint, a: WorldPoint, b: WorldPoint) -> f64 {
    let (vx, vz) = (b.x - a.x, b.z - a.z);
    let len2 = vx * vx + vz * vz;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.x - a.x) * vx + (p.z - a.z) * vz) / len2).clamp(0.0, 1.0)
    };
    WorldPoint::new(a.x + t * vx, a.z + t * vz).distance(&p)
}

/// Liang-Barsky clip: does the closed segment meet the closed rectangle?
fn segment_meets_rect(a: WorldPoint, b: WorldPoint, r: Rect) -> bool {
    let (dx, dz) = (b.x - a.x, b.z - a.z);
    let mut t0: f64 = 0.0;
    let mut t1: f64 = 1.0;
    for (p, q) in [
        (-dx, a.x - r.x0),
        (dx, r.x1 - a.x),
        (-dz, a.z - r.z0),
        (dz, r.z1 - a.z),
    ] {
        if p == 0.0 {
            if q < 0.0 {
                return false;
            }
        } else {
            let t = q / p;
            if p < 0.0 {
                t0 = t0.max(t);
            } else {
                t1 = t1.min(t);
            }
            if t0 > t1 {
                return false;
            }
        }
    }
    true
}

fn segment_rect_distance(a: WorldPoint, b: WorldPoint, r: Rect) -> f64 {
    if segment_meets_rect(a, b, r) {
        return 0.0;
    }
    let corners = [
        WorldPoint::new(r.x0, r.z0),
        WorldPoint::new(r.x1, r.z0),
        WorldPoint::new(r.x0, r.z1),
        WorldPoint::new(r.x1, r.z1),
    ];
    let mut d = point_rect_distance(a, r).min(point_rect_distance(b, r));
    for c in corners {
        d = d.min(point_segment_distance(c, a, b));
    }
    d
}
