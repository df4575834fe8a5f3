//! Depth images and the world-anchored occupancy grid built from them.
//!
//! Each valid depth sample is unprojected, moved into the world frame and
//! bucketed by its height above the floor: samples in the floor band mark
//! their cell free, samples in the obstacle band mark it occupied, anything
//! above the band (ceilings, overhangs) is ignored. Free space is carved once
//! per image column, from the camera to the nearest obstacle hit in that
//! column (or to the farthest floor sample when the column has no hit).

use serde::{Deserialize, Serialize};

use crate::geometry::{
    camera_to_world, view_heading, AgentPose, CameraIntrinsics, CameraPoint, View, WorldPoint,
};
use crate::grid::{walk_ray, GridCell, GridFrame, PlanningGrid};

/// Depth channel of one view, meters per pixel. Zero and non-finite values
/// are holes.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
}

impl DepthImage {
    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self {
            width,
            height,
            values: vec![value; width * height],
        }
    }

    /// Valid depth at `(u, v)`, `None` for holes and out-of-range pixels.
    pub fn get(&self, u: usize, v: usize) -> Option<f64> {
        if u >= self.width || v >= self.height {
            return None;
        }
        let d = self.values[v * self.width + u];
        (d.is_finite() && d > 0.0).then_some(d as f64)
    }

    pub fn set(&mut self, u: usize, v: usize, value: f32) {
        self.values[v * self.width + u] = value;
    }

    pub fn valid_count(&self) -> usize {
        self.values
            .iter()
            .filter(|d| d.is_finite() && **d > 0.0)
            .count()
    }

    /// Grayscale rendering (near = bright, holes = black), downscaled by an
    /// integer factor. Stands in for the RGB channel in prompts.
    pub fn to_gray8(&self, downscale: usize, max_range: f32) -> GrayImage {
        let f = downscale.max(1);
        let (w, h) = (self.width / f, self.height / f);
        let mut pixels = Vec::with_capacity(w * h);
        for v in 0..h {
            for u in 0..w {
                let d = self.values[(v * f) * self.width + u * f];
                let g = if d.is_finite() && d > 0.0 {
                    let t = (d / max_range).clamp(0.0, 1.0);
                    (255.0 - 215.0 * t).round() as u8
                } else {
                    0
                };
                pixels.push(g);
            }
        }
        GrayImage {
            width: w,
            height: h,
            pixels,
        }
    }
}

/// 8-bit single-channel raster.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellState {
    Unknown,
    Free,
    Occupied,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MapConfig {
    /// Meters per cell.
    pub resolution: f64,
    /// Obstacle dilation radius in meters.
    pub inflation_radius: f64,
    /// Camera height above the floor in meters.
    pub camera_height: f64,
    /// Samples below this height are floor.
    pub floor_band_top: f64,
    /// Samples between the floor band and this height are obstacles.
    pub obstacle_band_top: f64,
    /// Consecutive free observations needed to clear an occupied cell.
    pub clear_after: u8,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            resolution: 0.05,
            inflation_radius: 0.18,
            camera_height: 0.88,
            floor_band_top: 0.10,
            obstacle_band_top: 1.5,
            clear_after: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntegrationStats {
    pub skipped: usize,
    pub floor_samples: usize,
    pub obstacle_samples: usize,
    pub ignored_samples: usize,
}

/// Cells added around new content when the grid grows.
const GROWTH_MARGIN: i64 = 40;
/// Hit points sit exactly on cell faces; push them this far into the
/// surface before bucketing.
const HIT_NUDGE: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct OccupancyGrid {
    config: MapConfig,
    frame: GridFrame,
    cells: Vec<CellState>,
    free_streak: Vec<u8>,
    inflated: Vec<bool>,
    inflation_disk: Vec<(i64, i64)>,
}

impl OccupancyGrid {
    /// Empty grid whose global cell `(0, 0)` has its corner at `anchor`.
    pub fn new(config: MapConfig, anchor: WorldPoint) -> Self {
        assert!(config.resolution > 0.0, "resolution must be positive");
        let mut g = Self {
            config,
            frame: GridFrame {
                anchor,
                resolution: config.resolution,
                i0: 0,
                j0: 0,
                width: 0,
                height: 0,
            },
            cells: Vec::new(),
            free_streak: Vec::new(),
            inflated: Vec::new(),
            inflation_disk: Vec::new(),
        };
        g.set_inflation_radius(config.inflation_radius);
        g
    }

    pub fn config(&self) -> &MapConfig {
        &self.config
    }

    pub fn frame(&self) -> &GridFrame {
        &self.frame
    }

    pub fn resolution(&self) -> f64 {
        self.config.resolution
    }

    pub fn set_inflation_radius(&mut self, radius: f64) {
        self.config.inflation_radius = radius.max(0.0);
        let r_cells = self.config.inflation_radius / self.config.resolution;
        let reach = r_cells.floor() as i64;
        self.inflation_disk.clear();
        for dj in -reach..=reach {
            for di in -reach..=reach {
                if ((di * di + dj * dj) as f64) <= r_cells * r_cells + 1e-9 {
                    self.inflation_disk.push((di, dj));
                }
            }
        }
    }

    pub fn state(&self, c: GridCell) -> CellState {
        self.frame
            .index(c)
            .map_or(CellState::Unknown, |k| self.cells[k])
    }

    pub fn state_at(&self, p: WorldPoint) -> CellState {
        self.state(self.frame.cell_of(p))
    }

    pub fn set_state(&mut self, c: GridCell, s: CellState) {
        self.ensure_contains(c, c);
        let k = self.frame.index(c).expect("cell inside after growth");
        self.cells[k] = s;
        self.free_streak[k] = 0;
    }

    pub fn is_inflated(&self, c: GridCell) -> bool {
        self.frame.index(c).is_some_and(|k| self.inflated[k])
    }

    pub fn count(&self, s: CellState) -> usize {
        self.cells.iter().filter(|c| **c == s).count()
    }

    /// Cells currently holding state `s`, in index order.
    pub fn cells_in_state(&self, s: CellState) -> impl Iterator<Item = GridCell> + '_ {
        self.cells
            .iter()
            .enumerate()
            .filter(move |(_, c)| **c == s)
            .map(|(k, _)| self.frame.cell_at(k))
    }

    fn ensure_contains(&mut self, lo: GridCell, hi: GridCell) {
        let f = self.frame;
        if f.width > 0 && f.contains(lo) && f.contains(hi) {
            return;
        }
        let (mut i_min, mut j_min) = (lo.i - GROWTH_MARGIN, lo.j - GROWTH_MARGIN);
        let (mut i_max, mut j_max) = (hi.i + GROWTH_MARGIN, hi.j + GROWTH_MARGIN);
        if f.width > 0 {
            i_min = i_min.min(f.i0);
            j_min = j_min.min(f.j0);
            i_max = i_max.max(f.i0 + f.width as i64 - 1);
            j_max = j_max.max(f.j0 + f.height as i64 - 1);
        }
        let nf = GridFrame {
            i0: i_min,
            j0: j_min,
            width: (i_max - i_min + 1) as usize,
            height: (j_max - j_min + 1) as usize,
            ..f
        };
        let mut cells = vec![CellState::Unknown; nf.len()];
        let mut streak = vec![0u8; nf.len()];
        let mut inflated = vec![false; nf.len()];
        for k in 0..f.len() {
            let nk = nf.index(f.cell_at(k)).expect("old window inside new one");
            cells[nk] = self.cells[k];
            streak[nk] = self.free_streak[k];
            inflated[nk] = self.inflated[k];
        }
        self.frame = nf;
        self.cells = cells;
        self.free_streak = streak;
        self.inflated = inflated;
    }

    /// Fuses one depth view taken at `pose` (the view's heading is derived
    /// from `view`). Invalid samples are skipped, never carved.
    pub fn integrate_depth(
        &mut self,
        depth: &DepthImage,
        k: &CameraIntrinsics,
        pose: &AgentPose,
        view: View,
    ) -> IntegrationStats {
        let cam_pose = pose.facing(view_heading(pose, view));
        let (fwd_x, fwd_z) = cam_pose.forward();
        let (right_x, right_z) = (cam_pose.heading.sin(), -cam_pose.heading.cos());
        let cfg = self.config;
        let mut stats = IntegrationStats::default();

        // Per column: (forward depth of nearest hit, farthest floor depth).
        let mut columns: Vec<(f64, f64)> = vec![(f64::INFINITY, 0.0); depth.width];
        let mut hits: Vec<WorldPoint> = Vec::new();
        let mut floors: Vec<WorldPoint> = Vec::new();

        for v in 0..depth.height {
            let ray_y = (v as f64 - k.cy) / k.fy;
            for u in 0..depth.width {
                let Some(d) = depth.get(u, v) else {
                    stats.skipped += 1;
                    continue;
                };
                let c = CameraPoint {
                    x: d * (u as f64 - k.cx) / k.fx,
                    y: d * ray_y,
                    z: d,
                };
                let height = cfg.camera_height - c.y;
                if height < cfg.floor_band_top {
                    stats.floor_samples += 1;
                    floors.push(camera_to_world(&c, &cam_pose));
                    let col = &mut columns[u];
                    col.1 = col.1.max(d);
                } else if height <= cfg.obstacle_band_top {
                    stats.obstacle_samples += 1;
                    let nudged = CameraPoint {
                        z: c.z + HIT_NUDGE,
                        x: c.x * (c.z + HIT_NUDGE) / c.z,
                        ..c
                    };
                    hits.push(camera_to_world(&nudged, &cam_pose));
                    let col = &mut columns[u];
                    col.0 = col.0.min(d);
                } else {
                    stats.ignored_samples += 1;
                }
            }
        }

        let origin = cam_pose.position();
        // Carve endpoints, and whether the endpoint cell itself is free.
        let mut rays: Vec<((f64, f64), f64, bool)> = Vec::new();
        for (u, &(hit_d, floor_d)) in columns.iter().enumerate() {
            let xr = (u as f64 - k.cx) / k.fx;
            let dir = (fwd_x + xr * right_x, fwd_z + xr * right_z);
            if hit_d.is_finite() {
                rays.push((dir, hit_d, false));
            } else if floor_d > 0.0 {
                rays.push((dir, floor_d, true));
            }
        }
        if hits.is_empty() && floors.is_empty() {
            return stats;
        }

        // Grow once to cover everything this view touches.
        let mut lo = self.frame.cell_of(origin);
        let mut hi = lo;
        let ray_ends = rays
            .iter()
            .map(|(dir, t, _)| WorldPoint::new(origin.x + dir.0 * t, origin.z + dir.1 * t));
        for p in hits.iter().chain(floors.iter()).copied().chain(ray_ends) {
            let c = self.frame.cell_of(p);
            lo = GridCell::new(lo.i.min(c.i), lo.j.min(c.j));
            hi = GridCell::new(hi.i.max(c.i), hi.j.max(c.j));
        }
        self.ensure_contains(lo, hi);

        // 0 = unobserved, 1 = seen free, 2 = hit.
        let mut marks = vec![0u8; self.frame.len()];
        let frame = self.frame;
        for &(dir, t_end, end_free) in &rays {
            let end_cell = frame.cell_of(WorldPoint::new(
                origin.x + dir.0 * t_end,
                origin.z + dir.1 * t_end,
            ));
            walk_ray(frame.anchor, frame.resolution, origin, dir, t_end, |c, _| {
                if c == end_cell && !end_free {
                    return false;
                }
                if let Some(k) = frame.index(c) {
                    marks[k] = marks[k].max(1);
                }
                c != end_cell
            });
        }
        for p in &floors {
            if let Some(k) = frame.index(frame.cell_of(*p)) {
                marks[k] = marks[k].max(1);
            }
        }
        for p in &hits {
            if let Some(k) = frame.index(frame.cell_of(*p)) {
                marks[k] = 2;
            }
        }

        for (k, m) in marks.into_iter().enumerate() {
            match m {
                2 => {
                    self.cells[k] = CellState::Occupied;
                    self.free_streak[k] = 0;
                }
                1 => match self.cells[k] {
                    CellState::Occupied => {
                        self.free_streak[k] = self.free_streak[k].saturating_add(1);
                        if self.free_streak[k] >= cfg.clear_after {
                            self.cells[k] = CellState::Free;
                            self.free_streak[k] = 0;
                        }
                    }
                    _ => self.cells[k] = CellState::Free,
                },
                _ => {}
            }
        }
        stats
    }

    /// Recomputes the dilated obstacle mask. Cell states are untouched.
    pub fn inflate(&mut self) {
        self.inflated.iter_mut().for_each(|x| *x = false);
        let frame = self.frame;
        for k in 0..self.cells.len() {
            if self.cells[k] != CellState::Occupied {
                continue;
            }
            let c = frame.cell_at(k);
            for &(di, dj) in &self.inflation_disk {
                if let Some(n) = frame.index(c.offset(di, dj)) {
                    self.inflated[n] = true;
                }
            }
        }
    }

    /// Free and outside every inflated obstacle.
    pub fn is_traversable(&self, p: WorldPoint) -> bool {
        self.is_cell_traversable(self.frame.cell_of(p))
    }

    pub fn is_cell_traversable(&self, c: GridCell) -> bool {
        self.frame
            .index(c)
            .is_some_and(|k| self.cells[k] == CellState::Free && !self.inflated[k])
    }

    /// Traversability snapshot for the planner.
    pub fn planning_grid(&self) -> PlanningGrid {
        let traversable = self
            .cells
            .iter()
            .zip(&self.inflated)
            .map(|(s, inf)| *s == CellState::Free && !inf)
            .collect();
        PlanningGrid::new(self.frame, traversable)
    }

    /// Binary PGM (P5): 0 unknown, 128 free, 255 occupied; row `j0` first.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.frame.width, self.frame.height).into_bytes();
        out.extend(self.cells.iter().map(|s| match s {
            CellState::Unknown => 0u8,
            CellState::Free => 128,
            CellState::Occupied => 255,
        }));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Analytic rendering of an infinite wall `wall_dist` meters straight
    /// ahead of a camera at `cam_h` over a flat floor.
    fn wall_scene(k: &CameraIntrinsics, cam_h: f64, wall_dist: f64) -> DepthImage {
        let mut img = DepthImage::filled(k.width, k.height, 0.0);
        for v in 0..k.height {
            let ray_y = (v as f64 - k.cy) / k.fy;
            for u in 0..k.width {
                let floor = if ray_y > 0.0 { cam_h / ray_y } else { f64::INFINITY };
                img.set(u, v, floor.min(wall_dist) as f32);
            }
        }
        img
    }

    fn grid() -> OccupancyGrid {
        OccupancyGrid::new(MapConfig::default(), WorldPoint::new(0.0, 0.0))
    }

    #[test]
    fn wall_ahead_is_occupied_and_approach_is_free() {
        let k = CameraIntrinsics::default();
        let img = wall_scene(&k, 0.88, 2.0);
        let mut g = grid();
        let pose = AgentPose::new(0.02, 0.02, 0.0);
        g.integrate_depth(&img, &k, &pose, View::Front);
        // Wall face at x = 2.02: the cell just behind it is occupied.
        assert_eq!(g.state_at(WorldPoint::new(2.04, 0.02)), CellState::Occupied);
        for x in [0.1, 0.5, 1.0, 1.5, 1.9] {
            assert_eq!(g.state_at(WorldPoint::new(x, 0.02)), CellState::Free, "x={x}");
        }
        // Nothing is observed behind the camera.
        assert_eq!(g.state_at(WorldPoint::new(-1.0, 0.02)), CellState::Unknown);
    }

    #[test]
    fn all_invalid_depth_is_a_no_op() {
        let k = CameraIntrinsics::default();
        let img = DepthImage::filled(640, 480, 0.0);
        let mut g = grid();
        let stats = g.integrate_depth(&img, &k, &AgentPose::new(0.0, 0.0, 0.0), View::Front);
        assert_eq!(stats.skipped, 640 * 480);
        assert_eq!(g.frame().len(), 0);
        assert_eq!(g.count(CellState::Free) + g.count(CellState::Occupied), 0);
    }

    #[test]
    fn repeated_observation_is_idempotent() {
        let k = CameraIntrinsics::default();
        let img = wall_scene(&k, 0.88, 2.5);
        let pose = AgentPose::new(0.3, -0.2, 0.7);
        let mut once = grid();
        once.integrate_depth(&img, &k, &pose, View::Left);
        let mut twice = once.clone();
        twice.integrate_depth(&img, &k, &pose, View::Left);
        assert_eq!(once.cells, twice.cells);
        assert_eq!(once.frame, twice.frame);
    }

    #[test]
    fn occupied_needs_three_free_observations_to_clear() {
        let mut g = grid();
        let k = CameraIntrinsics::default();
        let target = GridCell::new(20, 0);
        g.set_state(target, CellState::Occupied);
        // Wall far beyond the target cell: the target lies on carved rays.
        let img = wall_scene(&k, 0.88, 4.0);
        let pose = AgentPose::new(0.025, 0.025, 0.0);
        for expect in [CellState::Occupied, CellState::Occupied, CellState::Free] {
            g.integrate_depth(&img, &k, &pose, View::Front);
            assert_eq!(g.state(target), expect);
        }
    }

    #[test]
    fn inflation_disk_brute_force() {
        let mut g = grid();
        let res = g.resolution();
        let centre = GridCell::new(0, 0);
        for j in -5..=5 {
            for i in -5..=5 {
                g.set_state(GridCell::new(i, j), CellState::Free);
            }
        }
        g.set_state(centre, CellState::Occupied);
        g.set_inflation_radius(2.0 * res);
        g.inflate();
        let mut blocked = 0;
        for j in -5..=5 {
            for i in -5..=5 {
                let c = GridCell::new(i, j);
                let d = ((i * i + j * j) as f64).sqrt() * res;
                let expect_blocked = d <= 2.0 * res + 1e-12;
                assert_eq!(!g.is_cell_traversable(c), expect_blocked, "{c:?}");
                blocked += expect_blocked as usize;
            }
        }
        assert_eq!(blocked, 13);
    }

    #[test]
    fn zero_radius_and_free_grid_leave_traversability_alone() {
        let mut g = grid();
        for i in 0..10 {
            g.set_state(GridCell::new(i, 0), CellState::Free);
        }
        g.set_state(GridCell::new(4, 0), CellState::Occupied);
        let before = g.planning_grid();
        g.set_inflation_radius(0.0);
        g.inflate();
        assert_eq!(g.planning_grid(), before);

        let mut free = grid();
        for i in 0..10 {
            free.set_state(GridCell::new(i, 3), CellState::Free);
        }
        let before = free.planning_grid();
        free.inflate();
        assert_eq!(free.planning_grid(), before);
    }

    #[test]
    fn traversability_queries() {
        let mut g = grid();
        for j in 0..20 {
            for i in 0..20 {
                g.set_state(GridCell::new(i, j), CellState::Free);
            }
        }
        // Wall occupying column i = 10.
        for j in 0..20 {
            g.set_state(GridCell::new(10, j), CellState::Occupied);
        }
        g.inflate();
        assert!(g.is_traversable(WorldPoint::new(0.1, 0.5)));
        assert!(!g.is_traversable(WorldPoint::new(-5.0, 0.5)));
        // Wall face at x = 0.5; this point is 0.05 m away, inside 0.18 m.
        assert!(!g.is_traversable(WorldPoint::new(0.45, 0.5)));
        // Oracle: distance from the point's cell center to the nearest wall cell center.
        let p = WorldPoint::new(0.45, 0.5);
        let c = g.frame().center(g.frame().cell_of(p));
        assert!((0.5 + 0.025 - c.x) <= 0.18);
    }

    #[test]
    fn growth_keeps_world_content_in_place() {
        let mut g = grid();
        let p = WorldPoint::new(0.33, -0.71);
        g.set_state(g.frame().cell_of(p), CellState::Occupied);
        let far = WorldPoint::new(-20.0, 15.0);
        g.set_state(g.frame().cell_of(far), CellState::Free);
        assert_eq!(g.state_at(p), CellState::Occupied);
        assert_eq!(g.state_at(far), CellState::Free);
    }

    #[test]
    fn pgm_header_and_size() {
        let mut g = grid();
        g.set_state(GridCell::new(0, 0), CellState::Occupied);
        let pgm = g.to_pgm();
        let header = format!("P5\n{} {}\n255\n", g.frame().width, g.frame().height);
        assert!(pgm.starts_with(header.as_bytes()));
        assert_eq!(pgm.len(), header.len() + g.frame().len());
        assert!(pgm[header.len()..].contains(&255));
    }
}
