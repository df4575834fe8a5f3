//! World-anchored grid indexing shared by the occupancy map, the planner and
//! the simulator.
//!
//! Cell `(i, j)` covers `[anchor.x + i*res, anchor.x + (i+1)*res)` by
//! `[anchor.z + j*res, anchor.z + (j+1)*res)`. Indices are global: a grid that
//! grows keeps its anchor and only moves its window, so a cell index always
//! names the same patch of the world.

use serde::{Deserialize, Serialize};

use crate::geometry::WorldPoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridCell {
    pub i: i64,
    pub j: i64,
}

impl GridCell {
    pub fn new(i: i64, j: i64) -> Self {
        Self { i, j }
    }

    pub fn offset(&self, di: i64, dj: i64) -> Self {
        Self::new(self.i + di, self.j + dj)
    }
}

/// A rectangular window of global cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridFrame {
    pub anchor: WorldPoint,
    pub resolution: f64,
    pub i0: i64,
    pub j0: i64,
    pub width: usize,
    pub height: usize,
}

impl GridFrame {
    pub fn cell_of(&self, p: WorldPoint) -> GridCell {
        GridCell::new(
            ((p.x - self.anchor.x) / self.resolution).floor() as i64,
            ((p.z - self.anchor.z) / self.resolution).floor() as i64,
        )
    }

    pub fn center(&self, c: GridCell) -> WorldPoint {
        WorldPoint::new(
            self.anchor.x + (c.i as f64 + 0.5) * self.resolution,
            self.anchor.z + (c.j as f64 + 0.5) * self.resolution,
        )
    }

    pub fn contains(&self, c: GridCell) -> bool {
        c.i >= self.i0
            && c.j >= self.j0
            && c.i < self.i0 + self.width as i64
            && c.j < self.j0 + self.height as i64
    }

    pub fn index(&self, c: GridCell) -> Option<usize> {
        if self.contains(c) {
            Some((c.j - self.j0) as usize * self.width + (c.i - self.i0) as usize)
        } else {
            None
        }
    }

    pub fn cell_at(&self, idx: usize) -> GridCell {
        GridCell::new(
            self.i0 + (idx % self.width) as i64,
            self.j0 + (idx / self.width) as i64,
        )
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Boolean traversability over a grid window. Everything outside the window
/// is blocked.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanningGrid {
    pub frame: GridFrame,
    pub traversable: Vec<bool>,
}

impl PlanningGrid {
    pub fn new(frame: GridFrame, traversable: Vec<bool>) -> Self {
        assert_eq!(frame.len(), traversable.len(), "mask size mismatch");
        Self { frame, traversable }
    }

    /// Builds a grid anchored at the world origin from rows of booleans
    /// (`true` = free); row index is `j`, column index is `i`.
    pub fn from_rows(resolution: f64, rows: &[Vec<bool>]) -> Self {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        let traversable = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(
            GridFrame {
                anchor: WorldPoint::new(0.0, 0.0),
                resolution,
                i0: 0,
                j0: 0,
                width,
                height,
            },
            traversable,
        )
    }

    pub fn resolution(&self) -> f64 {
        self.frame.resolution
    }

    pub fn is_free(&self, c: GridCell) -> bool {
        self.frame.index(c).is_some_and(|k| self.traversable[k])
    }

    pub fn is_free_point(&self, p: WorldPoint) -> bool {
        self.is_free(self.frame.cell_of(p))
    }

    pub fn set(&mut self, c: GridCell, free: bool) {
        if let Some(k) = self.frame.index(c) {
            self.traversable[k] = free;
        }
    }

    /// Marks every in-frame cell whose center is within `radius` of `p` as
    /// free, except those for which `keep_blocked` returns true.
    pub fn clear_disk(&mut self, p: WorldPoint, radius: f64, keep_blocked: impl Fn(GridCell) -> bool) {
        let r = (radius / self.frame.resolution).ceil() as i64 + 1;
        let c0 = self.frame.cell_of(p);
        for dj in -r..=r {
            for di in -r..=r {
                let c = c0.offset(di, dj);
                if self.frame.center(c).distance(&p) <= radius && !keep_blocked(c) {
                    self.set(c, true);
                }
            }
        }
        // The cell under the agent is always standable.
        if !keep_blocked(c0) {
            self.set(c0, true);
        }
    }
}

/// Visits the cells crossed by the ray `origin + t * dir` for `t` in
/// `[0, t_max]`, in order, passing each cell with the `t` at which the ray
/// enters it (0 for the starting cell). Stops early when `visit` returns
/// false. `dir` need not be unit length.
pub fn walk_ray(
    anchor: WorldPoint,
    resolution: f64,
    origin: WorldPoint,
    dir: (f64, f64),
    t_max: f64,
    mut visit: impl FnMut(GridCell, f64) -> bool,
) {
    let gx = (origin.x - anchor.x) / resolution;
    let gz = (origin.z - anchor.z) / resolution;
    let mut cell = GridCell::new(gx.floor() as i64, gz.floor() as i64);
    let (dx, dz) = (dir.0 / resolution, dir.1 / resolution);
    let step_i: i64 = if dx > 0.0 { 1 } else { -1 };
    let step_j: i64 = if dz > 0.0 { 1 } else { -1 };
    let next_boundary = |g: f64, c: i64, d: f64| -> f64 {
        if d > 0.0 {
            ((c + 1) as f64 - g) / d
        } else if d < 0.0 {
            (c as f64 - g) / d
        } else {
            f64::INFINITY
        }
    };
    let mut t_i = next_boundary(gx, cell.i, dx);
    let mut t_j = next_boundary(gz, cell.j, dz);
    let dt_i = if dx != 0.0 { 1.0 / dx.abs() } else { f64::INFINITY };
    let dt_j = if dz != 0.0 { 1.0 / dz.abs() } else { f64::INFINITY };
    let mut t = 0.0;
    while t <= t_max {
        if !visit(cell, t) {
            return;
        }
        if t_i < t_j {
            t = t_i;
            t_i += dt_i;
            cell.i += step_i;
        } else {
            t = t_j;
            t_j += dt_j;
            cell.j += step_j;
        }
        if !t.is_finite() {
            return;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_round_trip() {
        let f = GridFrame {
            anchor: WorldPoint::new(-1.0, 2.0),
            resolution: 0.05,
            i0: -10,
            j0: 5,
            width: 30,
            height: 20,
        };
        for idx in 0..f.len() {
            let c = f.cell_at(idx);
            assert_eq!(f.index(c), Some(idx));
            assert_eq!(f.cell_of(f.center(c)), c);
        }
        assert_eq!(f.index(GridCell::new(-11, 5)), None);
        assert_eq!(f.index(GridCell::new(20, 5)), None);
    }

    #[test]
    fn ray_walk_visits_contiguous_cells() {
        let mut cells = Vec::new();
        walk_ray(
            WorldPoint::new(0.0, 0.0),
            1.0,
            WorldPoint::new(0.5, 0.5),
            (1.0, 0.5),
            3.0,
            |c, t| {
                cells.push((c, t));
                true
            },
        );
        let expected = [(0, 0), (1, 0), (1, 1), (2, 1), (3, 1), (3, 2)];
        let got: Vec<_> = cells.iter().map(|(c, _)| (c.i, c.j)).collect();
        assert_eq!(got, expected);
        assert_eq!(cells[0].1, 0.0);
        assert!((cells[1].1 - 0.5).abs() < 1e-12);
        assert!((cells[2].1 - 1.0).abs() < 1e-12);
        for w in cells.windows(2) {
            let (a, b) = (w[0].0, w[1].0);
            assert_eq!((a.i - b.i).abs() + (a.j - b.j).abs(), 1);
        }
    }
}
