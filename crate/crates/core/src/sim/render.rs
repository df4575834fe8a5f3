//! Column-wise raycast rendering of depth views with landmark annotations.

use serde::{Deserialize, Serialize};

use crate::geometry::{view_heading, AgentPose, BoundingBox, CameraIntrinsics, View, WorldPoint};
use crate::grid::walk_ray;
use crate::mapping::DepthImage;

use super::{Cell, SimError, World};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    /// Depth beyond this many meters reads as invalid.
    pub max_range: f64,
    pub camera_height: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            max_range: 10.0,
            camera_height: 0.88,
        }
    }
}

/// Pixel extent of a landmark as rendered in one view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkAnnotation {
    pub letter: char,
    pub label: String,
    pub bbox: BoundingBox,
    pub pixels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    pub view: View,
    pub depth: DepthImage,
    pub annotations: Vec<LandmarkAnnotation>,
}

impl RenderedView {
    pub fn annotation(&self, letter: char) -> Option<&LandmarkAnnotation> {
        self.annotations.iter().find(|a| a.letter == letter)
    }

    /// Short text description of what is visible.
    pub fn caption(&self) -> String {
        if self.annotations.is_empty() {
            return "nothing notable".to_string();
        }
        self.annotations
            .iter()
            .map(|a| format!("a {}", a.label))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

#[derive(Debug, Clone, Copy)]
enum Surface {
    Wall(f64),
    Landmark(f64, u8),
}

impl World {
    pub fn render_views(
        &self,
        pose: &AgentPose,
        k: &CameraIntrinsics,
        cfg: &RenderConfig,
    ) -> Result<[RenderedView; 4], SimError> {
        let [f, l, r, b] = View::ALL;
        Ok([
            self.render_view(pose, f, k, cfg)?,
            self.render_view(pose, l, k, cfg)?,
            self.render_view(pose, r, k, cfg)?,
            self.render_view(pose, b, k, cfg)?,
        ])
    }

    pub fn render_view(
        &self,
        pose: &AgentPose,
        view: View,
        k: &CameraIntrinsics,
        cfg: &RenderConfig,
    ) -> Result<RenderedView, SimError> {
        let origin = pose.position();
        let (ci, cj) = self.cell_of(origin);
        if self.is_blocked(ci, cj) {
            return Err(SimError::PoseInObstacle {
                x: pose.x,
                z: pose.z,
            });
        }
        let heading = view_heading(pose, view);
        let fwd = (heading.cos(), heading.sin());
        let right = (heading.sin(), -heading.cos());
        let mut depth = DepthImage::filled(k.width, k.height, 0.0);
        let n_lm = self.landmarks.len();
        let mut extents: Vec<Option<(usize, usize, usize, usize, usize)>> = vec![None; n_lm];
        let hc = cfg.camera_height;
        let mut surfaces = Vec::new();

        for u in 0..k.width {
            let xr = (u as f64 - k.cx) / k.fx;
            let dir = (fwd.0 + xr * right.0, fwd.1 + xr * right.1);
            surfaces.clear();
            walk_ray(
                WorldPoint::new(0.0, 0.0),
                self.resolution,
                origin,
                dir,
                cfg.max_range,
                |c, t| match self.cell(c.i, c.j) {
                    Cell::Free => true,
                    Cell::Wall => {
                        surfaces.push(Surface::Wall(t));
                        false
                    }
                    Cell::Landmark(idx) => {
                        // Only the first face of each landmark along the ray.
                        if !surfaces
                            .iter()
                            .any(|s| matches!(s, Surface::Landmark(_, j) if *j == idx))
                        {
                            surfaces.push(Surface::Landmark(t, idx));
                        }
                        true
                    }
                },
            );
            for v in 0..k.height {
                let s = (v as f64 - k.cy) / k.fy;
                let floor_z = if s > 0.0 { hc / s } else { f64::INFINITY };
                let mut value = None;
                for surf in &surfaces {
                    let z = match *surf {
                        Surface::Wall(z) | Surface::Landmark(z, _) => z,
                    };
                    let h = hc - s * z;
                    if h < 0.0 {
                        break;
                    }
                    match *surf {
                        Surface::Wall(z) => {
                            value = Some(z as f32);
                            break;
                        }
                        Surface::Landmark(z, idx) => {
                            let lm = &self.landmarks[idx as usize];
                            if h <= lm.height {
                                let e = extents[idx as usize].get_or_insert((u, v, u, v, 0));
                                e.0 = e.0.min(u);
                                e.1 = e.1.min(v);
                                e.2 = e.2.max(u);
                                e.3 = e.3.max(v);
                                e.4 += 1;
                                value = Some(if h < lm.glass_below { 0.0 } else { z as f32 });
                                break;
                            }
                        }
                    }
                }
                let d = match value {
                    Some(d) => d,
                    None if floor_z <= cfg.max_range => floor_z as f32,
                    None => 0.0,
                };
                depth.set(u, v, d);
            }
        }

        let annotations = extents
            .iter()
            .enumerate()
            .filter_map(|(idx, e)| {
                e.map(|(x1, y1, x2, y2, n)| {
                    let lm = &self.landmarks[idx];
                    LandmarkAnnotation {
                        letter: lm.letter,
                        label: lm.label.clone(),
                        bbox: BoundingBox::new(x1 as i64, y1 as i64, x2 as i64, y2 as i64),
                        pixels: n,
                    }
                })
            })
            .collect();
        Ok(RenderedView {
            view,
            depth,
            annotations,
        })
    }
}
