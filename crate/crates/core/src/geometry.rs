//! Pinhole camera model, pixel unprojection and the planar camera-to-world
//! transform, plus target-pixel selection from grounding boxes.
//!
//! Frames:
//! - camera: `z` forward, `x` right, `y` down (meters).
//! - world: planar `(x, z)` with `y` up; headings are counter-clockwise from
//!   world `+x`, normalized to `[-pi, pi)`.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mapping::DepthImage;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid depth sample {0} (depth hole)")]
    InvalidDepth(f64),
    #[error("no valid depth sample inside the target box")]
    NoValidDepth,
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("depth image is {got_w}x{got_h}, camera expects {want_w}x{want_h}")]
    DimensionMismatch {
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
}

/// Wraps an angle into `[-pi, pi)`.
pub fn normalize_angle(theta: f64) -> f64 {
    let wrapped = (theta + PI).rem_euclid(TAU) - PI;
    // rem_euclid may round up to exactly TAU for tiny negative inputs.
    if wrapped >= PI {
        wrapped - TAU
    } else {
        wrapped
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "cx={} outside (0, {})",
                self.cx, self.width
            )));
        }
        if !(self.cy > 0.0 && self.cy < self.height as f64) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "cy={} outside (0, {})",
                self.cy, self.height
            )));
        }
        Ok(())
    }

    /// Horizontal field of view in radians.
    pub fn hfov(&self) -> f64 {
        (self.cx / self.fx).atan() + ((self.width as f64 - self.cx) / self.fx).atan()
    }

    /// Projects a camera-frame point to continuous pixel coordinates.
    pub fn project(&self, c: &CameraPoint) -> (f64, f64) {
        (
            self.fx * c.x / c.z + self.cx,
            self.fy * c.y / c.z + self.cy,
        )
    }
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self {
            fx: 320.0,
            fy: 320.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelTarget {
    pub u: u32,
    pub v: u32,
}

impl PixelTarget {
    pub fn new(u: u32, v: u32) -> Self {
        Self { u, v }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentPose {
    pub x: f64,
    pub z: f64,
    pub heading: f64,
}

impl AgentPose {
    pub fn new(x: f64, z: f64, heading: f64) -> Self {
        Self {
            x,
            z,
            heading: normalize_angle(heading),
        }
    }

    pub fn position(&self) -> WorldPoint {
        WorldPoint::new(self.x, self.z)
    }

    /// Same position, different heading.
    pub fn facing(&self, heading: f64) -> Self {
        Self::new(self.x, self.z, heading)
    }

    /// Unit vector along the heading.
    pub fn forward(&self) -> (f64, f64) {
        (self.heading.cos(), self.heading.sin())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldPoint {
    pub x: f64,
    pub z: f64,
}

impl WorldPoint {
    pub fn new(x: f64, z: f64) -> Self {
        Self { x, z }
    }

    pub fn distance(&self, other: &WorldPoint) -> f64 {
        (self.x - other.x).hypot(self.z - other.z)
    }
}

/// Pixel-space box with inclusive corners.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x1: i64,
    pub y1: i64,
    pub x2: i64,
    pub y2: i64,
}

impl BoundingBox {
    /// Builds a box, swapping corners so that `x1 <= x2` and `y1 <= y2`.
    pub fn new(x1: i64, y1: i64, x2: i64, y2: i64) -> Self {
        Self {
            x1: x1.min(x2),
            y1: y1.min(y2),
            x2: x1.max(x2),
            y2: y1.max(y2),
        }
    }

    pub fn clamped(&self, width: usize, height: usize) -> Self {
        let max_x = width.saturating_sub(1) as i64;
        let max_y = height.saturating_sub(1) as i64;
        Self::new(
            self.x1.clamp(0, max_x),
            self.y1.clamp(0, max_y),
            self.x2.clamp(0, max_x),
            self.y2.clamp(0, max_y),
        )
    }

    pub fn has_area(&self) -> bool {
        self.x2 > self.x1 && self.y2 > self.y1
    }

    pub fn contains(&self, p: PixelTarget) -> bool {
        let (u, v) = (p.u as i64, p.v as i64);
        u >= self.x1 && u <= self.x2 && v >= self.y1 && v <= self.y2
    }

    pub fn bottom_center(&self) -> PixelTarget {
        PixelTarget::new(((self.x1 + self.x2).div_euclid(2)) as u32, self.y2 as u32)
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.x1, self.y1, self.x2, self.y2)
    }
}

/// The four canonical views captured at every planner step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Front,
    Left,
    Right,
    Back,
}

impl View {
    /// Capture order used everywhere views are listed.
    pub const ALL: [View; 4] = [View::Front, View::Left, View::Right, View::Back];

    pub fn offset(self) -> f64 {
        match self {
            View::Front => 0.0,
            View::Left => FRAC_PI_2,
            View::Right => -FRAC_PI_2,
            View::Back => PI,
        }
    }

    pub fn index(self) -> usize {
        match self {
            View::Front => 0,
            View::Left => 1,
            View::Right => 2,
            View::Back => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            View::Front => "front",
            View::Left => "left",
            View::Right => "right",
            View::Back => "back",
        }
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How the goal pixel and its depth are chosen from a grounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PixelSelection {
    /// Bottom-center pixel, depth sampled there.
    BottomCenter,
    /// Bottom-center pixel, depth is the median of all finite depths in the box.
    MedianDepth,
    /// Pixel supplied verbatim by the grounding model.
    DirectPoint(PixelTarget),
}

/// `d * K^-1 * [u, v, 1]^T`.
pub fn unproject_pixel(
    k: &CameraIntrinsics,
    p: PixelTarget,
    depth: f64,
) -> Result<CameraPoint, GeometryError> {
    if !(depth.is_finite() && depth > 0.0) {
        return Err(GeometryError::InvalidDepth(depth));
    }
    Ok(CameraPoint {
        x: depth * (p.u as f64 - k.cx) / k.fx,
        y: depth * (p.v as f64 - k.cy) / k.fy,
        z: depth,
    })
}

/// Planar transform of a camera point into the world frame. The camera's
/// forward axis maps to the pose heading and its right axis to the heading
/// minus a quarter turn; the height coordinate is dropped.
pub fn camera_to_world(c: &CameraPoint, pose: &AgentPose) -> WorldPoint {
    let (s, co) = pose.heading.sin_cos();
    let (a, b) = (c.z, -c.x);
    WorldPoint {
        x: pose.x + co * a - s * b,
        z: pose.z + s * a + co * b,
    }
}

pub fn view_heading(pose: &AgentPose, view: View) -> f64 {
    normalize_angle(pose.heading + view.offset())
}

/// Picks the goal pixel inside `b` and the depth to unproject it with.
pub fn select_target_pixel(
    b: &BoundingBox,
    depth: &DepthImage,
    strategy: PixelSelection,
) -> Result<(PixelTarget, f64), GeometryError> {
    let b = b.clamped(depth.width, depth.height);
    match strategy {
        PixelSelection::BottomCenter => {
            let p = b.bottom_center();
            match depth.get(p.u as usize, p.v as usize) {
                Some(d) => Ok((p, d)),
                None => Err(GeometryError::NoValidDepth),
            }
        }
        PixelSelection::MedianDepth => {
            let mut samples: Vec<f64> = Vec::new();
            for v in b.y1..=b.y2 {
                for u in b.x1..=b.x2 {
                    if let Some(d) = depth.get(u as usize, v as usize) {
                        samples.push(d);
                    }
                }
            }
            if samples.is_empty() {
                return Err(GeometryError::NoValidDepth);
            }
            samples.sort_by(|a, b| a.total_cmp(b));
            let n = samples.len();
            let median = if n % 2 == 1 {
                samples[n / 2]
            } else {
                0.5 * (samples[n / 2 - 1] + samples[n / 2])
            };
            Ok((b.bottom_center(), median))
        }
        PixelSelection::DirectPoint(p) => {
            let p = PixelTarget::new(
                p.u.min(depth.width.saturating_sub(1) as u32),
                p.v.min(depth.height.saturating_sub(1) as u32),
            );
            match depth.get(p.u as usize, p.v as usize) {
                Some(d) => Ok((p, d)),
                None => Err(GeometryError::NoValidDepth),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::default()
    }

    /// Explicit 3x3 inverse of K, multiplied out element by element.
    fn inverse_matrix_oracle(k: &CameraIntrinsics, u: f64, v: f64, d: f64) -> [f64; 3] {
        let kinv = [
            [1.0 / k.fx, 0.0, -k.cx / k.fx],
            [0.0, 1.0 / k.fy, -k.cy / k.fy],
            [0.0, 0.0, 1.0],
        ];
        let pix = [u, v, 1.0];
        let mut out = [0.0; 3];
        for r in 0..3 {
            out[r] = d * (0..3).map(|c| kinv[r][c] * pix[c]).sum::<f64>();
        }
        out
    }

    #[test]
    fn unproject_principal_point() {
        let c = unproject_pixel(&k(), PixelTarget::new(320, 240), 2.0).unwrap();
        assert_eq!((c.x, c.y, c.z), (0.0, 0.0, 2.0));
    }

    #[test]
    fn unproject_off_center_matches_matrix_oracle() {
        let expected = inverse_matrix_oracle(&k(), 480.0, 360.0, 2.0);
        assert_eq!(expected, [1.0, 0.75, 2.0]);
        let c = unproject_pixel(&k(), PixelTarget::new(480, 360), 2.0).unwrap();
        assert!((c.x - 1.0).abs() < 1e-12);
        assert!((c.y - 0.75).abs() < 1e-12);
        assert_eq!(c.z, 2.0);
    }

    #[test]
    fn unproject_rejects_holes() {
        for d in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(matches!(
                unproject_pixel(&k(), PixelTarget::new(320, 240), d),
                Err(GeometryError::InvalidDepth(_))
            ));
        }
    }

    #[test]
    fn camera_to_world_examples() {
        let c = CameraPoint {
            x: 1.0,
            y: 0.3,
            z: 2.0,
        };
        let w = camera_to_world(&c, &AgentPose::new(0.0, 0.0, 0.0));
        assert_eq!((w.x, w.z), (2.0, -1.0));

        // [cos -sin; sin cos] at pi/2 applied to [2, -1] is [1, 2].
        let w = camera_to_world(&c, &AgentPose::new(0.0, 1.0, FRAC_PI_2));
        assert!((w.x - 1.0).abs() < 1e-12, "{w:?}");
        assert!((w.z - 3.0).abs() < 1e-12, "{w:?}");
    }

    #[test]
    fn forward_axis_lands_along_heading() {
        for i in 0..16 {
            let pose = AgentPose::new(0.5, -2.0, -3.0 + i as f64 * 0.4);
            let w = camera_to_world(
                &CameraPoint {
                    x: 0.0,
                    y: 0.0,
                    z: 3.0,
                },
                &pose,
            );
            let (fx, fz) = pose.forward();
            assert!((w.x - (0.5 + 3.0 * fx)).abs() < 1e-12);
            assert!((w.z - (-2.0 + 3.0 * fz)).abs() < 1e-12);
        }
    }

    #[test]
    fn view_headings() {
        let p0 = AgentPose::new(0.0, 0.0, 0.0);
        assert_eq!(view_heading(&p0, View::Front), 0.0);
        assert_eq!(view_heading(&p0, View::Back), -PI);
        let p1 = AgentPose::new(0.0, 0.0, FRAC_PI_2);
        assert_eq!(view_heading(&p1, View::Right), 0.0);
        assert!((view_heading(&p1, View::Left) - -PI).abs() < 1e-12);
    }

    #[test]
    fn normalize_angle_range() {
        assert_eq!(normalize_angle(PI), -PI);
        assert_eq!(normalize_angle(-PI), -PI);
        assert!((normalize_angle(3.0 * PI + 0.1) - (-PI + 0.1)).abs() < 1e-12);
        for i in -100..100 {
            let a = normalize_angle(i as f64 * 0.37);
            assert!((-PI..PI).contains(&a));
        }
        assert!(normalize_angle(-1e-18) < PI);
    }

    #[test]
    fn bottom_center_selection() {
        let depth = DepthImage::filled(640, 480, 1.5);
        let b = BoundingBox::new(100, 150, 300, 420);
        let (p, d) = select_target_pixel(&b, &depth, PixelSelection::BottomCenter).unwrap();
        assert_eq!(p, PixelTarget::new(200, 420));
        assert_eq!(d, 1.5);
    }

    #[test]
    fn out_of_frame_box_is_clamped() {
        let depth = DepthImage::filled(640, 480, 1.5);
        let b = BoundingBox::new(620, 400, 700, 500);
        assert_eq!(b.clamped(640, 480), BoundingBox::new(620, 400, 639, 479));
        let (p, _) = select_target_pixel(&b, &depth, PixelSelection::BottomCenter).unwrap();
        assert_eq!(p, PixelTarget::new(629, 479));
    }

    #[test]
    fn median_depth_ignores_holes() {
        let mut depth = DepthImage::filled(4, 4, 0.0);
        depth.set(0, 0, 1.0);
        depth.set(1, 0, 2.0);
        depth.set(0, 1, f32::NAN);
        depth.set(1, 1, 3.0);
        let b = BoundingBox::new(0, 0, 1, 1);
        let (p, d) = select_target_pixel(&b, &depth, PixelSelection::MedianDepth).unwrap();
        assert_eq!(d, 2.0);
        assert_eq!(p, PixelTarget::new(0, 1));
        assert_eq!(
            select_target_pixel(&b, &depth, PixelSelection::BottomCenter),
            Err(GeometryError::NoValidDepth)
        );
    }

    #[test]
    fn all_holes_is_an_error() {
        let depth = DepthImage::filled(8, 8, 0.0);
        let b = BoundingBox::new(1, 1, 6, 6);
        assert_eq!(
            select_target_pixel(&b, &depth, PixelSelection::MedianDepth),
            Err(GeometryError::NoValidDepth)
        );
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 2.0, 2.0, 4, 4).is_ok());
        assert!((k().hfov() - FRAC_PI_2).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn projection_round_trip(u in 0u32..640, v in 0u32..480, d in 0.05f64..20.0) {
                let k = CameraIntrinsics::default();
                let c = unproject_pixel(&k, PixelTarget::new(u, v), d).unwrap();
                let (pu, pv) = k.project(&c);
                prop_assert!((pu - u as f64).abs() < 0.5);
                prop_assert!((pv - v as f64).abs() < 0.5);
                prop_assert_eq!(c.z, d);
            }

            #[test]
            fn camera_to_world_is_isometric(
                a in prop::array::uniform3(-5.0f64..5.0),
                b in prop::array::uniform3(-5.0f64..5.0),
                x in -10.0f64..10.0, z in -10.0f64..10.0, th in -4.0f64..4.0,
            ) {
                let pose = AgentPose::new(x, z, th);
                let ca = CameraPoint { x: a[0], y: a[1], z: a[2] };
                let cb = CameraPoint { x: b[0], y: b[1], z: b[2] };
                let planar = (a[0] - b[0]).hypot(a[2] - b[2]);
                let wa = camera_to_world(&ca, &pose);
                let wb = camera_to_world(&cb, &pose);
                prop_assert!((wa.distance(&wb) - planar).abs() < 1e-9);
            }

            #[test]
            fn full_turn_does_not_move_points(
                cx in -5.0f64..5.0, cz in 0.1f64..10.0, th in -3.0f64..3.0,
            ) {
                let c = CameraPoint { x: cx, y: 0.0, z: cz };
                let p1 = AgentPose { x: 1.0, z: 2.0, heading: th };
                let p2 = AgentPose { x: 1.0, z: 2.0, heading: th + TAU };
                let w1 = camera_to_world(&c, &p1);
                let w2 = camera_to_world(&c, &p2);
                prop_assert!(w1.distance(&w2) < 1e-9);
            }

            #[test]
            fn bottom_center_inside_clamped_box(
                x1 in -100i64..800, y1 in -100i64..600, x2 in -100i64..800, y2 in -100i64..600,
            ) {
                let depth = DepthImage::filled(640, 480, 2.0);
                let b = BoundingBox::new(x1, y1, x2, y2);
                let (p, _) = select_target_pixel(&b, &depth, PixelSelection::BottomCenter).unwrap();
                prop_assert!(b.clamped(640, 480).contains(p));
            }
        }
    }
}
