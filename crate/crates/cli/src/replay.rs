//! Top-down replay image of one trajectory: walls, the driven path, history
//! waypoints in blue, the agent in red with a heading arrow, and a green
//! cross at every navigation goal.

use hiernav::action::LanguageAction;
use hiernav::geometry::{AgentPose, WorldPoint};
use hiernav::pipeline::TrajectoryLog;
use hiernav::sim::{Cell, World};
use image::{Rgb, RgbImage};

pub const PIXELS_PER_CELL: u32 = 32;

const FREE: Rgb<u8> = Rgb([250, 250, 250]);
const WALL: Rgb<u8> = Rgb([45, 45, 45]);
const LANDMARK: Rgb<u8> = Rgb([205, 175, 125]);
const PATH: Rgb<u8> = Rgb([120, 120, 120]);
pub const WAYPOINT: Rgb<u8> = Rgb([30, 80, 230]);
pub const AGENT: Rgb<u8> = Rgb([220, 30, 30]);
pub const GOAL: Rgb<u8> = Rgb([20, 170, 40]);

/// What a replay image shows, in world coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub path: Vec<WorldPoint>,
    pub waypoints: Vec<WorldPoint>,
    pub agent: AgentPose,
    pub goals: Vec<WorldPoint>,
}

impl Scene {
    pub fn of(log: &TrajectoryLog) -> Self {
        Self {
            path: log.visited_poses().iter().map(|p| p.position()).collect(),
            waypoints: log.steps.iter().map(|s| s.pose.position()).collect(),
            agent: log.final_pose,
            goals: log
                .steps
                .iter()
                .filter(|s| matches!(s.language_action, LanguageAction::Navigate(_)))
                .filter_map(|s| s.world_goal)
                .collect(),
        }
    }
}

struct Canvas {
    img: RgbImage,
    scale: f64,
}

impl Canvas {
    fn px(&self, p: WorldPoint) -> (f64, f64) {
        (p.x * self.scale, p.z * self.scale)
    }

    fn put(&mut self, x: i64, y: i64, c: Rgb<u8>) {
        if x >= 0 && y >= 0 && (x as u32) < self.img.width() && (y as u32) < self.img.height() {
            self.img.put_pixel(x as u32, y as u32, c);
        }
    }

    fn disk(&mut self, (cx, cy): (f64, f64), r: f64, c: Rgb<u8>) {
        let ri = r.ceil() as i64;
        for dy in -ri..=ri {
            for dx in -ri..=ri {
                if (dx * dx + dy * dy) as f64 <= r * r {
                    self.put(cx as i64 + dx, cy as i64 + dy, c);
                }
            }
        }
    }

    fn line(&mut self, a: (f64, f64), b: (f64, f64), width: f64, c: Rgb<u8>) {
        let n = (a.0 - b.0).hypot(a.1 - b.1).ceil().max(1.0) as usize;
        for k in 0..=n {
            let t = k as f64 / n as f64;
            self.disk((a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)), width / 2.0, c);
        }
    }
}

pub fn render(scene: &Scene, world: &World) -> RgbImage {
    let ppc = PIXELS_PER_CELL;
    let mut canvas = Canvas {
        img: RgbImage::from_pixel(world.width as u32 * ppc, world.height as u32 * ppc, FREE),
        scale: ppc as f64 / world.resolution,
    };
    for j in 0..world.height as i64 {
        for i in 0..world.width as i64 {
            let color = match world.cell(i, j) {
                Cell::Free => continue,
                Cell::Wall => WALL,
                Cell::Landmark(_) => LANDMARK,
            };
            for y in 0..ppc {
                for x in 0..ppc {
                    canvas.put(i * ppc as i64 + x as i64, j * ppc as i64 + y as i64, color);
                }
            }
        }
    }
    for w in scene.path.windows(2) {
        canvas.line(canvas.px(w[0]), canvas.px(w[1]), 2.0, PATH);
    }
    for g in &scene.goals {
        let (x, y) = canvas.px(*g);
        canvas.line((x - 7.0, y - 7.0), (x + 7.0, y + 7.0), 3.0, GOAL);
        canvas.line((x - 7.0, y + 7.0), (x + 7.0, y - 7.0), 3.0, GOAL);
    }
    for w in &scene.waypoints {
        canvas.disk(canvas.px(*w), 5.0, WAYPOINT);
    }
    let a = scene.agent;
    let (fx, fz) = a.forward();
    let tip = canvas.px(WorldPoint::new(a.x + 0.4 * fx, a.z + 0.4 * fz));
    canvas.line(canvas.px(a.position()), tip, 3.0, AGENT);
    canvas.disk(canvas.px(a.position()), 6.0, AGENT);
    canvas.img
}

#[cfg(test)]
mod tests {
    use super::*;
    use hiernav::action::{LanguageAction, ProgressEstimate};
    use hiernav::geometry::View;
    use hiernav::pipeline::{StepRecord, StepUsage, Termination};

    fn world() -> World {
        let rows = ["########", "#......#", "#......#", "#......#", "########"];
        World::parse(&rows.join("\n"), "@resolution\t0.25\n").unwrap()
    }

    fn step(k: usize, pose: AgentPose, action: LanguageAction, goal: Option<WorldPoint>) -> StepRecord {
        StepRecord {
            step: k,
            pose,
            language_action: action,
            progress: ProgressEstimate::default().0,
            vision_action: None,
            world_goal: goal,
            fallbacks: vec![],
            commands: vec![],
            poses: vec![],
            collisions: 0,
            usage: StepUsage::default(),
            waypoint: k,
            notes: vec![],
        }
    }

    fn log(steps: Vec<StepRecord>) -> TrajectoryLog {
        let start = AgentPose::new(0.5, 0.6, 0.0);
        TrajectoryLog {
            schema_version: 1,
            episode_id: "e".into(),
            instruction: "go".into(),
            start_pose: start,
            steps,
            final_pose: start,
            termination: Termination::Stopped,
            error: None,
        }
    }

    fn count(img: &RgbImage, c: Rgb<u8>) -> usize {
        img.pixels().filter(|p| **p == c).count()
    }

    #[test]
    fn one_cross_per_navigate_step() {
        let p = AgentPose::new(0.5, 0.6, 0.0);
        let l = log(vec![
            step(0, p, LanguageAction::Navigate(View::Front), Some(WorldPoint::new(1.0, 0.6))),
            step(1, p, LanguageAction::Navigate(View::Left), Some(WorldPoint::new(1.5, 0.8))),
            step(2, p, LanguageAction::Stop, None),
        ]);
        let scene = Scene::of(&l);
        assert_eq!(scene.goals.len(), 2);
        assert_eq!(scene.waypoints.len(), 3);
        let img = render(&scene, &world());
        for g in &scene.goals {
            let (x, y) = ((g.x * 128.0) as u32, (g.z * 128.0) as u32);
            assert_eq!(*img.get_pixel(x, y), GOAL);
        }
    }

    #[test]
    fn zero_step_log_draws_only_the_start_marker() {
        let l = log(vec![]);
        let img = render(&Scene::of(&l), &world());
        assert_eq!(count(&img, GOAL), 0);
        assert_eq!(count(&img, WAYPOINT), 0);
        assert!(count(&img, AGENT) > 0);
        assert_eq!(*img.get_pixel(64, 77), AGENT);
    }

    #[test]
    fn image_covers_the_world() {
        let img = render(&Scene::of(&log(vec![])), &world());
        assert_eq!((img.width(), img.height()), (8 * 32, 5 * 32));
        assert_eq!(*img.get_pixel(5, 5), WALL);
    }
}
