//! Seeded procedural worlds and episodes.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{AgentPose, WorldPoint};

use super::{LandmarkSpec, SimError, World};

pub const EPISODE_SET_VERSION: u32 = 1;

const LABELS: [&str; 20] = [
    "red sofa",
    "floor lamp",
    "bookshelf",
    "potted plant",
    "wooden chair",
    "dining table",
    "filing cabinet",
    "large painting",
    "television",
    "fridge",
    "piano",
    "grandfather clock",
    "standing mirror",
    "desk",
    "armchair",
    "washing machine",
    "coat rack",
    "vending machine",
    "aquarium",
    "statue",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    /// One straight corridor; the destination is ahead of the start pose.
    Corridor,
    /// A grid of rooms joined by doorways.
    Rooms,
    /// A long corridor with the start partway along it; used to exercise
    /// recovery from a wrong first move.
    Backtrack,
    /// Corridor whose final landmark has a transparent lower part that
    /// returns no depth.
    DepthHole,
}

impl Difficulty {
    pub const ALL: [Difficulty; 4] = [
        Difficulty::Corridor,
        Difficulty::Rooms,
        Difficulty::Backtrack,
        Difficulty::DepthHole,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Difficulty::Corridor => "corridor",
            Difficulty::Rooms => "rooms",
            Difficulty::Backtrack => "backtrack",
            Difficulty::DepthHole => "depth_hole",
        }
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Difficulty {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Difficulty::ALL
            .into_iter()
            .find(|d| d.name() == norm)
            .ok_or_else(|| {
                let names: Vec<_> = Difficulty::ALL.iter().map(|d| d.name()).collect();
                format!("unknown difficulty {s:?}; valid names: {}", names.join(", "))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub id: String,
    pub world_id: String,
    pub difficulty: Difficulty,
    pub instruction: String,
    /// Instruction landmarks in order; the last is the destination.
    pub landmarks: Vec<char>,
    /// Free point in front of each instruction landmark; the last equals
    /// `goal`.
    pub landmark_targets: Vec<WorldPoint>,
    pub start: AgentPose,
    pub goal: WorldPoint,
    pub gt_path_length: f64,
}

/// A world in its text formats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldDoc {
    pub id: String,
    pub map: String,
    pub labels: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSet {
    pub version: u32,
    pub seed: u64,
    pub difficulty: Difficulty,
    pub worlds: Vec<WorldDoc>,
    pub episodes: Vec<Episode>,
}

impl EpisodeSet {
    pub fn world(&self, world_id: &str) -> Result<World, SimError> {
        let doc = self
            .worlds
            .iter()
            .find(|w| w.id == world_id)
            .ok_or_else(|| SimError::UnknownWorld(world_id.to_string()))?;
        World::parse(&doc.map, &doc.labels)
    }

    pub fn episode(&self, id: &str) -> Option<&Episode> {
        self.episodes.iter().find(|e| e.id == id)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("episode sets serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let set: EpisodeSet =
            serde_json::from_str(text).map_err(|e| SimError::EpisodeSet(e.to_string()))?;
        if set.version != EPISODE_SET_VERSION {
            return Err(SimError::EpisodeSet(format!(
                "unsupported version {} (expected {EPISODE_SET_VERSION})",
                set.version
            )));
        }
        for e in &set.episodes {
            if !set.worlds.iter().any(|w| w.id == e.world_id) {
                return Err(SimError::EpisodeSet(format!(
                    "episode {} references missing world {}",
                    e.id, e.world_id
                )));
            }
        }
        Ok(set)
    }
}

/// Generates `count` episodes, each in its own world. Identical arguments
/// give identical sets.
pub fn generate_episodes(seed: u64, count: usize, difficulty: Difficulty) -> EpisodeSet {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut worlds = Vec::with_capacity(count);
    let mut episodes = Vec::with_capacity(count);
    for k in 0..count {
        let mut rng = ChaCha8Rng::seed_from_u64(master.gen());
        let id = format!("{}-{seed}-{k:03}", difficulty.name());
        let world_id = format!("w-{id}");
        let built = loop {
            let attempt = match difficulty {
                Difficulty::Corridor => Some(corridor(&mut rng, 28..=40, 0.0)),
                Difficulty::DepthHole => Some(corridor(&mut rng, 24..=30, 0.7)),
                Difficulty::Backtrack => Some(backtrack_corridor(&mut rng)),
                Difficulty::Rooms => rooms(&mut rng),
            };
            if let Some(b) = attempt {
                break b;
            }
        };
        let world = built.world;
        let gt = world.geodesic_field(built.goal).distance(built.start.position());
        assert!(gt.is_finite() && gt > 0.0, "generated episode has no path");
        let names: Vec<&str> = built
            .letters
            .iter()
            .map(|c| world.landmark(*c).expect("placed landmark").label.as_str())
            .collect();
        episodes.push(Episode {
            id,
            world_id: world_id.clone(),
            difficulty,
            instruction: instruction_text(&names),
            landmarks: built.letters,
            landmark_targets: built.targets,
            start: built.start,
            goal: built.goal,
            gt_path_length: gt,
        });
        worlds.push(WorldDoc {
            id: world_id,
            map: world.map_text(),
            labels: world.label_table(),
        });
    }
    EpisodeSet {
        version: EPISODE_SET_VERSION,
        seed,
        difficulty,
        worlds,
        episodes,
    }
}

fn instruction_text(names: &[&str]) -> String {
    let (last, rest) = names.split_last().expect("at least one landmark");
    let mut s = String::new();
    for (k, n) in rest.iter().enumerate() {
        if k == 0 {
            s.push_str(&format!("walk past the {n}, "));
        } else {
            s.push_str(&format!("then past the {n}, "));
        }
    }
    s.push_str(&format!("then go to the {last}"));
    s
}

struct Built {
    world: World,
    letters: Vec<char>,
    targets: Vec<WorldPoint>,
    start: AgentPose,
    goal: WorldPoint,
}

const RES: f64 = 0.25;
const GOAL_OFFSET: f64 = 1.0;
const PASS_OFFSET: f64 = 0.6;

struct Canvas {
    rows: Vec<Vec<char>>,
    specs: BTreeMap<char, LandmarkSpec>,
    next_letter: u8,
}

impl Canvas {
    fn walls(w: usize, h: usize) -> Self {
        Self {
            rows: vec![vec!['#'; w]; h],
            specs: BTreeMap::new(),
            next_letter: b'A',
        }
    }

    fn carve(&mut self, i0: usize, j0: usize, i1: usize, j1: usize) {
        for row in &mut self.rows[j0..=j1] {
            for ch in &mut row[i0..=i1] {
                *ch = '.';
            }
        }
    }

    fn get(&self, i: i64, j: i64) -> char {
        if i < 0 || j < 0 || j as usize >= self.rows.len() || i as usize >= self.rows[0].len() {
            return '#';
        }
        self.rows[j as usize][i as usize]
    }

    fn place(&mut self, cells: &[(usize, usize)], label: &str, glass_below: f64) -> char {
        let letter = self.next_letter as char;
        self.next_letter += 1;
        for &(i, j) in cells {
            self.rows[j][i] = letter;
        }
        self.specs.insert(
            letter,
            LandmarkSpec {
                label: label.to_string(),
                height: 1.0,
                glass_below,
            },
        );
        letter
    }

    fn world(&self) -> World {
        World::from_chars(RES, &self.rows, &self.specs).expect("canvas is well formed")
    }
}

/// Free point `offset` meters in front of the face of a wall-backed
/// landmark cell. `normal` points from the wall into the room.
fn in_front(i: usize, j: usize, normal: (i64, i64), offset: f64) -> WorldPoint {
    let cx = (i as f64 + 0.5) * RES;
    let cz = (j as f64 + 0.5) * RES;
    let reach = RES / 2.0 + offset;
    WorldPoint::new(cx + normal.0 as f64 * reach, cz + normal.1 as f64 * reach)
}

fn corridor(rng: &mut ChaCha8Rng, len_range: std::ops::RangeInclusive<usize>, glass: f64) -> Built {
    let len = rng.gen_range(len_range);
    let width = 6;
    let mut canvas = Canvas::walls(len + 2, width + 2);
    canvas.carve(1, 1, len, width);
    let mut labels = LABELS.to_vec();
    labels.shuffle(rng);

    let n_pass = rng.gen_range(1..=2usize);
    let mut letters = Vec::new();
    let mut targets = Vec::new();
    let lo = 8;
    let hi = len - 7;
    let span = (hi - lo) / n_pass;
    for k in 0..n_pass {
        let i = lo + k * span + rng.gen_range(0..span.clamp(1, 4));
        let top = rng.gen_bool(0.5);
        let (j, normal) = if top { (1, (0, 1)) } else { (width, (0, -1)) };
        letters.push(canvas.place(&[(i, j)], labels[k], 0.0));
        targets.push(in_front(i, j, normal, PASS_OFFSET));
    }
    let mid = width / 2;
    letters.push(canvas.place(&[(len, mid), (len, mid + 1)], labels[n_pass], glass));
    let goal = WorldPoint::new(len as f64 * RES - GOAL_OFFSET, (mid + 1) as f64 * RES);
    targets.push(goal);

    let z = (mid + 1) as f64 * RES + rng.gen_range(-0.3..=0.3);
    Built {
        world: canvas.world(),
        letters,
        targets,
        start: AgentPose::new(0.75, z, 0.0),
        goal,
    }
}

/// Long corridor with the start 9.75 m from the west end and the
/// destination landmark 9 m east of it: visible from the start, but not
/// from a few meters further west.
fn backtrack_corridor(rng: &mut ChaCha8Rng) -> Built {
    let len = 76;
    let width = 6;
    let mut canvas = Canvas::walls(len + 2, width + 2);
    canvas.carve(1, 1, len, width);
    let mut labels = LABELS.to_vec();
    labels.shuffle(rng);
    let i_pass = 56 + rng.gen_range(0..4);
    let top = rng.gen_bool(0.5);
    let (j, normal) = if top { (1, (0, 1)) } else { (width, (0, -1)) };
    let mut letters = vec![canvas.place(&[(i_pass, j)], labels[0], 0.0)];
    let mut targets = vec![in_front(i_pass, j, normal, PASS_OFFSET)];
    let mid = width / 2;
    letters.push(canvas.place(&[(len, mid), (len, mid + 1)], labels[1], 0.0));
    let goal = WorldPoint::new(len as f64 * RES - GOAL_OFFSET, (mid + 1) as f64 * RES);
    targets.push(goal);
    let z = (mid + 1) as f64 * RES + rng.gen_range(-0.2..=0.2);
    Built {
        world: canvas.world(),
        letters,
        targets,
        start: AgentPose::new(len as f64 * RES - 9.0, z, 0.0),
        goal,
    }
}

/// Grid of square rooms joined by 1 m doorways along a random spanning
/// tree (plus sometimes one extra door). Returns `None` when no suitable
/// landmark layout exists for the sampled rooms.
fn rooms(rng: &mut ChaCha8Rng) -> Option<Built> {
    let nr = 2usize;
    let nc = rng.gen_range(2..=3usize);
    let s = rng.gen_range(12..=15usize);
    let w = nc * (s + 1) + 1;
    let h = nr * (s + 1) + 1;
    let mut canvas = Canvas::walls(w, h);
    let origin = |r: usize, c: usize| (c * (s + 1) + 1, r * (s + 1) + 1);
    for r in 0..nr {
        for c in 0..nc {
            let (i0, j0) = origin(r, c);
            canvas.carve(i0, j0, i0 + s - 1, j0 + s - 1);
        }
    }

    // Random spanning tree over the room grid, then maybe one extra edge.
    let mut edges = Vec::new();
    for r in 0..nr {
        for c in 0..nc {
            if c + 1 < nc {
                edges.push(((r, c), (r, c + 1)));
            }
            if r + 1 < nr {
                edges.push(((r, c), (r + 1, c)));
            }
        }
    }
    edges.shuffle(rng);
    let mut parent: Vec<usize> = (0..nr * nc).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut x = x;
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut doors = Vec::new();
    let mut spare = Vec::new();
    for e in edges {
        let a = find(&mut parent, e.0 .0 * nc + e.0 .1);
        let b = find(&mut parent, e.1 .0 * nc + e.1 .1);
        if a != b {
            parent[a] = b;
            doors.push(e);
        } else {
            spare.push(e);
        }
    }
    if !spare.is_empty() && rng.gen_bool(0.3) {
        doors.push(spare[0]);
    }
    let mut door_cells = Vec::new();
    for ((r0, c0), (r1, c1)) in &doors {
        let off = rng.gen_range(2..=s - 6);
        if r0 == r1 {
            let i = (c0.max(c1)) * (s + 1);
            let j0 = r0 * (s + 1) + 1 + off;
            for j in j0..j0 + 4 {
                canvas.rows[j][i] = '.';
                door_cells.push((i, j));
            }
        } else {
            let j = (r0.max(r1)) * (s + 1);
            let i0 = c0 * (s + 1) + 1 + off;
            for i in i0..i0 + 4 {
                canvas.rows[j][i] = '.';
                door_cells.push((i, j));
            }
        }
    }

    // Wall-backed interior cells away from doors and corners.
    let near_door = |i: usize, j: usize| {
        door_cells
            .iter()
            .any(|&(di, dj)| di.abs_diff(i) <= 2 && dj.abs_diff(j) <= 2)
    };
    let slots = |canvas: &Canvas| -> Vec<(usize, usize, (i64, i64))> {
        let mut out = Vec::new();
        for j in 1..h - 1 {
            for i in 1..w - 1 {
                if canvas.rows[j][i] != '.' || near_door(i, j) {
                    continue;
                }
                let (ii, jj) = (i as i64, j as i64);
                let walls: Vec<(i64, i64)> = [(1, 0), (-1, 0), (0, 1), (0, -1)]
                    .into_iter()
                    .filter(|(di, dj)| canvas.get(ii + di, jj + dj) == '#')
                    .collect();
                if walls.len() != 1 {
                    continue;
                }
                // Diagonal neighbours on the room side must be free too.
                let (wi, wj) = walls[0];
                let normal = (-wi, -wj);
                let side = if normal.0 == 0 { [(1, normal.1), (-1, normal.1)] } else { [(normal.0, 1), (normal.0, -1)] };
                if side.iter().any(|(di, dj)| canvas.get(ii + di, jj + dj) != '.') {
                    continue;
                }
                out.push((i, j, normal));
            }
        }
        out
    };
    let room_of = |p: WorldPoint| -> (usize, usize) {
        let i = (p.x / RES) as usize;
        let j = (p.z / RES) as usize;
        ((j / (s + 1)).min(nr - 1), (i / (s + 1)).min(nc - 1))
    };

    let mut labels = LABELS.to_vec();
    labels.shuffle(rng);

    // Start pose: a random room, well clear of walls.
    let sr = rng.gen_range(0..nr);
    let sc = rng.gen_range(0..nc);
    let (si0, sj0) = origin(sr, sc);
    let start = AgentPose::new(
        (si0 as f64 + rng.gen_range(3.0..(s as f64 - 3.0))) * RES,
        (sj0 as f64 + rng.gen_range(3.0..(s as f64 - 3.0))) * RES,
        (rng.gen_range(0..24) as f64 * 15.0).to_radians(),
    );

    // Destination landmark in the room farthest from the start.
    let open = canvas.world();
    let start_field = open.geodesic_field(start.position());
    let mut finals: Vec<(usize, usize, (i64, i64))> = slots(&canvas)
        .into_iter()
        .filter(|&(i, j, n)| {
            let g = in_front(i, j, n, GOAL_OFFSET);
            room_of(g) != (sr, sc) && open.clearance(g, 1.0) >= 0.6
        })
        .collect();
    if finals.is_empty() {
        return None;
    }
    let far = finals
        .iter()
        .map(|&(i, j, n)| start_field.distance(in_front(i, j, n, GOAL_OFFSET)))
        .fold(0.0, f64::max);
    finals.retain(|&(i, j, n)| start_field.distance(in_front(i, j, n, GOAL_OFFSET)) >= 0.6 * far);
    let (fi, fj, fnorm) = *finals.choose(rng)?;
    let goal = in_front(fi, fj, fnorm, GOAL_OFFSET);

    // Pass-by landmarks next to the shortest route.
    let mut probe = Canvas {
        rows: canvas.rows.clone(),
        specs: BTreeMap::new(),
        next_letter: b'A',
    };
    probe.rows[fj][fi] = 'Z';
    probe.specs.insert(
        'Z',
        LandmarkSpec {
            label: String::new(),
            height: 1.0,
            glass_below: 0.0,
        },
    );
    let route = probe.world().geodesic_field(goal).path_from(start.position()).ok()?;
    let total = route.total_length;
    let mut candidates: Vec<(f64, usize, usize, (i64, i64))> = slots(&canvas)
        .into_iter()
        .filter(|&(i, j, _)| (i, j) != (fi, fj) && i.abs_diff(fi) + j.abs_diff(fj) > 4)
        .filter_map(|(i, j, n)| {
            let t = in_front(i, j, n, PASS_OFFSET);
            let (d, arc) = project_on_path(&route.points, t);
            let body = WorldPoint::new((i as f64 + 0.5) * RES, (j as f64 + 0.5) * RES);
            let (body_d, _) = project_on_path(&route.points, body);
            (d <= 0.8 && body_d >= 0.5 && arc >= 1.5 && arc <= total - 2.0).then_some((arc, i, j, n))
        })
        .collect();
    if candidates.is_empty() {
        return None;
    }
    candidates.shuffle(rng);
    let want = rng.gen_range(1..=2usize);
    let mut chosen: Vec<(f64, usize, usize, (i64, i64))> = Vec::new();
    for c in candidates {
        if chosen.len() == want {
            break;
        }
        if chosen.iter().all(|o| (o.0 - c.0).abs() >= 1.5) {
            chosen.push(c);
        }
    }
    chosen.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut letters = Vec::new();
    let mut targets = Vec::new();
    for (k, &(_, i, j, n)) in chosen.iter().enumerate() {
        letters.push(canvas.place(&[(i, j)], labels[k], 0.0));
        targets.push(in_front(i, j, n, PASS_OFFSET));
    }
    letters.push(canvas.place(&[(fi, fj)], labels[chosen.len()], 0.0));
    targets.push(goal);
    let world = canvas.world();
    if !world.geodesic_field(goal).distance(start.position()).is_finite() {
        return None;
    }
    Some(Built {
        world,
        letters,
        targets,
        start,
        goal,
    })
}

/// Distance from `p` to the polyline and the arc length at the closest
/// point.
fn project_on_path(points: &[WorldPoint], p: WorldPoint) -> (f64, f64) {
    let mut best = (f64::INFINITY, 0.0);
    let mut arc = 0.0;
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (vx, vz) = (b.x - a.x, b.z - a.z);
        let len2 = vx * vx + vz * vz;
        let t = if len2 > 0.0 {
            (((p.x - a.x) * vx + (p.z - a.z) * vz) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let q = WorldPoint::new(a.x + t * vx, a.z + t * vz);
        let d = q.distance(&p);
        if d < best.0 {
            best = (d, arc + t * len2.sqrt());
        }
        arc += len2.sqrt();
    }
    best
}
