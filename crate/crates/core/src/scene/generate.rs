use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::SceneError;
use crate::grid::{GridShape, Pose};
use crate::scene::encode::{box_cells, point_visible};
use crate::scene::geometry::segment_hits_box;
use crate::scene::{AgentSpec, Box3D, Scene, Wall};

const MAX_ATTEMPTS: usize = 400;

/// Knobs for [`generate_scene`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenParams {
    pub extent_m: f64,
    pub agents: usize,
    /// Total boxes, including the occluded ones.
    pub boxes: usize,
    /// Boxes fully hidden from agent 0 but visible to another agent.
    pub occluded_count: usize,
    /// Extra random walls besides the ones that create occlusion.
    pub walls: usize,
    pub sensor_range_m: f64,
    pub box_length_m: f64,
    pub box_width_m: f64,
    pub box_height_m: f64,
    pub min_box_spacing_m: f64,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            extent_m: 40.0,
            agents: 2,
            boxes: 6,
            occluded_count: 2,
            walls: 2,
            sensor_range_m: 35.0,
            box_length_m: 4.5,
            box_width_m: 2.0,
            box_height_m: 1.6,
            min_box_spacing_m: 7.0,
        }
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<(), SceneError> {
        let positive = [
            ("extent_m", self.extent_m),
            ("sensor_range_m", self.sensor_range_m),
            ("box_length_m", self.box_length_m),
            ("box_width_m", self.box_width_m),
            ("box_height_m", self.box_height_m),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SceneError::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.agents == 0 {
            return Err(SceneError::Invalid("at least one agent is required".into()));
        }
        if self.occluded_count > self.boxes {
            return Err(SceneError::Invalid(format!(
                "occluded_count {} exceeds box count {}",
                self.occluded_count, self.boxes
            )));
        }
        Ok(())
    }
}

fn snap_center(v: f64, cs: f64) -> f64 {
    ((v / cs).floor() + 0.5) * cs
}

fn snap_corner(v: f64, cs: f64) -> f64 {
    (v / cs).round() * cs
}

fn point_segment_dist(p: (f64, f64), w: &Wall) -> f64 {
    let (ax, ay, bx, by) = (w.x0, w.y0, w.x1, w.y1);
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - ax) * dx + (p.1 - ay) * dy) / len2).clamp(0.0, 1.0)
    };
    ((p.0 - ax - t * dx).powi(2) + (p.1 - ay - t * dy).powi(2)).sqrt()
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Is box `bi` fully hidden from `agent` on its grid?
pub fn box_hidden_from(scene: &Scene, agent: &AgentSpec, grid: &GridShape, bi: usize) -> bool {
    box_cells(scene, agent, grid)
        .iter()
        .all(|&(_, _, b, vis)| b != bi || !vis)
}

/// Is the center of box `bi` inside `agent`'s grid, in range, and in sight?
pub fn box_center_visible(scene: &Scene, agent: &AgentSpec, grid: &GridShape, bi: usize) -> bool {
    let b = &scene.boxes[bi];
    let local = agent.pose.inverse_transform_point([b.x, b.y, 0.0]);
    grid.cell_of(local[0], local[1]).is_some() && point_visible(scene, agent, (b.x, b.y), Some(bi))
}

/// Boxes fully hidden from agent 0 whose center another agent sees.
pub fn occluded_recoverable(scene: &Scene, grid: &GridShape) -> Vec<usize> {
    let ego = &scene.agents[0];
    (0..scene.boxes.len())
        .filter(|&bi| {
            let b = &scene.boxes[bi];
            let local = ego.pose.inverse_transform_point([b.x, b.y, 0.0]);
            grid.cell_of(local[0], local[1]).is_some()
                && box_hidden_from(scene, ego, grid, bi)
                && scene.agents[1..]
                    .iter()
                    .any(|a| box_center_visible(scene, a, grid, bi))
        })
        .collect()
}

struct Builder<'a> {
    p: &'a GenParams,
    grid: &'a GridShape,
    scene: Scene,
    placed: Vec<Option<(f64, f64)>>,
}

impl Builder<'_> {
    fn make_box(&self, x: f64, y: f64) -> Box3D {
        Box3D {
            x,
            y,
            z: self.p.box_height_m / 2.0,
            length: self.p.box_length_m,
            width: self.p.box_width_m,
            height: self.p.box_height_m,
            yaw: 0.0,
            object_id: self.scene.boxes.len() as u32,
        }
    }

    fn inside_ego_grid(&self, x: f64, y: f64, margin: f64) -> bool {
        let (hx, hy) = self.grid.half_extent();
        x.abs() <= hx - margin && y.abs() <= hy - margin
    }

    fn box_ok(&self, b: &Box3D) -> bool {
        let spacing_ok = self
            .scene
            .boxes
            .iter()
            .all(|o| dist((o.x, o.y), (b.x, b.y)) >= self.p.min_box_spacing_m);
        let agents_ok = self
            .placed
            .iter()
            .flatten()
            .all(|&a| dist(a, (b.x, b.y)) >= 4.0);
        let walls_ok = self
            .scene
            .walls
            .iter()
            .all(|w| !segment_hits_box((w.x0, w.y0), (w.x1, w.y1), b));
        spacing_ok && agents_ok && walls_ok
    }

    fn wall_ok(&self, w: &Wall) -> bool {
        !self
            .scene
            .boxes
            .iter()
            .any(|b| segment_hits_box((w.x0, w.y0), (w.x1, w.y1), b))
            && self
                .placed
                .iter()
                .flatten()
                .all(|&a| point_segment_dist(a, w) >= 1.5)
    }

    /// Wall perpendicular to the ego sight line covering the box's shadow.
    fn shadow_wall(&self, b: &Box3D) -> Option<Wall> {
        let gap = 1.5;
        let corners = b.corners_bev();
        if b.x.abs() >= b.y.abs() {
            let xw = b.x - b.x.signum() * (b.length / 2.0 + gap);
            if xw.abs() < 2.0 {
                return None;
            }
            let ys = corners.iter().map(|&(cx, cy)| cy * xw / cx);
            let (lo, hi) = ys.fold((f64::MAX, f64::MIN), |(l, h), y| (l.min(y), h.max(y)));
            Some(Wall { x0: xw, y0: lo - 0.6, x1: xw, y1: hi + 0.6 })
        } else {
            let yw = b.y - b.y.signum() * (b.width / 2.0 + gap);
            if yw.abs() < 2.0 {
                return None;
            }
            let xs = corners.iter().map(|&(cx, cy)| cx * yw / cy);
            let (lo, hi) = xs.fold((f64::MAX, f64::MIN), |(l, h), x| (l.min(x), h.max(x)));
            Some(Wall { x0: lo - 0.6, y0: yw, x1: hi + 0.6, y1: yw })
        }
    }

    fn agent_spec(&self, i: usize, pos: (f64, f64)) -> AgentSpec {
        AgentSpec {
            id: i as u32,
            pose: Pose::planar(pos.0, pos.1, 0.0),
            range_m: self.p.sensor_range_m,
        }
    }

    fn sees_center(&self, agent: usize, bi: usize) -> bool {
        let pos = self.placed[agent].expect("placed agent");
        let spec = self.agent_spec(agent, pos);
        box_center_visible(&self.scene, &spec, self.grid, bi)
    }
}

fn try_generate(seed: u64, p: &GenParams, grid: &GridShape, rng: &mut ChaCha8Rng) -> Result<Scene, String> {
    let cs = grid.cell_size_m as f64;
    let mut bld = Builder {
        p,
        grid,
        scene: Scene {
            extent_m: p.extent_m,
            boxes: Vec::new(),
            walls: Vec::new(),
            agents: Vec::new(),
            seed,
        },
        placed: vec![None; p.agents],
    };
    bld.placed[0] = Some((0.0, 0.0));
    let r_max = (p.sensor_range_m - 4.0).min(grid.half_extent().0.min(grid.half_extent().1) - 4.0);
    let mut designated = Vec::new();

    for i in 0..p.occluded_count {
        if p.agents < 2 {
            return Err("occluded boxes need at least two agents".into());
        }
        let sender = 1 + i % (p.agents - 1);
        let mut done = false;
        for _ in 0..60 {
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            let d = rng.random_range(9.0..r_max.max(9.5));
            let (x, y) = (snap_center(d * theta.cos(), cs), snap_center(d * theta.sin(), cs));
            let b = bld.make_box(x, y);
            if !bld.inside_ego_grid(x, y, 3.0) || !bld.box_ok(&b) {
                continue;
            }
            let Some(wall) = bld.shadow_wall(&b) else { continue };
            if !bld.wall_ok(&wall) {
                continue;
            }
            bld.scene.boxes.push(b);
            bld.scene.walls.push(wall);
            let bi = bld.scene.boxes.len() - 1;
            let ok = if bld.placed[sender].is_some() {
                bld.sees_center(sender, bi)
            } else {
                let mut found = false;
                for _ in 0..40 {
                    let phi = theta + rng.random_range(-1.4..1.4);
                    let r = rng.random_range(7.0..14.0);
                    let pos = (snap_corner(x + r * phi.cos(), cs), snap_corner(y + r * phi.sin(), cs));
                    if pos.0.abs() > p.extent_m - 1.0 || pos.1.abs() > p.extent_m - 1.0 {
                        continue;
                    }
                    if bld.placed.iter().flatten().any(|&a| dist(a, pos) < 4.0)
                        || bld.scene.boxes.iter().any(|o| dist((o.x, o.y), pos) < 4.0)
                        || bld.scene.walls.iter().any(|w| point_segment_dist(pos, w) < 1.5)
                    {
                        continue;
                    }
                    bld.placed[sender] = Some(pos);
                    if bld.sees_center(sender, bi) {
                        found = true;
                        break;
                    }
                    bld.placed[sender] = None;
                }
                found
            };
            let hidden = ok && {
                let ego = bld.agent_spec(0, (0.0, 0.0));
                box_hidden_from(&bld.scene, &ego, grid, bi)
            };
            if ok && hidden {
                designated.push((bi, sender));
                done = true;
                break;
            }
            bld.scene.boxes.pop();
            bld.scene.walls.pop();
        }
        if !done {
            return Err(format!("could not hide box {i} from agent 0 behind a wall"));
        }
    }

    // remaining agents anywhere near the ego
    for i in 1..p.agents {
        if bld.placed[i].is_some() {
            continue;
        }
        let mut ok = false;
        for _ in 0..60 {
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            let d = rng.random_range(6.0..r_max.max(6.5));
            let pos = (snap_corner(d * theta.cos(), cs), snap_corner(d * theta.sin(), cs));
            if bld.placed.iter().flatten().any(|&a| dist(a, pos) < 4.0)
                || bld.scene.boxes.iter().any(|o| dist((o.x, o.y), pos) < 4.0)
                || bld.scene.walls.iter().any(|w| point_segment_dist(pos, w) < 1.5)
            {
                continue;
            }
            bld.placed[i] = Some(pos);
            ok = true;
            break;
        }
        if !ok {
            return Err(format!("could not place agent {i}"));
        }
    }

    // distractor boxes the ego can see
    let ego = bld.agent_spec(0, (0.0, 0.0));
    for _ in p.occluded_count..p.boxes {
        let mut ok = false;
        for _ in 0..80 {
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            let d = rng.random_range(5.0..r_max.max(5.5));
            let (x, y) = (snap_center(d * theta.cos(), cs), snap_center(d * theta.sin(), cs));
            let b = bld.make_box(x, y);
            if !bld.inside_ego_grid(x, y, 3.0) || !bld.box_ok(&b) {
                continue;
            }
            bld.scene.boxes.push(b);
            let bi = bld.scene.boxes.len() - 1;
            let blocks_designated = designated
                .iter()
                .any(|&(db, s)| !bld.sees_center(s, db));
            let ego_ok = (0..=bi)
                .filter(|b| !designated.iter().any(|d| d.0 == *b))
                .all(|b| box_center_visible(&bld.scene, &ego, grid, b));
            if ego_ok && !blocks_designated {
                ok = true;
                break;
            }
            bld.scene.boxes.pop();
        }
        if !ok {
            return Err("could not place a distractor box visible to agent 0".into());
        }
    }

    // extra clutter walls that keep every designated line of sight
    for _ in 0..p.walls {
        for _ in 0..40 {
            let len = rng.random_range(3.0..8.0);
            let cx = rng.random_range(-r_max..r_max);
            let cy = rng.random_range(-r_max..r_max);
            let w = if rng.random_bool(0.5) {
                Wall { x0: cx - len / 2.0, y0: cy, x1: cx + len / 2.0, y1: cy }
            } else {
                Wall { x0: cx, y0: cy - len / 2.0, x1: cx, y1: cy + len / 2.0 }
            };
            if !bld.wall_ok(&w) {
                continue;
            }
            let ego_boxes: Vec<usize> = (0..bld.scene.boxes.len())
                .filter(|bi| !designated.iter().any(|d| d.0 == *bi))
                .collect();
            bld.scene.walls.push(w);
            let keeps = ego_boxes.iter().all(|&bi| box_center_visible(&bld.scene, &ego, grid, bi))
                && designated.iter().all(|&(db, s)| bld.sees_center(s, db));
            if keeps {
                break;
            }
            bld.scene.walls.pop();
        }
    }

    bld.scene.agents = (0..p.agents)
        .map(|i| bld.agent_spec(i, bld.placed[i].expect("all agents placed")))
        .collect();
    let scene = bld.scene;
    scene.validate().map_err(|e| e.to_string())?;

    let recoverable = occluded_recoverable(&scene, grid);
    if recoverable.len() < p.occluded_count {
        return Err(format!(
            "only {} of {} boxes are hidden from agent 0 and visible to another agent",
            recoverable.len(),
            p.occluded_count
        ));
    }
    for (bi, b) in scene.boxes.iter().enumerate() {
        if scene.walls.iter().any(|w| segment_hits_box((w.x0, w.y0), (w.x1, w.y1), b)) {
            return Err(format!("box {bi} overlaps a wall"));
        }
    }
    Ok(scene)
}

/// Deterministic synthetic scene with controlled occlusion of agent 0.
///
/// Agent 0 sits at the origin with heading 0; every agent is axis-aligned and
/// placed on cell corners, and box centers sit on cell centers, so agent grids
/// line up exactly in the noise-free case.
pub fn generate_scene(seed: u64, params: &GenParams, grid: &GridShape) -> Result<Scene, SceneError> {
    params.validate()?;
    grid.validate().map_err(|e| SceneError::Invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last = String::new();
    for _ in 0..MAX_ATTEMPTS {
        match try_generate(seed, params, grid, &mut rng) {
            Ok(s) => return Ok(s),
            Err(e) => last = e,
        }
    }
    Err(SceneError::Infeasible {
        attempts: MAX_ATTEMPTS,
        constraint: last,
    })
}
