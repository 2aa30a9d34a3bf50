//! Proxy sensor encoders standing in for learned LiDAR and camera backbones.
//!
//! LiDAR voxel channel layout (channels beyond the third stay zero):
//! - 0: center-weighted occupancy, `exp(-k * ((dx / (l/2))^2 + (dy / (w/2))^2))`
//! - 1: occupancy (1.0)
//! - 2: height code, bin height above the box bottom over box height
//!
//! Camera voxels carry `depth weight x semantic code`; the vehicle code lives
//! in channel 3 and the wall code in channel 4 (clamped to the last channel
//! for narrow grids).

use serde::{Deserialize, Serialize};

use crate::error::SceneError;
use crate::grid::{collapse_to_bev, AgentId, BevFeature, GridShape, Linear, VoxelFeature};
use crate::scene::geometry::{line_of_sight, ray_first_hit, HitKind};
use crate::scene::{AgentSpec, Scene};

pub const CH_CENTER: usize = 0;
pub const CH_OCCUPANCY: usize = 1;
pub const CH_HEIGHT: usize = 2;
pub const CH_CAM_VEHICLE: usize = 3;
pub const CH_CAM_WALL: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Agent-frame grid; `channels` is the LiDAR channel count.
    pub grid: GridShape,
    pub camera_channels: usize,
    /// Half-width of the triangular depth kernel, in range bins.
    pub depth_smoothing_bins: usize,
    pub camera_fov_deg: f64,
    pub center_sharpness: f64,
}

impl EncoderConfig {
    pub fn new(grid: GridShape, camera_channels: usize) -> Self {
        EncoderConfig {
            grid,
            camera_channels,
            depth_smoothing_bins: 1,
            camera_fov_deg: 360.0,
            center_sharpness: 2.0,
        }
    }
}

/// World-frame BEV center of agent-grid cell `(h, w)`.
pub fn cell_world(agent: &AgentSpec, grid: &GridShape, h: usize, w: usize) -> (f64, f64) {
    let (x, y) = grid.cell_center(h, w);
    let p = agent.pose.transform_point([x, y, 0.0]);
    (p[0], p[1])
}

/// Is world point `p` inside `agent`'s range with a clear line of sight
/// (box `target` itself does not block)?
pub fn point_visible(scene: &Scene, agent: &AgentSpec, p: (f64, f64), target: Option<usize>) -> bool {
    let o = (agent.pose.x, agent.pose.y);
    let d = ((p.0 - o.0).powi(2) + (p.1 - o.1).powi(2)).sqrt();
    d <= agent.range_m && line_of_sight(scene, o, p, target)
}

/// Cells of `agent`'s grid that lie inside a box, paired with the box index
/// and whether the cell is visible.
pub fn box_cells(scene: &Scene, agent: &AgentSpec, grid: &GridShape) -> Vec<(usize, usize, usize, bool)> {
    let mut out = Vec::new();
    for h in 0..grid.h_cells {
        for w in 0..grid.w_cells {
            let p = cell_world(agent, grid, h, w);
            if let Some(bi) = scene.boxes.iter().position(|b| b.contains_bev(p.0, p.1)) {
                out.push((h, w, bi, point_visible(scene, agent, p, Some(bi))));
            }
        }
    }
    out
}

/// Proxy LiDAR encoding: a voxel column is filled only where the cell lies in
/// a box and the ray from the agent to the cell center is unobstructed by
/// walls and other boxes. The BEV plane is the vertical collapse.
pub fn lidar_proxy_encode(
    scene: &Scene,
    agent_id: AgentId,
    cfg: &EncoderConfig,
) -> Result<(VoxelFeature, BevFeature), SceneError> {
    let agent = scene.agent(agent_id)?;
    let g = cfg.grid;
    let mut v = VoxelFeature::zeros(g, agent_id);
    let c = g.channels;
    for (h, w, bi, visible) in box_cells(scene, agent, &g) {
        if !visible {
            continue;
        }
        let b = &scene.boxes[bi];
        let p = cell_world(agent, &g, h, w);
        let (lx, ly) = b.to_local(p.0, p.1);
        let r2 = (lx / (b.length / 2.0)).powi(2) + (ly / (b.width / 2.0)).powi(2);
        let center = (-cfg.center_sharpness * r2).exp() as f32;
        let (bottom, top) = b.z_range();
        for l in 0..g.l_bins {
            let z = agent.pose.z + g.bin_center_z(l);
            if z < bottom || z > top {
                continue;
            }
            let cell = v.cell_mut(h, w, l);
            cell[CH_CENTER] = center;
            if c > CH_OCCUPANCY {
                cell[CH_OCCUPANCY] = 1.0;
            }
            if c > CH_HEIGHT {
                cell[CH_HEIGHT] = ((z - bottom) / b.height) as f32;
            }
        }
    }
    let bev = collapse_to_bev(&v, &Linear::identity(c, c)).expect("square identity projection");
    Ok((v, bev))
}

/// Unit-sum distribution over `bins` range bins for a ray that first hits
/// something at `hit_m` (uniform when nothing is hit within `range_m`).
pub fn depth_distribution(hit_m: Option<f64>, range_m: f64, bins: usize, smoothing: usize) -> Vec<f32> {
    let bw = range_m / bins as f64;
    match hit_m {
        Some(d) if d <= range_m => {
            let center = ((d / bw).floor() as usize).min(bins - 1) as i64;
            let s = smoothing as i64;
            let mut dist = vec![0.0f64; bins];
            for o in -s..=s {
                let b = center + o;
                if (0..bins as i64).contains(&b) {
                    dist[b as usize] = (s + 1 - o.abs()) as f64;
                }
            }
            let sum: f64 = dist.iter().sum();
            dist.iter().map(|x| (x / sum) as f32).collect()
        }
        _ => vec![1.0 / bins as f32; bins],
    }
}

/// Depth distribution along the ray from `agent` through world point `p`.
pub fn ray_depth_distribution(scene: &Scene, agent: &AgentSpec, p: (f64, f64), bins: usize, smoothing: usize) -> (Vec<f32>, Option<HitKind>) {
    let o = (agent.pose.x, agent.pose.y);
    let (dx, dy) = (p.0 - o.0, p.1 - o.1);
    let n = (dx * dx + dy * dy).sqrt();
    if n == 0.0 {
        return (depth_distribution(None, agent.range_m, bins, smoothing), None);
    }
    let hit = ray_first_hit(scene, o, (dx / n, dy / n), agent.range_m);
    (
        depth_distribution(hit.map(|h| h.0), agent.range_m, bins, smoothing),
        hit.map(|h| h.1),
    )
}

/// Proxy camera encoding: each BEV cell reads the depth distribution of the
/// ray through it at its own range bin and scales the semantic code of the
/// ray's first hit. Every vertical bin of the column gets the same value.
pub fn camera_proxy_encode(scene: &Scene, agent_id: AgentId, cfg: &EncoderConfig) -> Result<VoxelFeature, SceneError> {
    let agent = scene.agent(agent_id)?;
    let g = cfg.grid.with_channels(cfg.camera_channels);
    let bins = g.l_bins;
    let bw = agent.range_m / bins as f64;
    let c = g.channels;
    let mut v = VoxelFeature::zeros(g, agent_id);
    let half_fov = cfg.camera_fov_deg / 2.0;
    for h in 0..g.h_cells {
        for w in 0..g.w_cells {
            let (lx, ly) = g.cell_center(h, w);
            let r = (lx * lx + ly * ly).sqrt();
            if r > agent.range_m {
                continue;
            }
            if half_fov < 180.0 && ly.atan2(lx).to_degrees().abs() > half_fov {
                continue;
            }
            let p = cell_world(agent, &g, h, w);
            let (dist, hit) = ray_depth_distribution(scene, agent, p, bins, cfg.depth_smoothing_bins);
            let ch = match hit {
                Some(HitKind::Vehicle) => CH_CAM_VEHICLE.min(c - 1),
                Some(HitKind::Wall) => CH_CAM_WALL.min(c - 1),
                None => continue,
            };
            let weight = dist[((r / bw).floor() as usize).min(bins - 1)];
            for l in 0..bins {
                v.cell_mut(h, w, l)[ch] = weight;
            }
        }
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Pose;
    use crate::scene::{Box3D, Wall};

    fn grid() -> GridShape {
        GridShape::new(32, 32, 4, 4, 1.0, 0.5).unwrap()
    }

    fn car(x: f64, y: f64, id: u32) -> Box3D {
        Box3D { x, y, z: 0.8, length: 4.5, width: 2.0, height: 1.6, yaw: 0.0, object_id: id }
    }

    fn scene(boxes: Vec<Box3D>, walls: Vec<Wall>) -> Scene {
        Scene {
            extent_m: 40.0,
            boxes,
            walls,
            agents: vec![AgentSpec { id: 0, pose: Pose::identity(), range_m: 30.0 }],
            seed: 0,
        }
    }

    #[test]
    fn empty_scene_is_zero() {
        let cfg = EncoderConfig::new(grid(), 6);
        let s = scene(vec![], vec![]);
        let (v, b) = lidar_proxy_encode(&s, 0, &cfg).unwrap();
        assert!(v.data().iter().all(|&x| x == 0.0));
        assert!(b.data().iter().all(|&x| x == 0.0));
        let cam = camera_proxy_encode(&s, 0, &cfg).unwrap();
        assert!(cam.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn occupied_cells_match_rasterization() {
        let cfg = EncoderConfig::new(grid(), 6);
        let b = car(4.5, 2.5, 1);
        let s = scene(vec![b], vec![]);
        let (v, _) = lidar_proxy_encode(&s, 0, &cfg).unwrap();
        let g = cfg.grid;
        // brute-force point-in-box over every cell
        let mut expected = Vec::new();
        for h in 0..g.h_cells {
            for w in 0..g.w_cells {
                let (x, y) = g.cell_center(h, w);
                let (lx, ly) = (x - b.x, y - b.y);
                if lx.abs() <= 2.25 + 1e-9 && ly.abs() <= 1.0 + 1e-9 {
                    expected.push((h, w));
                }
            }
        }
        let mut got = Vec::new();
        for h in 0..g.h_cells {
            for w in 0..g.w_cells {
                if (0..g.l_bins).any(|l| v.get(h, w, l, CH_OCCUPANCY) > 0.0) {
                    got.push((h, w));
                }
            }
        }
        assert_eq!(got, expected);
        assert_eq!(got.len(), 5 * 3);
        // peak center-weight at the box center cell
        let (ch, cw) = g.cell_of(b.x, b.y).unwrap();
        assert_eq!(v.get(ch, cw, 0, CH_CENTER), 1.0);
    }

    #[test]
    fn wall_hides_box() {
        let cfg = EncoderConfig::new(grid(), 6);
        let b = car(10.5, 0.5, 1);
        let wall = Wall { x0: 6.0, y0: -4.0, x1: 6.0, y1: 4.0 };
        let s = scene(vec![b], vec![wall]);
        let (v, bev) = lidar_proxy_encode(&s, 0, &cfg).unwrap();
        assert!(v.data().iter().all(|&x| x == 0.0));
        assert!(bev.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn depth_distribution_properties() {
        let d = depth_distribution(None, 30.0, 8, 1);
        assert!(d.iter().all(|&x| x == 0.125));
        // hit inside bin 5 of 8 over 32 m (bin width 4 m)
        let d = depth_distribution(Some(21.0), 32.0, 8, 1);
        let arg = d
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(arg, (21.0f64 / 4.0).floor() as usize);
        assert_eq!(arg, 5);
        assert!((d.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        // edge bins renormalize
        let d = depth_distribution(Some(0.5), 32.0, 8, 1);
        assert!((d[0] - 2.0 / 3.0).abs() < 1e-6 && (d[1] - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn camera_marks_vehicle_channel() {
        let cfg = EncoderConfig::new(grid(), 6);
        let s = scene(vec![car(8.5, 0.5, 1)], vec![]);
        let cam = camera_proxy_encode(&s, 0, &cfg).unwrap();
        let g = cfg.grid;
        let (h, w) = g.cell_of(6.5, 0.5).unwrap();
        assert!(cam.get(h, w, 0, CH_CAM_VEHICLE) > 0.0);
        assert!(cam.data().iter().all(|x| *x >= 0.0));
    }

    #[test]
    fn restricted_fov_blanks_rear() {
        let mut cfg = EncoderConfig::new(grid(), 6);
        cfg.camera_fov_deg = 90.0;
        let s = scene(vec![car(-8.5, 0.5, 1)], vec![]);
        let cam = camera_proxy_encode(&s, 0, &cfg).unwrap();
        assert!(cam.data().iter().all(|&x| x == 0.0));
    }
}
