use serde::{Deserialize, Serialize};

use crate::error::SceneError;
use crate::grid::{AgentId, Pose};

/// Ground-truth object: a box extruded from the ground plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub length: f64,
    pub width: f64,
    pub height: f64,
    /// Degrees.
    pub yaw: f64,
    pub object_id: u32,
}

const EDGE_EPS: f64 = 1e-9;

impl Box3D {
    pub fn validate(&self) -> Result<(), SceneError> {
        if !(self.length > 0.0 && self.width > 0.0 && self.height > 0.0) {
            return Err(SceneError::Invalid(format!(
                "box {} has non-positive size {}x{}x{}",
                self.object_id, self.length, self.width, self.height
            )));
        }
        Ok(())
    }

    /// World point expressed in the box frame (planar).
    pub fn to_local(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.yaw.to_radians().sin_cos();
        let (dx, dy) = (x - self.x, y - self.y);
        (c * dx + s * dy, -s * dx + c * dy)
    }

    /// Inclusive point-in-footprint test.
    pub fn contains_bev(&self, x: f64, y: f64) -> bool {
        let (lx, ly) = self.to_local(x, y);
        lx.abs() <= self.length / 2.0 + EDGE_EPS && ly.abs() <= self.width / 2.0 + EDGE_EPS
    }

    pub fn z_range(&self) -> (f64, f64) {
        (self.z - self.height / 2.0, self.z + self.height / 2.0)
    }

    /// Footprint corners in counter-clockwise order.
    pub fn corners_bev(&self) -> [(f64, f64); 4] {
        let (s, c) = self.yaw.to_radians().sin_cos();
        let (hl, hw) = (self.length / 2.0, self.width / 2.0);
        [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)].map(|(lx, ly)| {
            (self.x + c * lx - s * ly, self.y + s * lx + c * ly)
        })
    }
}

/// Axis-aligned occluder segment in the ground plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wall {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Wall {
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.x0 != self.x1 && self.y0 != self.y1 {
            return Err(SceneError::Invalid(format!(
                "wall ({}, {})-({}, {}) is not axis-aligned",
                self.x0, self.y0, self.x1, self.y1
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub id: AgentId,
    pub pose: Pose,
    pub range_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    /// World spans `[-extent_m, extent_m]` on both axes.
    pub extent_m: f64,
    pub boxes: Vec<Box3D>,
    pub walls: Vec<Wall>,
    pub agents: Vec<AgentSpec>,
    pub seed: u64,
}

impl Scene {
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.agents.is_empty() {
            return Err(SceneError::Invalid("scene needs at least one agent".into()));
        }
        for a in &self.agents {
            if a.pose.x.abs() > self.extent_m || a.pose.y.abs() > self.extent_m {
                return Err(SceneError::Invalid(format!(
                    "agent {} at ({}, {}) lies outside the world extent {}",
                    a.id, a.pose.x, a.pose.y, self.extent_m
                )));
            }
            if !(a.range_m > 0.0) {
                return Err(SceneError::Invalid(format!("agent {} has no sensor range", a.id)));
            }
        }
        let mut ids: Vec<_> = self.agents.iter().map(|a| a.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(SceneError::Invalid("duplicate agent ids".into()));
        }
        for b in &self.boxes {
            b.validate()?;
        }
        for w in &self.walls {
            w.validate()?;
        }
        Ok(())
    }

    pub fn agent(&self, id: AgentId) -> Result<&AgentSpec, SceneError> {
        self.agents
            .iter()
            .find(|a| a.id == id)
            .ok_or(SceneError::UnknownAgent(id))
    }

    /// Keep only the first `n` agents.
    pub fn with_agent_count(&self, n: usize) -> Scene {
        let mut s = self.clone();
        s.agents.truncate(n.max(1));
        s
    }
}

/// Gaussian localization noise: translation std in meters, heading std in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct NoiseSpec {
    pub sigma_p: f64,
    pub sigma_r: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        NoiseSpec::default()
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if !(self.sigma_p >= 0.0 && self.sigma_r >= 0.0) {
            return Err(SceneError::Invalid(format!(
                "noise sigmas must be >= 0, got {} / {}",
                self.sigma_p, self.sigma_r
            )));
        }
        Ok(())
    }
}
