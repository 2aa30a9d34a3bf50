//! Synthetic occlusion scenes and proxy sensor encoders.

mod encode;
mod generate;
pub mod geometry;
mod noise;
mod types;

pub use encode::{
    box_cells, camera_proxy_encode, cell_world, depth_distribution, lidar_proxy_encode,
    point_visible, ray_depth_distribution, EncoderConfig, CH_CAM_VEHICLE, CH_CAM_WALL,
    CH_CENTER, CH_HEIGHT, CH_OCCUPANCY,
};
pub use generate::{
    box_center_visible, box_hidden_from, generate_scene, occluded_recoverable, GenParams,
};
pub use noise::perturb_pose;
pub use types::{AgentSpec, Box3D, NoiseSpec, Scene, Wall};
