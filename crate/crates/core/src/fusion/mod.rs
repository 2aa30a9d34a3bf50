//! Stage-one fusion: the collaborative voxel prior, occupancy gating of the
//! camera voxels, and LiDAR/camera BEV fusion.

mod compress;
mod hmf;
mod mix;
mod occupancy;

pub use compress::{compress_voxel, decompress_voxel, CompressionStrategy, MixVoxelMode, StrategyTag};
pub use hmf::{hmf, HmfWeights};
pub use mix::{mix_voxel, MixWeights};
pub use occupancy::{occ_gate, occupancy_head, sigmoid, OccupancyGrid};
