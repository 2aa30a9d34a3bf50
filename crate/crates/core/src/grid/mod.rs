//! Dense grid containers and the kernels shared by every fusion stage.

mod attention;
mod ops;
mod pose;
mod tensor;
mod warp;
mod weights;

pub use attention::{attend_row, attention, softmax_weights};
pub use ops::{collapse_to_bev, fit_bev, resample_bev, Resample};
pub(crate) use ops::{lerp, pairwise_sum};
pub use pose::{normalize_deg, Pose};
pub use tensor::{AgentId, BevFeature, GridShape, Matrix, VoxelFeature};
pub use warp::{warp_bev_to_frame, warp_to_frame};
pub use weights::{Conv3x3, Linear, ModelDims, QkvWeights, Tensor, WeightSet};
