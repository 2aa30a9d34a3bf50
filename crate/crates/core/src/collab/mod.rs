//! Stage-two collaboration: heatmaps, discrepancy-driven instance
//! completion, instance refinement and the multi-scale driver.

mod heatmap;
mod instance;
mod pyramid;
mod topk;

pub use heatmap::{discrepancy, heatmap_head, Heatmap, HeatmapHead};
pub use instance::{instance_complete, instance_refine, positional_encoding, InstanceVector, IrWeights, SenderPatch};
pub use pyramid::{
    answer_query, collaborate_multiscale, collaborate_scale, completion_positions, merge_scales, AgentView,
    CollabConfig, CollabWeights, ScalePyramid,
};
pub use topk::{select_k_max, select_k_min};
