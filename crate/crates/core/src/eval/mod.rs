//! Detection decoding, rotated-box IoU, average precision and the
//! experiment grids.

mod ap;
mod detect;
mod experiment;
mod iou;

pub use ap::{average_precision, recall};
pub use detect::{decode_detections, DecodeConfig, Detection};
pub use experiment::{
    ground_truth, run_experiment, run_experiment_on, run_seed, scenes_for, EvalReport, ExperimentConfig, GridSpec, NoiseLevel, ReportRow,
    Scenario, SeedResult, SweepAxis, IOU_THRESHOLDS,
};
pub use iou::bev_iou;
