//! Metrics, gradient checking and checkpoints.

mod checkpoint;
mod gradcheck;
mod metrics;

pub use checkpoint::{
    config_hash, Checkpoint, CheckpointMeta, ModuleKind, CHECKPOINT_SCHEMA_VERSION,
};
pub use gradcheck::{gradcheck, gradcheck_params, GradcheckConfig, GradcheckReport};
pub use metrics::{l1_metric, ssim, MetricReport, Region, SSIM_K1, SSIM_K2, SSIM_WINDOW};
