//! Metrics and the synthetic visuo-motor dataset.

mod dataset;
mod eval;
pub mod io;
mod metrics;
mod scene;

pub use dataset::{
    denormalize_degrees, episode_scenes, generate_dataset, normalize_angle, script_episode, train_count, Dataset,
    DatasetConfig, RawSequence, JOINTS, MOTOR_DIM,
};
pub use metrics::{capped, joint_mse, psnr, psnr_from_mse, PSNR_CAP_DB};
pub use scene::{inverse_kinematics, wrap_angle, SyntheticScene};
pub use eval::{evaluate_pipeline, rollout_sequence, EvalSummary, ImageReconstructor};
