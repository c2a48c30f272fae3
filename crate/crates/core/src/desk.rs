//! The small reference setup used by the acceptance suite and the examples:
//! a synthetic scene rendered from 20 cameras at 64×64 pixels, fitted by a
//! five-member ensemble of 32³ fields and read out on a 64³ grid.

use std::path::Path;

use crate::config::RunConfig;
use crate::dataset::{
    camera_rig, generate_synthetic_scene, scene_bbox_for, Dataset, GroundTruthField, Intrinsics, RenderConfig, RigKind,
    ScenePreset,
};
use crate::error::Result;
use crate::trainer::TrainConfig;

/// Camera distance from the scene center.
pub const RIG_RADIUS: f64 = 1.0;
pub const CAMERA_ANGLE_X: f64 = 0.69;
pub const IMAGE_SIZE: usize = 64;
pub const VIEWS: usize = 20;
pub const MEMBERS: usize = 5;
pub const FIELD_RES: usize = 32;
pub const GRID_RES: usize = 64;
pub const STEPS: usize = 2000;

pub fn intrinsics() -> Intrinsics {
    Intrinsics::from_angle_x(CAMERA_ANGLE_X, IMAGE_SIZE, IMAGE_SIZE)
}

/// Renders `preset` from a `views`-camera rig of the given kind.
pub fn dataset(preset: ScenePreset, rig: RigKind, views: usize) -> Result<(Dataset, GroundTruthField)> {
    let gt = preset.ground_truth();
    let look_at = scene_bbox_for(&gt).center();
    let poses = camera_rig(rig, views, RIG_RADIUS, look_at, intrinsics())?;
    let ds = generate_synthetic_scene(&gt, &poses, &RenderConfig::default())?;
    Ok((ds, gt))
}

pub fn train_config() -> TrainConfig {
    TrainConfig {
        steps: STEPS,
        field_res: FIELD_RES,
        ..TrainConfig::default()
    }
}

/// Desk run writing into `out_dir`; the dataset path is left for the caller.
pub fn run_config(out_dir: &Path) -> RunConfig {
    RunConfig {
        out_dir: out_dir.to_path_buf(),
        members: MEMBERS,
        grid_res: GRID_RES,
        train: train_config(),
        ..RunConfig::default()
    }
}
