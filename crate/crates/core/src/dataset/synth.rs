//! Analytic ground-truth scenes and their rendered datasets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{CameraPose, Dataset, Frame};
use crate::error::{Error, Result};
use crate::field::{render_image, VoxelField};
use crate::geometry::{Cube, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Sphere { radius: f64 },
    Box { half_extents: [f64; 3] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub center: [f64; 3],
    pub density: f64,
    pub albedo: [f64; 3],
}

impl Primitive {
    pub fn center(&self) -> Vec3 {
        Vec3::from(self.center)
    }

    /// Exact signed distance to the primitive's boundary (negative inside).
    pub fn signed_distance(&self, x: &Vec3) -> f64 {
        let p = x - self.center();
        match self.shape {
            Shape::Sphere { radius } => p.norm() - radius,
            Shape::Box { half_extents } => {
                let q = p.abs() - Vec3::from(half_extents);
                q.map(|v| v.max(0.0)).norm() + q.max().min(0.0)
            }
        }
    }

    pub fn contains(&self, x: &Vec3) -> bool {
        self.signed_distance(x) <= 0.0
    }

    /// Axis-aligned bounds as (min, max).
    pub fn aabb(&self) -> (Vec3, Vec3) {
        let half = match self.shape {
            Shape::Sphere { radius } => Vec3::repeat(radius),
            Shape::Box { half_extents } => Vec3::from(half_extents),
        };
        (self.center() - half, self.center() + half)
    }
}

/// Union of primitives with additive density.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthField {
    pub primitives: Vec<Primitive>,
}

impl GroundTruthField {
    pub fn new(primitives: Vec<Primitive>) -> Result<Self> {
        for (i, p) in primitives.iter().enumerate() {
            let sizes_ok = match p.shape {
                Shape::Sphere { radius } => radius.is_finite() && radius > 0.0,
                Shape::Box { half_extents } => half_extents.iter().all(|h| h.is_finite() && *h > 0.0),
            };
            if !sizes_ok || !(p.density.is_finite() && p.density >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "primitive {i} needs positive size and finite non-negative density"
                )));
            }
            if p.center.iter().chain(&p.albedo).any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("primitive {i} has non-finite values")));
            }
        }
        Ok(GroundTruthField { primitives })
    }

    /// Signed distance to the nearest primitive boundary, as the minimum of
    /// the per-primitive distances. `+∞` for an empty scene.
    pub fn signed_distance(&self, x: &Vec3) -> f64 {
        self.primitives
            .iter()
            .map(|p| p.signed_distance(x))
            .fold(f64::INFINITY, f64::min)
    }

    /// Albedo of the primitive whose boundary is closest (deepest inside).
    pub fn albedo_near(&self, x: &Vec3) -> [f64; 3] {
        self.primitives
            .iter()
            .map(|p| (p.signed_distance(x), p.albedo))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map_or([0.0; 3], |(_, a)| a)
    }
}

/// Ground-truth density: sum over the primitives containing `x`.
pub fn gt_density_at(gt: &GroundTruthField, x: &Vec3) -> f64 {
    gt.primitives
        .iter()
        .filter(|p| p.contains(x))
        .map(|p| p.density)
        .sum()
}

/// Cube around all primitives: centered on their joint bounds, with edge
/// 1.25× the largest extent (≥ 12.5 % margin per side). A unit-radius cube at
/// the origin for an empty scene.
pub fn scene_bbox_for(gt: &GroundTruthField) -> Cube {
    if gt.primitives.is_empty() {
        return Cube::centered(Vec3::zeros(), 2.0).expect("valid cube");
    }
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in &gt.primitives {
        let (a, b) = p.aabb();
        lo = lo.inf(&a);
        hi = hi.sup(&b);
    }
    let extent = (hi - lo).max();
    Cube::centered(0.5 * (lo + hi), 1.25 * extent).expect("valid cube")
}

/// How ground-truth images are produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    /// Lattice resolution on which the analytic field is sampled.
    pub gt_res: usize,
    /// March step; defaults to `edge / (2·gt_res)`.
    pub step: Option<f64>,
    pub background: [f64; 3],
    /// Round images to 8-bit levels, as if read from PNG files.
    pub quantize: bool,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            gt_res: 96,
            step: None,
            background: [1.0, 1.0, 1.0],
            quantize: true,
        }
    }
}

/// Samples the analytic field on a fine lattice and renders one image per
/// rig pose with the reference renderer.
pub fn generate_synthetic_scene(
    gt: &GroundTruthField,
    rig: &[CameraPose],
    cfg: &RenderConfig,
) -> Result<Dataset> {
    if rig.is_empty() {
        return Err(Error::NoFrames);
    }
    let bbox = scene_bbox_for(gt);
    let field = voxelize(gt, bbox, cfg.gt_res)?;
    let step = cfg.step.unwrap_or(bbox.edge / (2 * cfg.gt_res) as f64);
    let frames = rig
        .iter()
        .map(|pose| {
            let mut image = render_image(&field, pose, step, cfg.background);
            if cfg.quantize {
                image.quantize_8bit();
            }
            Frame {
                pose: pose.clone(),
                image,
            }
        })
        .collect();
    Dataset::new(frames, bbox, cfg.background)
}

/// Ground truth sampled at the nodes of a `res³` lattice over `bbox`.
pub(crate) fn voxelize(gt: &GroundTruthField, bbox: Cube, res: usize) -> Result<VoxelField> {
    let mut field = VoxelField::constant(bbox, res, 0.0, [0.0; 3])?;
    for k in 0..res {
        for j in 0..res {
            for i in 0..res {
                let x = bbox.node_position(res, i, j, k);
                let n = field.index(i, j, k);
                field.density_raw[n] = gt_density_at(gt, &x);
                field.color[n] = gt.albedo_near(&x);
            }
        }
    }
    Ok(field)
}

/// Built-in desk scenes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenePreset {
    /// One opaque sphere at the origin.
    Sphere,
    /// A sphere with a box wall partially hiding it.
    SphereOccluder,
}

impl ScenePreset {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScenePreset::Sphere => "sphere",
            ScenePreset::SphereOccluder => "sphere-occluder",
        }
    }

    /// Scenes are sized for a camera rig of radius about 1.
    pub fn ground_truth(&self) -> GroundTruthField {
        let sphere = Primitive {
            shape: Shape::Sphere { radius: 0.125 },
            center: [0.0, 0.0, 0.0],
            density: 120.0,
            albedo: [0.85, 0.35, 0.2],
        };
        let primitives = match self {
            ScenePreset::Sphere => vec![sphere],
            ScenePreset::SphereOccluder => vec![
                Primitive {
                    center: [0.0, 0.05, 0.0125],
                    shape: Shape::Sphere { radius: 0.1125 },
                    ..sphere
                },
                Primitive {
                    shape: Shape::Box {
                        half_extents: [0.125, 0.025, 0.075],
                    },
                    center: [0.0, -0.125, -0.0375],
                    density: 120.0,
                    albedo: [0.2, 0.45, 0.8],
                },
            ],
        };
        GroundTruthField { primitives }
    }
}

impl fmt::Display for ScenePreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenePreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(ScenePreset::Sphere),
            "sphere-occluder" | "sphere_occluder" => Ok(ScenePreset::SphereOccluder),
            _ => Err(Error::InvalidArgument(format!("unknown scene preset '{s}'"))),
        }
    }
}
