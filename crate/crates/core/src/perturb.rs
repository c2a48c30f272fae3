//! Controlled data constraints: Gaussian noise on images, camera translations
//! and camera rotations (as intrinsic XYZ Euler angles).

use std::f64::consts::PI;

use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{CameraPose, Dataset, ImageBuffer};
use crate::error::{Error, Result};
use crate::geometry::{orthonormalize, rot_x, rot_y, rot_z, Mat3, Vec3};
use crate::rng::{derive_seed, label, stream};

/// Pitch distance (radians) from ±90° below which Euler angles are degenerate.
pub const GIMBAL_TOL: f64 = 1e-6;

/// Noise configuration. Translation and rotation noise together form the
/// combined pose-noise setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    /// Image noise std in 8-bit intensity units.
    pub sigma_im: f64,
    /// Translation noise std in world units.
    pub sigma_t: f64,
    /// Rotation noise std per Euler angle, in degrees.
    pub sigma_r_deg: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            sigma_im: 0.0,
            sigma_t: 0.0,
            sigma_r_deg: 0.0,
            seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma_im", self.sigma_im),
            ("sigma_t", self.sigma_t),
            ("sigma_r_deg", self.sigma_r_deg),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be finite and ≥ 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn is_baseline(&self) -> bool {
        self.sigma_im == 0.0 && self.sigma_t == 0.0 && self.sigma_r_deg == 0.0
    }

    /// Applies image noise, then translation noise, then rotation noise, each
    /// from its own sub-stream of `seed`.
    pub fn apply(&self, dataset: &Dataset) -> Result<Perturbed> {
        self.validate()?;
        let images = perturb_images(&dataset.images(), self.sigma_im, derive_seed(self.seed, label::IMAGE));
        let poses = perturb_translation(&dataset.poses(), self.sigma_t, derive_seed(self.seed, label::TRANSLATION));
        let rotated = perturb_rotation(&poses, self.sigma_r_deg, derive_seed(self.seed, label::ROTATION));
        let dataset = dataset.with_images(images)?.with_poses(rotated.poses)?;
        Ok(Perturbed {
            dataset,
            gimbal_fallbacks: rotated
                .gimbal_fallback
                .iter()
                .enumerate()
                .filter_map(|(i, &f)| f.then_some(i))
                .collect(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct Perturbed {
    pub dataset: Dataset,
    /// Frames whose rotation was perturbed in axis-angle form.
    pub gimbal_fallbacks: Vec<usize>,
}

/// Adds `N(0, sigma_im/255)` to every channel in the `[0, 1]` domain and
/// clamps. Frame `i` draws from sub-stream `i` of `seed`.
pub fn perturb_images(images: &[ImageBuffer], sigma_im: f64, seed: u64) -> Vec<ImageBuffer> {
    if sigma_im == 0.0 {
        return images.to_vec();
    }
    let normal = Normal::new(0.0, sigma_im / 255.0).expect("finite sigma");
    images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let mut rng = stream(derive_seed(seed, i as u64));
            let pixels = img
                .pixels
                .iter()
                .map(|p| p.map(|c| (c + normal.sample(&mut rng)).clamp(0.0, 1.0)))
                .collect();
            ImageBuffer {
                width: img.width,
                height: img.height,
                pixels,
            }
        })
        .collect()
}

/// Adds independent `N(0, sigma_t)` noise to each translation component.
pub fn perturb_translation(poses: &[CameraPose], sigma_t: f64, seed: u64) -> Vec<CameraPose> {
    if sigma_t == 0.0 {
        return poses.to_vec();
    }
    poses
        .iter()
        .enumerate()
        .map(|(i, pose)| {
            let mut rng = stream(derive_seed(seed, i as u64));
            let mut noisy = pose.clone();
            for a in 0..3 {
                let n: f64 = StandardNormal.sample(&mut rng);
                noisy.translation[a] += sigma_t * n;
            }
            noisy
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct RotationNoise {
    pub poses: Vec<CameraPose>,
    /// `true` where the pose sat at gimbal lock and axis-angle noise was used.
    pub gimbal_fallback: Vec<bool>,
}

/// Adds independent `N(0, sigma_r_deg)` noise to the intrinsic XYZ Euler
/// angles of each rotation.
pub fn perturb_rotation(poses: &[CameraPose], sigma_r_deg: f64, seed: u64) -> RotationNoise {
    if sigma_r_deg == 0.0 {
        return RotationNoise {
            poses: poses.to_vec(),
            gimbal_fallback: vec![false; poses.len()],
        };
    }
    let sigma = sigma_r_deg.to_radians();
    let mut fallback = Vec::with_capacity(poses.len());
    let poses = poses
        .iter()
        .enumerate()
        .map(|(i, pose)| {
            let mut rng = stream(derive_seed(seed, i as u64));
            let mut n = [0.0; 3];
            for v in &mut n {
                *v = sigma * Distribution::<f64>::sample(&StandardNormal, &mut rng);
            }
            let mut noisy = pose.clone();
            noisy.rotation = match euler_xyz(&pose.rotation) {
                Some([a, b, c]) => {
                    fallback.push(false);
                    orthonormalize(&from_euler_xyz([a + n[0], b + n[1], c + n[2]]))
                }
                None => {
                    fallback.push(true);
                    orthonormalize(&(pose.rotation * axis_angle(Vec3::from(n))))
                }
            };
            noisy
        })
        .collect();
    RotationNoise {
        poses,
        gimbal_fallback: fallback,
    }
}

/// Intrinsic XYZ Euler angles `[a, b, c]` with `R = Rx(a)·Ry(b)·Rz(c)`, or
/// `None` within [`GIMBAL_TOL`] of gimbal lock.
pub fn euler_xyz(r: &Mat3) -> Option<[f64; 3]> {
    let b = r[(0, 2)].clamp(-1.0, 1.0).asin();
    if (b.abs() - 0.5 * PI).abs() <= GIMBAL_TOL {
        return None;
    }
    let a = (-r[(1, 2)]).atan2(r[(2, 2)]);
    let c = (-r[(0, 1)]).atan2(r[(0, 0)]);
    Some([a, b, c])
}

pub fn from_euler_xyz([a, b, c]: [f64; 3]) -> Mat3 {
    rot_x(a) * rot_y(b) * rot_z(c)
}

fn axis_angle(w: Vec3) -> Mat3 {
    let theta = w.norm();
    if theta == 0.0 {
        return Mat3::identity();
    }
    nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(w), theta).into_inner()
}

/// Converts a translation noise level given as a percentage of the rig
/// circumference into world units.
pub fn percent_of_circumference(percent: f64, rig_radius: f64) -> f64 {
    percent / 100.0 * 2.0 * PI * rig_radius
}
