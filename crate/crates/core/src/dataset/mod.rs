//! Scene data model: posed cameras, images, datasets and the analytic
//! ground-truth field used as an oracle.

mod io;
mod rig;
mod synth;

use crate::error::{Error, Result};
use crate::geometry::{orthonormality_error, Cube, Mat3, Vec3};

pub use io::{
    load_dataset, load_ground_truth, load_image, save_dataset, save_ground_truth, GROUND_TRUTH_NAME, MANIFEST_NAME,
};
pub use rig::{camera_rig, RigKind};
pub use synth::{
    generate_synthetic_scene, gt_density_at, scene_bbox_for, GroundTruthField, Primitive,
    RenderConfig, ScenePreset, Shape,
};

/// Tolerance for the orthonormality and determinant checks on a pose.
pub const ROTATION_TOL: f64 = 1e-9;

/// Pinhole intrinsics shared by every frame of a rig.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub focal_px: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    /// Focal length from the horizontal field of view, `w / (2·tan(angle/2))`.
    pub fn from_angle_x(camera_angle_x: f64, width: usize, height: usize) -> Self {
        Intrinsics {
            focal_px: width as f64 / (2.0 * (0.5 * camera_angle_x).tan()),
            width,
            height,
        }
    }

    pub fn angle_x(&self) -> f64 {
        2.0 * (self.width as f64 / (2.0 * self.focal_px)).atan()
    }
}

/// World-from-camera rigid transform plus pinhole intrinsics.
///
/// Cameras follow the OpenGL convention: `+x` right, `+y` up, looking down `−z`.
/// `translation` is the camera center in world coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraPose {
    pub rotation: Mat3,
    pub translation: Vec3,
    pub focal_px: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraPose {
    pub fn new(rotation: Mat3, translation: Vec3, intrinsics: Intrinsics) -> Result<Self> {
        let pose = CameraPose {
            rotation,
            translation,
            focal_px: intrinsics.focal_px,
            width: intrinsics.width,
            height: intrinsics.height,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal_px.is_finite() && self.focal_px > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "focal length must be positive, got {}",
                self.focal_px
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument("image size must be at least 1×1".into()));
        }
        if self.rotation.iter().chain(self.translation.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("pose contains non-finite values".into()));
        }
        let det = self.rotation.determinant();
        if det < 0.0 {
            return Err(Error::ImproperRotation { det });
        }
        let deviation = orthonormality_error(&self.rotation).max((det - 1.0).abs());
        if deviation > ROTATION_TOL {
            return Err(Error::NotOrthonormal { deviation });
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics {
            focal_px: self.focal_px,
            width: self.width,
            height: self.height,
        }
    }

    pub fn center(&self) -> Vec3 {
        self.translation
    }

    /// World-space ray through the center of pixel `(px, py)`; `py` counts
    /// rows from the top of the image.
    pub fn pixel_ray(&self, px: usize, py: usize) -> (Vec3, Vec3) {
        let x = (px as f64 + 0.5 - 0.5 * self.width as f64) / self.focal_px;
        let y = -(py as f64 + 0.5 - 0.5 * self.height as f64) / self.focal_px;
        let d = (self.rotation * Vec3::new(x, y, -1.0)).normalize();
        (self.translation, d)
    }

    /// 4×4 world-from-camera matrix, row-major.
    pub fn to_matrix(&self) -> [[f64; 4]; 4] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            [r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x],
            [r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y],
            [r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }
}

/// Row-major RGB image with channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[f64; 3]>,
}

impl ImageBuffer {
    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        ImageBuffer {
            width,
            height,
            pixels: vec![rgb; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<[f64; 3]>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} pixels for a {width}×{height} image",
                pixels.len()
            )));
        }
        if pixels.iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidArgument("pixel channel outside [0, 1]".into()));
        }
        Ok(ImageBuffer {
            width,
            height,
            pixels,
        })
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        self.pixels[y * self.width + x]
    }

    /// Rounds every channel to the nearest 8-bit level.
    pub fn quantize_8bit(&mut self) {
        for c in self.pixels.iter_mut().flatten() {
            *c = (*c * 255.0).round().clamp(0.0, 255.0) / 255.0;
        }
    }

    pub fn same_size(&self, other: &ImageBuffer) -> bool {
        self.width == other.width && self.height == other.height
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub pose: CameraPose,
    pub image: ImageBuffer,
}

/// Posed images of one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub frames: Vec<Frame>,
    pub scene_bbox: Cube,
    pub background: [f64; 3],
}

impl Dataset {
    pub fn new(frames: Vec<Frame>, scene_bbox: Cube, background: [f64; 3]) -> Result<Self> {
        let ds = Dataset {
            frames,
            scene_bbox,
            background,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self.frames.first().ok_or(Error::NoFrames)?;
        let (w, h) = (first.image.width, first.image.height);
        for (i, f) in self.frames.iter().enumerate() {
            if f.image.width != w || f.image.height != h {
                return Err(Error::DimensionMismatch(format!(
                    "frame {i} is {}×{}, frame 0 is {w}×{h}",
                    f.image.width, f.image.height
                )));
            }
            if f.pose.width != w || f.pose.height != h {
                return Err(Error::DimensionMismatch(format!(
                    "frame {i}: camera is {}×{} but image is {w}×{h}",
                    f.pose.width, f.pose.height
                )));
            }
        }
        if !(self.scene_bbox.edge.is_finite() && self.scene_bbox.edge > 0.0) {
            return Err(Error::InvalidArgument("scene bbox edge must be positive".into()));
        }
        Ok(())
    }

    pub fn poses(&self) -> Vec<CameraPose> {
        self.frames.iter().map(|f| f.pose.clone()).collect()
    }

    pub fn images(&self) -> Vec<ImageBuffer> {
        self.frames.iter().map(|f| f.image.clone()).collect()
    }

    /// Same images with replaced poses (length must match).
    pub fn with_poses(&self, poses: Vec<CameraPose>) -> Result<Dataset> {
        if poses.len() != self.frames.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} poses for {} frames",
                poses.len(),
                self.frames.len()
            )));
        }
        let frames = self
            .frames
            .iter()
            .zip(poses)
            .map(|(f, pose)| Frame {
                pose,
                image: f.image.clone(),
            })
            .collect();
        Dataset::new(frames, self.scene_bbox, self.background)
    }

    /// Same poses with replaced images (length must match).
    pub fn with_images(&self, images: Vec<ImageBuffer>) -> Result<Dataset> {
        if images.len() != self.frames.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} images for {} frames",
                images.len(),
                self.frames.len()
            )));
        }
        let frames = self
            .frames
            .iter()
            .zip(images)
            .map(|(f, image)| Frame {
                pose: f.pose.clone(),
                image,
            })
            .collect();
        Dataset::new(frames, self.scene_bbox, self.background)
    }

    pub fn pixel_count(&self) -> usize {
        self.frames.iter().map(|f| f.image.pixels.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rot_x;

    fn intr() -> Intrinsics {
        Intrinsics::from_angle_x(0.7, 4, 4)
    }

    #[test]
    fn rejects_reflection() {
        let r = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        let err = CameraPose::new(r, Vec3::zeros(), intr()).unwrap_err();
        assert!(err.to_string().contains("improper rotation"));
    }

    #[test]
    fn rejects_skewed_rotation() {
        let mut r = Mat3::identity();
        r[(0, 1)] = 1e-3;
        assert!(matches!(
            CameraPose::new(r, Vec3::zeros(), intr()),
            Err(Error::NotOrthonormal { .. })
        ));
    }

    #[test]
    fn center_pixel_looks_down_minus_z() {
        let pose = CameraPose::new(Mat3::identity(), Vec3::zeros(), Intrinsics::from_angle_x(0.7, 3, 3)).unwrap();
        let (_, d) = pose.pixel_ray(1, 1);
        assert!((d - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-15);
        // top row points up
        let (_, up) = pose.pixel_ray(1, 0);
        assert!(up.y > 0.0);
    }

    #[test]
    fn angle_focal_round_trip() {
        let i = Intrinsics::from_angle_x(0.6911112, 800, 800);
        assert!((i.angle_x() - 0.6911112).abs() < 1e-12);
        let pose = CameraPose::new(rot_x(0.2), Vec3::new(1.0, 2.0, 3.0), i).unwrap();
        assert_eq!(pose.to_matrix()[3], [0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn dataset_requires_frames_and_consistent_sizes() {
        let bbox = Cube::new([0.0; 3], 1.0).unwrap();
        assert!(matches!(Dataset::new(vec![], bbox, [0.0; 3]), Err(Error::NoFrames)));
        let p = CameraPose::new(Mat3::identity(), Vec3::zeros(), intr()).unwrap();
        let mut p2 = p.clone();
        p2.width = 2;
        let frames = vec![
            Frame { pose: p, image: ImageBuffer::filled(4, 4, [0.0; 3]) },
            Frame { pose: p2, image: ImageBuffer::filled(2, 4, [0.0; 3]) },
        ];
        assert!(matches!(
            Dataset::new(frames, bbox, [0.0; 3]),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn quantize_is_idempotent() {
        let mut img = ImageBuffer::from_pixels(2, 1, vec![[0.1234, 0.5, 1.0], [0.0, 0.999, 0.3333]]).unwrap();
        img.quantize_8bit();
        let once = img.clone();
        img.quantize_8bit();
        assert_eq!(once, img);
    }
}
