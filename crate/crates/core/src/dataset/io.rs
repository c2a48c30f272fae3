//! `scene.json` manifest plus 8-bit PNG frames.
//!
//! The manifest follows the `camera_angle_x` + per-frame `transform_matrix`
//! layout used by the public NeRF-synthetic scenes, so those load unmodified.
//! `bbox` and `background` are optional extensions.

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, RgbImage};
use serde::{Deserialize, Serialize};

use super::{CameraPose, Dataset, Frame, GroundTruthField, ImageBuffer, Intrinsics};
use crate::error::{Error, Result};
use crate::geometry::{orthonormality_error, orthonormalize, Cube, Mat3, Vec3};

pub const MANIFEST_NAME: &str = "scene.json";
pub const GROUND_TRUTH_NAME: &str = "ground_truth.json";

/// Largest rotation defect repaired on load; anything worse is rejected.
const LOAD_REPAIR_TOL: f64 = 1e-6;

const DEFAULT_BBOX: Cube = Cube {
    min: [-1.5, -1.5, -1.5],
    edge: 3.0,
};
const DEFAULT_BACKGROUND: [f64; 3] = [1.0, 1.0, 1.0];

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    camera_angle_x: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    background: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bbox: Option<BboxEntry>,
    frames: Vec<FrameEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BboxEntry {
    min: [f64; 3],
    edge: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct FrameEntry {
    file_path: String,
    transform_matrix: Vec<Vec<f64>>,
}

fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_NAME)
    } else {
        path.to_path_buf()
    }
}

/// Loads a dataset from a directory holding `scene.json` (or from the
/// manifest file itself).
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let manifest_file = manifest_path(path);
    let root = manifest_file.parent().unwrap_or(Path::new(".")).to_path_buf();
    let text = fs::read_to_string(&manifest_file).map_err(|e| Error::io(&manifest_file, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::malformed(&manifest_file, e.to_string()))?;

    let background = manifest.background.unwrap_or(DEFAULT_BACKGROUND);
    let bbox = match manifest.bbox {
        Some(b) => Cube::new(b.min, b.edge)?,
        None => DEFAULT_BBOX,
    };
    if manifest.frames.is_empty() {
        return Err(Error::NoFrames);
    }

    let mut frames = Vec::with_capacity(manifest.frames.len());
    for (idx, entry) in manifest.frames.iter().enumerate() {
        let (rotation, translation) = parse_transform(&entry.transform_matrix)
            .map_err(|msg| Error::malformed(&manifest_file, format!("frame {idx}: {msg}")))?;
        let rotation = repair_rotation(rotation)?;

        let image_path = resolve_image(&root, &entry.file_path);
        let image = read_png(&image_path, background)?;
        let intrinsics = Intrinsics::from_angle_x(manifest.camera_angle_x, image.width, image.height);
        let pose = CameraPose::new(rotation, translation, intrinsics)?;
        frames.push(Frame { pose, image });
    }
    Dataset::new(frames, bbox, background)
}

fn parse_transform(m: &[Vec<f64>]) -> std::result::Result<(Mat3, Vec3), String> {
    if m.len() != 4 || m.iter().any(|row| row.len() != 4) {
        return Err("transform_matrix must be 4×4".into());
    }
    if m.iter().flatten().any(|v| !v.is_finite()) {
        return Err("transform_matrix contains non-finite values".into());
    }
    let r = Mat3::new(
        m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
    );
    Ok((r, Vec3::new(m[0][3], m[1][3], m[2][3])))
}

fn repair_rotation(r: Mat3) -> Result<Mat3> {
    let det = r.determinant();
    if det < 0.0 {
        return Err(Error::ImproperRotation { det });
    }
    let deviation = orthonormality_error(&r).max((det - 1.0).abs());
    if deviation > LOAD_REPAIR_TOL {
        return Err(Error::NotOrthonormal { deviation });
    }
    if deviation > super::ROTATION_TOL {
        Ok(orthonormalize(&r))
    } else {
        Ok(r)
    }
}

fn resolve_image(root: &Path, file_path: &str) -> PathBuf {
    let p = root.join(file_path);
    if p.extension().is_none() {
        p.with_extension("png")
    } else {
        p
    }
}

fn read_png(path: &Path, background: [f64; 3]) -> Result<ImageBuffer> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels = if img.color().has_alpha() {
        // composite straight alpha over the scene background
        img.to_rgba8()
            .pixels()
            .map(|p| {
                let a = p[3] as f64 / 255.0;
                std::array::from_fn(|c| {
                    let v = a * (p[c] as f64 / 255.0) + (1.0 - a) * background[c];
                    v.clamp(0.0, 1.0)
                })
            })
            .collect()
    } else {
        img.to_rgb8()
            .pixels()
            .map(|p| std::array::from_fn(|c| p[c] as f64 / 255.0))
            .collect()
    };
    ImageBuffer::from_pixels(w, h, pixels)
}

/// Loads one PNG; transparent pixels are composited over `background`.
pub fn load_image(path: &Path, background: [f64; 3]) -> Result<ImageBuffer> {
    read_png(path, background)
}

pub(crate) fn to_rgb8(img: &ImageBuffer) -> RgbImage {
    let mut out = RgbImage::new(img.width as u32, img.height as u32);
    for (dst, src) in out.pixels_mut().zip(&img.pixels) {
        for c in 0..3 {
            dst[c] = (src[c] * 255.0).round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}

pub(crate) fn write_png(img: &ImageBuffer, path: &Path) -> Result<()> {
    DynamicImage::ImageRgb8(to_rgb8(img))
        .save(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Writes `scene.json` plus one PNG per frame under `dir`.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    let first = dataset.frames.first().ok_or(Error::NoFrames)?;
    let images_dir = dir.join("images");
    fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;

    let mut entries = Vec::with_capacity(dataset.frames.len());
    for (i, frame) in dataset.frames.iter().enumerate() {
        let rel = format!("images/frame_{i:04}.png");
        write_png(&frame.image, &dir.join(&rel))?;
        entries.push(FrameEntry {
            file_path: rel,
            transform_matrix: frame.pose.to_matrix().iter().map(|r| r.to_vec()).collect(),
        });
    }
    let manifest = Manifest {
        camera_angle_x: first.pose.intrinsics().angle_x(),
        background: Some(dataset.background),
        bbox: Some(BboxEntry {
            min: dataset.scene_bbox.min,
            edge: dataset.scene_bbox.edge,
        }),
        frames: entries,
    };
    let path = dir.join(MANIFEST_NAME);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Writes the analytic scene description next to a generated dataset.
pub fn save_ground_truth(gt: &GroundTruthField, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(GROUND_TRUTH_NAME);
    let text = serde_json::to_string_pretty(gt).expect("ground truth serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Reads a ground-truth sidecar from a dataset directory or the file itself.
pub fn load_ground_truth(path: &Path) -> Result<GroundTruthField> {
    let path = if path.is_dir() { path.join(GROUND_TRUTH_NAME) } else { path.to_path_buf() };
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let gt: GroundTruthField = serde_json::from_str(&text).map_err(|e| Error::malformed(&path, e.to_string()))?;
    GroundTruthField::new(gt.primitives).map_err(|e| Error::malformed(&path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{camera_rig, RigKind};

    fn write_manifest(dir: &Path, matrix: serde_json::Value, img: (u32, u32)) {
        let json = serde_json::json!({
            "camera_angle_x": 0.69,
            "frames": [{ "file_path": "./white", "transform_matrix": matrix }]
        });
        fs::write(dir.join(MANIFEST_NAME), json.to_string()).unwrap();
        RgbImage::from_pixel(img.0, img.1, image::Rgb([255, 255, 255]))
            .save(dir.join("white.png"))
            .unwrap();
    }

    fn identity() -> serde_json::Value {
        serde_json::json!([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]])
    }

    #[test]
    fn loads_identity_white_frame() {
        let tmp = tempfile::tempdir().unwrap();
        write_manifest(tmp.path(), identity(), (2, 2));
        let ds = load_dataset(tmp.path()).unwrap();
        assert_eq!(ds.frames.len(), 1);
        assert!(ds.frames[0].image.pixels.iter().all(|p| *p == [1.0, 1.0, 1.0]));
        assert_eq!(ds.frames[0].pose.rotation, Mat3::identity());
        assert_eq!(ds.scene_bbox, DEFAULT_BBOX);
    }

    #[test]
    fn reflection_is_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let m = serde_json::json!([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, -1, 0], [0, 0, 0, 1]]);
        write_manifest(tmp.path(), m, (2, 2));
        let err = load_dataset(tmp.path()).unwrap_err();
        assert!(err.to_string().contains("improper rotation"), "{err}");
    }

    #[test]
    fn non_square_matrix_is_malformed() {
        let tmp = tempfile::tempdir().unwrap();
        let m = serde_json::json!([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0]]);
        write_manifest(tmp.path(), m, (2, 2));
        assert!(matches!(load_dataset(tmp.path()), Err(Error::Malformed { .. })));
    }

    #[test]
    fn slightly_off_rotation_is_repaired_and_bad_one_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let m = serde_json::json!([[1, 1e-8, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]]);
        write_manifest(tmp.path(), m, (2, 2));
        let ds = load_dataset(tmp.path()).unwrap();
        assert!(orthonormality_error(&ds.frames[0].pose.rotation) < 1e-12);

        let m = serde_json::json!([[1, 1e-3, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]]);
        write_manifest(tmp.path(), m, (2, 2));
        assert!(matches!(load_dataset(tmp.path()), Err(Error::NotOrthonormal { .. })));
    }

    #[test]
    fn missing_manifest_is_io_error() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(tmp.path()), Err(Error::Io { .. })));
    }

    #[test]
    fn mismatched_image_sizes_are_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let json = serde_json::json!({
            "camera_angle_x": 0.69,
            "frames": [
                { "file_path": "a.png", "transform_matrix": identity() },
                { "file_path": "b.png", "transform_matrix": identity() }
            ]
        });
        fs::write(tmp.path().join(MANIFEST_NAME), json.to_string()).unwrap();
        RgbImage::new(2, 2).save(tmp.path().join("a.png")).unwrap();
        RgbImage::new(3, 2).save(tmp.path().join("b.png")).unwrap();
        assert!(matches!(load_dataset(tmp.path()), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn rgba_is_composited_over_background() {
        let tmp = tempfile::tempdir().unwrap();
        let json = serde_json::json!({
            "camera_angle_x": 0.69,
            "background": [0.0, 0.0, 1.0],
            "frames": [{ "file_path": "a", "transform_matrix": identity() }]
        });
        fs::write(tmp.path().join(MANIFEST_NAME), json.to_string()).unwrap();
        image::RgbaImage::from_pixel(1, 1, image::Rgba([255, 0, 0, 0]))
            .save(tmp.path().join("a.png"))
            .unwrap();
        let ds = load_dataset(tmp.path()).unwrap();
        assert_eq!(ds.frames[0].image.pixels[0], [0.0, 0.0, 1.0]);
    }

    fn gray_dataset(n: usize) -> Dataset {
        let intr = Intrinsics::from_angle_x(0.69, 5, 3);
        let poses = camera_rig(RigKind::FullSphere, n, 4.0, Vec3::zeros(), intr).unwrap();
        let frames = poses
            .into_iter()
            .enumerate()
            .map(|(i, pose)| {
                let v = (i * 10 % 256) as f64 / 255.0;
                Frame { pose, image: ImageBuffer::filled(5, 3, [v, 0.5_f64.min(v + 0.1), 1.0]) }
            })
            .map(|mut f| {
                f.image.quantize_8bit();
                f
            })
            .collect();
        Dataset::new(frames, Cube::new([-1.0; 3], 2.0).unwrap(), [0.2, 0.4, 0.6]).unwrap()
    }

    #[test]
    fn save_writes_one_manifest_and_one_png_per_frame() {
        let tmp = tempfile::tempdir().unwrap();
        save_dataset(&gray_dataset(1), tmp.path()).unwrap();
        assert!(tmp.path().join(MANIFEST_NAME).is_file());
        assert_eq!(fs::read_dir(tmp.path().join("images")).unwrap().count(), 1);

        let tmp = tempfile::tempdir().unwrap();
        save_dataset(&gray_dataset(20), tmp.path()).unwrap();
        let m: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(tmp.path().join(MANIFEST_NAME)).unwrap()).unwrap();
        let frames = m["frames"].as_array().unwrap();
        assert_eq!(frames.len(), 20);
        for (i, f) in frames.iter().enumerate() {
            assert_eq!(f["file_path"], format!("images/frame_{i:04}.png"));
        }
    }

    #[test]
    fn save_rejects_empty_dataset() {
        let tmp = tempfile::tempdir().unwrap();
        let mut ds = gray_dataset(1);
        ds.frames.clear();
        assert!(matches!(save_dataset(&ds, tmp.path()), Err(Error::NoFrames)));
    }

    #[test]
    fn round_trip_preserves_poses_and_pixels() {
        let tmp = tempfile::tempdir().unwrap();
        let ds = gray_dataset(7);
        save_dataset(&ds, tmp.path()).unwrap();
        let back = load_dataset(tmp.path()).unwrap();
        assert_eq!(back.scene_bbox, ds.scene_bbox);
        assert_eq!(back.background, ds.background);
        for (a, b) in ds.frames.iter().zip(&back.frames) {
            assert!((a.pose.rotation - b.pose.rotation).abs().max() <= 1e-9);
            assert!((a.pose.translation - b.pose.translation).abs().max() <= 1e-9);
            assert!((a.pose.focal_px - b.pose.focal_px).abs() <= 1e-9);
            assert_eq!(a.image, b.image);
        }
    }

    #[test]
    fn ground_truth_sidecar_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let gt = crate::dataset::ScenePreset::SphereOccluder.ground_truth();
        save_ground_truth(&gt, tmp.path()).unwrap();
        assert_eq!(load_ground_truth(tmp.path()).unwrap(), gt);
        fs::write(tmp.path().join(GROUND_TRUTH_NAME), "{\"primitives\": 3}").unwrap();
        assert!(matches!(load_ground_truth(tmp.path()), Err(Error::Malformed { .. })));
    }
}
