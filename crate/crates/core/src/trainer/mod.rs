//! Fitting one voxel field to a dataset, and image-quality metrics.

mod adam;

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use adam::Adam;

use crate::dataset::{Dataset, ImageBuffer};
use crate::error::{Error, Result};
use crate::field::{render_image, trace_ray, FieldGrad, Ray, RayTape, VoxelField};
use crate::rng::{derive_seed, stream};

/// Sub-stream label for batch sampling, distinct from field initialization.
const BATCH_STREAM: u64 = 0xBA7C;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub rays_per_step: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Raw-density initialization range.
    pub init_lo: f64,
    pub init_hi: f64,
    pub seed: u64,
    /// Lattice nodes per axis of the fitted field.
    pub field_res: usize,
    /// March step; `None` means `edge / (2·field_res)`.
    pub step_size: Option<f64>,
    /// Loss logging interval in steps.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            rays_per_step: 1024,
            lr: 0.05,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            init_lo: -1.0,
            init_hi: 1.0,
            seed: 0,
            field_res: 32,
            step_size: None,
            log_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.steps == 0 {
            return bad("steps must be ≥ 1".into());
        }
        if self.rays_per_step == 0 {
            return bad("rays_per_step must be ≥ 1".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.init_lo.is_finite() && self.init_hi.is_finite() && self.init_lo <= self.init_hi) {
            return bad(format!(
                "init range must satisfy init_lo ≤ init_hi, got [{}, {}]",
                self.init_lo, self.init_hi
            ));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)".into());
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            return bad("adam_eps must be positive".into());
        }
        if self.field_res < 2 {
            return bad("field_res must be ≥ 2".into());
        }
        if let Some(s) = self.step_size {
            if !(s.is_finite() && s > 0.0) {
                return bad(format!("step_size must be positive, got {s}"));
            }
        }
        if self.log_every == 0 {
            return bad("log_every must be ≥ 1".into());
        }
        Ok(())
    }

    /// March step for a field trained on `dataset`.
    pub fn march_step(&self, dataset: &Dataset) -> f64 {
        self.step_size
            .unwrap_or(dataset.scene_bbox.edge / (2 * self.field_res) as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    pub wall_ms: f64,
}

/// Loss trace of one training run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    /// Writes `step,loss,wall_ms` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("step,loss,wall_ms\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{:.3}\n", r.step, r.loss, r.wall_ms));
        }
        fs::File::create(path)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(|e| Error::io(path, e))
    }
}

/// Initial field: raw density i.i.d. uniform in `[init_lo, init_hi]` drawn
/// from the `seed` stream, colors at 0.5.
pub fn init_field(dataset: &Dataset, cfg: &TrainConfig) -> Result<VoxelField> {
    let n = cfg.field_res.pow(3);
    let mut rng = stream(cfg.seed);
    let density = (0..n)
        .map(|_| {
            if cfg.init_lo == cfg.init_hi {
                cfg.init_lo
            } else {
                rng.random_range(cfg.init_lo..cfg.init_hi)
            }
        })
        .collect();
    VoxelField::new(dataset.scene_bbox, cfg.field_res, density, vec![[0.5; 3]; n])
}

/// Fits one field by Adam on the mean-squared photometric error of random
/// pixel batches.
pub fn train_member(dataset: &Dataset, cfg: &TrainConfig) -> Result<VoxelField> {
    train_member_logged(dataset, cfg).map(|(f, _)| f)
}

pub fn train_member_logged(dataset: &Dataset, cfg: &TrainConfig) -> Result<(VoxelField, TrainLog)> {
    cfg.validate()?;
    dataset.validate()?;
    let started = Instant::now();
    let mut field = init_field(dataset, cfg)?;
    let n = field.node_count();
    let step = cfg.march_step(dataset);
    let bg = dataset.background;
    let (w, h) = (dataset.frames[0].image.width, dataset.frames[0].image.height);
    let per_frame = w * h;
    let total = dataset.pixel_count();

    let mut grad = FieldGrad::zeros_like(&field);
    let mut tape = RayTape::new();
    let mut density_opt = Adam::new(n, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    let mut color_opt = Adam::new(3 * n, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    let mut log = TrainLog::default();
    let batch_seed = derive_seed(cfg.seed, BATCH_STREAM);
    let scale = 2.0 / (3 * cfg.rays_per_step) as f64;

    for it in 1..=cfg.steps {
        grad.clear();
        let mut rng = stream(derive_seed(batch_seed, it as u64));
        let mut sq_err = 0.0;
        for _ in 0..cfg.rays_per_step {
            let g = rng.random_range(0..total);
            let frame = &dataset.frames[g / per_frame];
            let p = g % per_frame;
            let target = frame.image.pixels[p];
            let (origin, dir) = frame.pose.pixel_ray(p % w, p / w);
            match Ray::clipped(&field, origin, dir) {
                Some(ray) => {
                    let out = trace_ray(&field, &ray, step, bg, &mut tape);
                    let mut d_rgb = [0.0; 3];
                    for ch in 0..3 {
                        let e = out.rgb[ch] - target[ch];
                        sq_err += e * e;
                        d_rgb[ch] = scale * e;
                    }
                    tape.backward(&field, d_rgb, &mut grad);
                }
                None => {
                    sq_err += (0..3).map(|ch| (bg[ch] - target[ch]).powi(2)).sum::<f64>();
                }
            }
        }
        let loss = sq_err / (3 * cfg.rays_per_step) as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                member: None,
                step: it,
                loss,
            });
        }
        if it == 1 || it % cfg.log_every == 0 || it == cfg.steps {
            log.rows.push(LogRow {
                step: it,
                loss,
                wall_ms: started.elapsed().as_secs_f64() * 1e3,
            });
        }

        density_opt.step(&mut field.density_raw, &grad.density);
        color_opt.step(field.color.as_flattened_mut(), grad.color.as_flattened());
        for c in field.color.as_flattened_mut() {
            *c = c.clamp(0.0, 1.0);
        }
        if field.density_raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                member: None,
                step: it,
                loss: f64::NAN,
            });
        }
    }
    Ok((field, log))
}

/// Mean squared error in the 8-bit domain (values scaled by 255).
pub fn mse(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    if !a.same_size(b) || a.pixels.len() != b.pixels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{}×{} vs {}×{}",
            a.width, a.height, b.width, b.height
        )));
    }
    if a.pixels.is_empty() {
        return Err(Error::EmptyInput("image has no pixels"));
    }
    let sum: f64 = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .flat_map(|(p, q)| (0..3).map(move |c| (255.0 * (p[c] - q[c])).powi(2)))
        .sum();
    Ok(sum / (3 * a.pixels.len()) as f64)
}

/// Peak signal-to-noise ratio `10·log10(255² / MSE)` in dB; `+∞` for
/// identical images.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    let e = mse(a, b)?;
    Ok(psnr_from_mse(e))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0 * 255.0 / mse).log10()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsnrSummary {
    pub per_view: Vec<f64>,
    /// Mean over finite views; `+∞` when every view is perfect.
    pub mean: f64,
    pub infinite_views: usize,
}

impl PsnrSummary {
    pub fn from_views(per_view: Vec<f64>) -> Self {
        let finite: Vec<f64> = per_view.iter().copied().filter(|v| v.is_finite()).collect();
        let infinite_views = per_view.len() - finite.len();
        let mean = if finite.is_empty() {
            f64::INFINITY
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        };
        PsnrSummary {
            per_view,
            mean,
            infinite_views,
        }
    }
}

/// PSNR of the field's renders against each training image.
pub fn mean_psnr(field: &VoxelField, dataset: &Dataset, step: f64) -> Result<PsnrSummary> {
    dataset.validate()?;
    let per_view = dataset
        .frames
        .iter()
        .map(|f| psnr(&render_image(field, &f.pose, step, dataset.background), &f.image))
        .collect::<Result<Vec<_>>>()?;
    Ok(PsnrSummary::from_views(per_view))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{camera_rig, Frame, Intrinsics, RigKind};
    use crate::geometry::{Cube, Vec3};

    fn img(w: usize, h: usize, f: impl FnMut(usize) -> [f64; 3]) -> ImageBuffer {
        ImageBuffer::from_pixels(w, h, (0..w * h).map(f).collect()).unwrap()
    }

    #[test]
    fn mse_basics() {
        let a = img(4, 3, |i| [i as f64 / 20.0, 0.5, 0.25]);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        let b = img(4, 3, |i| [i as f64 / 20.0 + 1.0 / 255.0, 0.5 + 1.0 / 255.0, 0.25 + 1.0 / 255.0]);
        assert!((mse(&a, &b).unwrap() - 1.0).abs() < 1e-9);
        let c = img(3, 4, |_| [0.0; 3]);
        assert!(matches!(mse(&a, &c), Err(Error::DimensionMismatch(_))));
        assert!(matches!(psnr(&a, &c), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn mse_matches_double_loop() {
        let mut rng = stream(3);
        let a = img(7, 5, |_| [rng.random(), rng.random(), rng.random()]);
        let mut rng = stream(4);
        let b = img(7, 5, |_| [rng.random(), rng.random(), rng.random()]);
        let mut acc = 0.0;
        for y in 0..5 {
            for x in 0..7 {
                for c in 0..3 {
                    let d = a.pixel(x, y)[c] * 255.0 - b.pixel(x, y)[c] * 255.0;
                    acc += d * d;
                }
            }
        }
        assert!((mse(&a, &b).unwrap() - acc / 105.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_reference_values() {
        let black = img(2, 2, |_| [0.0; 3]);
        let white = img(2, 2, |_| [1.0; 3]);
        assert!(psnr(&black, &white).unwrap().abs() < 1e-12);
        let one = img(2, 2, |_| [1.0 / 255.0; 3]);
        let v = psnr(&black, &one).unwrap();
        assert!((v - 20.0 * 255f64.log10()).abs() < 1e-9);
        assert!((v - 48.1308).abs() < 1e-4);
        assert_eq!(psnr(&white, &white).unwrap(), f64::INFINITY);
    }

    #[test]
    fn psnr_symmetric_and_decreasing() {
        let base = img(3, 3, |i| [i as f64 / 10.0, 0.2, 0.7]);
        let mut last = f64::INFINITY;
        for k in 1..=20 {
            let off = img(3, 3, |i| [i as f64 / 10.0 + k as f64 / 255.0, 0.2, 0.7]);
            let p = psnr(&base, &off).unwrap();
            assert_eq!(p, psnr(&off, &base).unwrap());
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn summary_excludes_infinite_views() {
        let s = PsnrSummary::from_views(vec![30.0, 40.0]);
        assert_eq!(s.mean, 35.0);
        let s = PsnrSummary::from_views(vec![f64::INFINITY, 30.0]);
        assert_eq!((s.mean, s.infinite_views), (30.0, 1));
        let s = PsnrSummary::from_views(vec![f64::INFINITY; 3]);
        assert_eq!((s.mean, s.infinite_views), (f64::INFINITY, 3));
    }

    fn background_dataset() -> Dataset {
        let intr = Intrinsics::from_angle_x(0.69, 12, 12);
        let bg = [0.9, 0.6, 0.3];
        let frames = camera_rig(RigKind::FullSphere, 6, 4.0, Vec3::zeros(), intr)
            .unwrap()
            .into_iter()
            .map(|pose| Frame { pose, image: ImageBuffer::filled(12, 12, bg) })
            .collect();
        Dataset::new(frames, Cube::centered(Vec3::zeros(), 2.0).unwrap(), bg).unwrap()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig { steps: 150, rays_per_step: 128, field_res: 8, ..Default::default() }
    }

    #[test]
    fn fits_empty_scene() {
        let ds = background_dataset();
        let cfg = small_cfg();
        let field = train_member(&ds, &cfg).unwrap();
        let step = cfg.march_step(&ds);
        for f in &ds.frames {
            let r = render_image(&field, &f.pose, step, ds.background);
            for (p, q) in r.pixels.iter().zip(&f.image.pixels) {
                for c in 0..3 {
                    assert!((p[c] - q[c]).abs() <= 1e-2, "{p:?} vs {q:?}");
                }
            }
        }
    }

    #[test]
    fn training_is_deterministic() {
        let ds = background_dataset();
        let cfg = TrainConfig { steps: 20, ..small_cfg() };
        let (a, la) = train_member_logged(&ds, &cfg).unwrap();
        let (b, lb) = train_member_logged(&ds, &cfg).unwrap();
        assert_eq!(a, b);
        let losses = |l: &TrainLog| l.rows.iter().map(|r| (r.step, r.loss)).collect::<Vec<_>>();
        assert_eq!(losses(&la), losses(&lb));
        let c = train_member(&ds, &TrainConfig { seed: 1, ..cfg }).unwrap();
        assert!(a.density_raw.iter().zip(&c.density_raw).any(|(x, y)| x != y));
    }

    #[test]
    fn divergence_reports_the_step() {
        let mut ds = background_dataset();
        // corrupt targets bypass ImageBuffer validation, so the first loss is NaN
        for f in &mut ds.frames {
            f.image.pixels.iter_mut().for_each(|p| *p = [f64::NAN; 3]);
        }
        let cfg = TrainConfig { steps: 5, ..small_cfg() };
        match train_member(&ds, &cfg) {
            Err(e @ Error::Diverged { step: 1, .. }) => assert!(e.to_string().contains("step 1")),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { steps: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { lr: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { init_lo: 2.0, init_hi: 1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }

    #[test]
    fn log_csv_layout() {
        let tmp = tempfile::tempdir().unwrap();
        let log = TrainLog { rows: vec![LogRow { step: 1, loss: 0.5, wall_ms: 2.0 }] };
        let p = tmp.path().join("log.csv");
        log.write_csv(&p).unwrap();
        assert_eq!(fs::read_to_string(p).unwrap(), "step,loss,wall_ms\n1,0.5,2.000\n");
    }
}
