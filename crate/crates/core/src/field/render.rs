//! Fixed-step emission–absorption quadrature and its reverse-mode gradient.
//!
//! Samples sit at `t_near + (k + ½)·step` for every `k` whose midpoint lies
//! before `t_far`. Each sample has opacity `α = 1 − exp(−σ·step)` with
//! `σ = max(raw, 0)`, and the ray color is
//! `Σ T_k α_k c_k + T_final · background`.

use rayon::prelude::*;

use super::{activate_density, Stencil, VoxelField};
use crate::dataset::{CameraPose, ImageBuffer};
use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// Ray segment `origin + t·direction` for `t ∈ [t_near, t_far]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn new(origin: Vec3, direction: Vec3, t_near: f64, t_far: f64) -> Result<Self> {
        let norm = direction.norm();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "ray direction must be unit length, got norm {norm}"
            )));
        }
        if !(t_near >= 0.0 && t_near < t_far && t_far.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "ray interval must satisfy 0 ≤ t_near < t_far, got [{t_near}, {t_far}]"
            )));
        }
        Ok(Ray {
            origin,
            direction,
            t_near,
            t_far,
        })
    }

    /// Ray from `origin` along `direction`, clipped to the field's bbox.
    pub fn clipped(field: &VoxelField, origin: Vec3, direction: Vec3) -> Option<Ray> {
        let (t0, t1) = field.bbox.intersect(&origin, &direction)?;
        Some(Ray {
            origin,
            direction,
            t_near: t0,
            t_far: t1,
        })
    }

    #[inline]
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }

    /// Number of midpoint samples for the given step.
    pub fn sample_count(&self, step: f64) -> usize {
        let len = self.t_far - self.t_near;
        // smallest k with (k + ½)·step ≥ len
        let mut k = ((len / step) - 0.5).ceil().max(0.0) as usize;
        while (k as f64 + 0.5) * step < len {
            k += 1;
        }
        while k > 0 && (k as f64 - 0.5) * step >= len {
            k -= 1;
        }
        k
    }
}

/// Default march step: half a lattice cell along each axis, `edge / (2·res)`.
pub fn default_step(field: &VoxelField) -> f64 {
    field.bbox.edge / (2 * field.res) as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayOutput {
    pub rgb: [f64; 3],
    /// Transmittance reaching the background.
    pub transmittance: f64,
}

/// Gradient accumulator with the field's layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrad {
    pub density: Vec<f64>,
    pub color: Vec<[f64; 3]>,
}

impl FieldGrad {
    pub fn zeros_like(field: &VoxelField) -> Self {
        FieldGrad {
            density: vec![0.0; field.node_count()],
            color: vec![[0.0; 3]; field.node_count()],
        }
    }

    pub fn clear(&mut self) {
        self.density.iter_mut().for_each(|g| *g = 0.0);
        self.color.iter_mut().for_each(|g| *g = [0.0; 3]);
    }

    pub fn is_zero(&self) -> bool {
        self.density.iter().all(|&g| g == 0.0) && self.color.iter().flatten().all(|&g| g == 0.0)
    }
}

#[derive(Debug, Clone, Copy)]
struct TapeSample {
    stencil: Stencil,
    alpha: f64,
    /// Transmittance in front of the sample.
    trans: f64,
    rgb: [f64; 3],
}

/// Forward-pass record for one ray, reused across rays to avoid allocation.
///
/// Samples with zero activated density contribute neither color nor gradient
/// and are not stored.
#[derive(Debug, Default)]
pub struct RayTape {
    samples: Vec<TapeSample>,
    step: f64,
    background: [f64; 3],
    t_final: f64,
}

/// Forward pass that records what [`RayTape::backward`] needs.
pub fn trace_ray(
    field: &VoxelField,
    ray: &Ray,
    step: f64,
    background: [f64; 3],
    tape: &mut RayTape,
) -> RayOutput {
    tape.samples.clear();
    tape.step = step;
    tape.background = background;
    let mut rgb = [0.0; 3];
    let mut trans = 1.0;
    for k in 0..ray.sample_count(step) {
        let x = ray.at(ray.t_near + (k as f64 + 0.5) * step);
        let Some(st) = field.stencil(&x) else { continue };
        let sigma = activate_density(field.raw_at(&st));
        if sigma <= 0.0 {
            continue;
        }
        let alpha = -(-sigma * step).exp_m1();
        let c = field.color_at(&st);
        let w = trans * alpha;
        for ch in 0..3 {
            rgb[ch] += w * c[ch];
        }
        tape.samples.push(TapeSample {
            stencil: st,
            alpha,
            trans,
            rgb: c,
        });
        trans *= 1.0 - alpha;
    }
    tape.t_final = trans;
    for ch in 0..3 {
        rgb[ch] += trans * background[ch];
    }
    RayOutput {
        rgb,
        transmittance: trans,
    }
}

impl RayTape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Accumulates `∂L/∂θ` into `grad` given the upstream `∂L/∂rgb`.
    pub fn backward(&self, field: &VoxelField, d_rgb: [f64; 3], grad: &mut FieldGrad) {
        if d_rgb == [0.0; 3] {
            return;
        }
        let step = self.step;
        // color carried by everything behind the current sample
        let mut behind = self.background.map(|b| self.t_final * b);
        for s in self.samples.iter().rev() {
            let w = s.trans * s.alpha;
            let t_after = s.trans * (1.0 - s.alpha);
            let mut d_sigma = 0.0;
            for ch in 0..3 {
                d_sigma += d_rgb[ch] * step * (t_after * s.rgb[ch] - behind[ch]);
                behind[ch] += w * s.rgb[ch];
            }
            // only samples with raw > 0 are on the tape, so the rectifier passes d_sigma through
            for (&i, &wn) in s.stencil.idx.iter().zip(&s.stencil.w) {
                grad.density[i] += wn * d_sigma;
                let p = field.color[i];
                let g = &mut grad.color[i];
                for ch in 0..3 {
                    if (0.0..=1.0).contains(&p[ch]) {
                        g[ch] += wn * w * d_rgb[ch];
                    }
                }
            }
        }
    }
}

/// Color and final transmittance of one ray.
pub fn render_ray(field: &VoxelField, ray: &Ray, step: f64, background: [f64; 3]) -> RayOutput {
    let mut rgb = [0.0; 3];
    let mut trans = 1.0;
    for k in 0..ray.sample_count(step) {
        let x = ray.at(ray.t_near + (k as f64 + 0.5) * step);
        let Some(st) = field.stencil(&x) else { continue };
        let sigma = activate_density(field.raw_at(&st));
        if sigma <= 0.0 {
            continue;
        }
        let alpha = -(-sigma * step).exp_m1();
        let c = field.color_at(&st);
        let w = trans * alpha;
        for ch in 0..3 {
            rgb[ch] += w * c[ch];
        }
        trans *= 1.0 - alpha;
    }
    for ch in 0..3 {
        rgb[ch] += trans * background[ch];
    }
    RayOutput {
        rgb,
        transmittance: trans,
    }
}

/// Compositing weights `T_k·α_k` of every march sample (zeros included) and
/// the final transmittance.
pub fn ray_weights(field: &VoxelField, ray: &Ray, step: f64) -> (Vec<f64>, f64) {
    let n = ray.sample_count(step);
    let mut weights = Vec::with_capacity(n);
    let mut trans = 1.0;
    for k in 0..n {
        let x = ray.at(ray.t_near + (k as f64 + 0.5) * step);
        let sigma = activate_density(super::sample_raw(field, &x));
        let alpha = -(-sigma * step).exp_m1();
        weights.push(trans * alpha);
        trans *= 1.0 - alpha;
    }
    (weights, trans)
}

/// Reverse-mode gradient of one ray's color, accumulated into `grad`.
pub fn render_ray_backward(
    field: &VoxelField,
    ray: &Ray,
    step: f64,
    background: [f64; 3],
    d_rgb: [f64; 3],
    grad: &mut FieldGrad,
) -> RayOutput {
    let mut tape = RayTape::new();
    let out = trace_ray(field, ray, step, background, &mut tape);
    tape.backward(field, d_rgb, grad);
    out
}

/// Renders one image through pixel centers.
pub fn render_image(
    field: &VoxelField,
    pose: &CameraPose,
    step: f64,
    background: [f64; 3],
) -> ImageBuffer {
    let (w, h) = (pose.width, pose.height);
    let mut pixels = vec![[0.0; 3]; w * h];
    pixels
        .par_chunks_mut(w)
        .enumerate()
        .for_each(|(py, row)| {
            for (px, out) in row.iter_mut().enumerate() {
                let (o, d) = pose.pixel_ray(px, py);
                let rgb = match Ray::clipped(field, o, d) {
                    Some(ray) => render_ray(field, &ray, step, background).rgb,
                    None => background,
                };
                *out = rgb.map(|c| c.clamp(0.0, 1.0));
            }
        });
    ImageBuffer {
        width: w,
        height: h,
        pixels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Cube;

    fn cube() -> Cube {
        Cube::new([0.0; 3], 1.0).unwrap()
    }

    fn x_ray(t_near: f64, t_far: f64) -> Ray {
        Ray::new(Vec3::new(0.0, 0.5, 0.5), Vec3::x(), t_near, t_far).unwrap()
    }

    #[test]
    fn empty_space_shows_background() {
        let f = VoxelField::constant(cube(), 4, -2.0, [0.3; 3]).unwrap();
        let out = render_ray(&f, &x_ray(0.0, 1.0), 0.01, [0.1, 0.2, 0.3]);
        assert_eq!(out.rgb, [0.1, 0.2, 0.3]);
        assert_eq!(out.transmittance, 1.0);
    }

    #[test]
    fn homogeneous_medium_matches_beer_lambert() {
        let f = VoxelField::constant(cube(), 4, 1.0, [0.3; 3]).unwrap();
        let out = render_ray(&f, &x_ray(0.0, 1.0), 0.01, [0.0; 3]);
        assert!((out.transmittance - (-1.0f64).exp()).abs() < 1e-12);
        assert!((out.transmittance - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn sample_count_at_integer_multiples() {
        assert_eq!(x_ray(0.0, 1.0).sample_count(0.01), 100);
        assert_eq!(x_ray(0.0, 1.0).sample_count(0.1), 10);
        assert_eq!(x_ray(0.25, 0.75).sample_count(0.05), 10);
        // the first midpoint lies past a chord shorter than half a step
        assert_eq!(x_ray(0.0, 0.01).sample_count(0.1), 0);
        assert_eq!(x_ray(0.0, 0.06).sample_count(0.1), 1);
    }

    #[test]
    fn opaque_slab_hides_background() {
        let f = VoxelField::constant(cube(), 3, 25.0, [1.0, 0.0, 0.0]).unwrap();
        let out = render_ray(&f, &x_ray(0.0, 1.0), 0.01, [0.0, 0.0, 1.0]);
        for (c, e) in out.rgb.iter().zip([1.0, 0.0, 0.0]) {
            assert!((c - e).abs() < 1e-6);
        }
    }

    #[test]
    fn tape_forward_matches_render_ray() {
        let mut f = VoxelField::constant(cube(), 5, 0.0, [0.5; 3]).unwrap();
        for (n, v) in f.density_raw.iter_mut().enumerate() {
            *v = ((n * 37 % 11) as f64) - 4.0;
        }
        let ray = Ray::new(Vec3::new(0.1, 0.2, 0.0), Vec3::new(0.3, 0.2, 1.0).normalize(), 0.0, 0.9).unwrap();
        let a = render_ray(&f, &ray, 0.013, [0.2, 0.4, 0.9]);
        let mut tape = RayTape::new();
        let b = trace_ray(&f, &ray, 0.013, [0.2, 0.4, 0.9], &mut tape);
        assert_eq!(a, b);
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let f = VoxelField::constant(cube(), 3, 2.0, [0.5; 3]).unwrap();
        let mut g = FieldGrad::zeros_like(&f);
        render_ray_backward(&f, &x_ray(0.0, 1.0), 0.05, [0.0; 3], [0.0; 3], &mut g);
        assert!(g.is_zero());
    }

    #[test]
    fn single_sample_color_gradient_is_weight() {
        // one sample at the cube center: dColor/dc = T_0·α_0 with T_0 = 1
        let f = VoxelField::constant(cube(), 2, 3.0, [0.4, 0.5, 0.6]).unwrap();
        let ray = x_ray(0.45, 0.55);
        let step = 0.1;
        assert_eq!(ray.sample_count(step), 1);
        let mut g = FieldGrad::zeros_like(&f);
        render_ray_backward(&f, &ray, step, [0.0; 3], [1.0, 0.0, 0.0], &mut g);
        let alpha = 1.0 - (-3.0f64 * step).exp();
        // all 8 nodes weigh 1/8 at the center; their sum is the color gradient
        let total: f64 = g.color.iter().map(|c| c[0]).sum();
        assert!((total - alpha).abs() < 1e-12);
        assert!(g.color.iter().all(|c| c[1] == 0.0 && c[2] == 0.0));
    }

    #[test]
    fn negative_density_gets_no_gradient() {
        let f = VoxelField::constant(cube(), 3, -0.5, [0.5; 3]).unwrap();
        let mut g = FieldGrad::zeros_like(&f);
        render_ray_backward(&f, &x_ray(0.0, 1.0), 0.05, [1.0; 3], [1.0, 1.0, 1.0], &mut g);
        assert!(g.is_zero());
    }

    #[test]
    fn rejects_bad_rays() {
        assert!(Ray::new(Vec3::zeros(), Vec3::new(2.0, 0.0, 0.0), 0.0, 1.0).is_err());
        assert!(Ray::new(Vec3::zeros(), Vec3::x(), 1.0, 1.0).is_err());
        assert!(Ray::new(Vec3::zeros(), Vec3::x(), -0.1, 1.0).is_err());
    }
}
