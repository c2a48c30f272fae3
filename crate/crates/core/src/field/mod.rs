//! Dense voxel radiance field: raw density and RGB on a regular lattice,
//! trilinear sampling, and a differentiable emission–absorption renderer.

mod render;
mod snapshot;

use crate::error::{Error, Result};
use crate::geometry::{Cube, Vec3};

pub use render::{
    default_step, ray_weights, render_image, render_ray, render_ray_backward, trace_ray, FieldGrad,
    Ray, RayOutput, RayTape,
};
pub use snapshot::{read_field, write_field, FIELD_MAGIC};

/// One ensemble member: pre-activation density and color parameters on a
/// `res³` lattice spanning `bbox`, stored x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelField {
    pub bbox: Cube,
    pub res: usize,
    pub density_raw: Vec<f64>,
    /// Color parameters; the rendered color is `clamp(param, 0, 1)`.
    pub color: Vec<[f64; 3]>,
}

/// Trilinear stencil: the 8 surrounding nodes and their weights.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Stencil {
    pub idx: [usize; 8],
    pub w: [f64; 8],
}

impl VoxelField {
    pub fn new(bbox: Cube, res: usize, density_raw: Vec<f64>, color: Vec<[f64; 3]>) -> Result<Self> {
        if res < 2 {
            return Err(Error::InvalidArgument(format!("field resolution must be ≥ 2, got {res}")));
        }
        let n = res * res * res;
        if density_raw.len() != n || color.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "field of res {res} needs {n} nodes, got {} densities / {} colors",
                density_raw.len(),
                color.len()
            )));
        }
        if density_raw.iter().chain(color.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("field contains non-finite values".into()));
        }
        Ok(VoxelField {
            bbox,
            res,
            density_raw,
            color,
        })
    }

    /// Field with every node set to the same raw density and color.
    pub fn constant(bbox: Cube, res: usize, raw: f64, rgb: [f64; 3]) -> Result<Self> {
        let n = res.pow(3);
        VoxelField::new(bbox, res, vec![raw; n], vec![rgb; n])
    }

    pub fn node_count(&self) -> usize {
        self.density_raw.len()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.res * (j + self.res * k)
    }

    pub fn node_position(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.bbox.node_position(self.res, i, j, k)
    }

    /// Lattice cell spacing in world units.
    pub fn cell_size(&self) -> f64 {
        self.bbox.edge / (self.res - 1) as f64
    }

    #[inline]
    pub(crate) fn stencil(&self, x: &Vec3) -> Option<Stencil> {
        let scale = (self.res - 1) as f64 / self.bbox.edge;
        let top = (self.res - 1) as f64;
        let mut cell = [0usize; 3];
        let mut frac = [0f64; 3];
        for a in 0..3 {
            let u = (x[a] - self.bbox.min[a]) * scale;
            if !(0.0..=top).contains(&u) {
                return None;
            }
            let c = (u.floor() as usize).min(self.res - 2);
            cell[a] = c;
            frac[a] = u - c as f64;
        }
        let base = self.index(cell[0], cell[1], cell[2]);
        let (sx, sy) = (1, self.res);
        let sz = self.res * self.res;
        let [fx, fy, fz] = frac;
        let (gx, gy, gz) = (1.0 - fx, 1.0 - fy, 1.0 - fz);
        Some(Stencil {
            idx: [
                base,
                base + sx,
                base + sy,
                base + sx + sy,
                base + sz,
                base + sx + sz,
                base + sy + sz,
                base + sx + sy + sz,
            ],
            w: [
                gx * gy * gz,
                fx * gy * gz,
                gx * fy * gz,
                fx * fy * gz,
                gx * gy * fz,
                fx * gy * fz,
                gx * fy * fz,
                fx * fy * fz,
            ],
        })
    }

    #[inline]
    pub(crate) fn raw_at(&self, s: &Stencil) -> f64 {
        s.idx
            .iter()
            .zip(&s.w)
            .map(|(&i, &w)| w * self.density_raw[i])
            .sum()
    }

    #[inline]
    pub(crate) fn color_at(&self, s: &Stencil) -> [f64; 3] {
        let mut c = [0.0; 3];
        for (&i, &w) in s.idx.iter().zip(&s.w) {
            let p = self.color[i];
            for ch in 0..3 {
                c[ch] += w * p[ch].clamp(0.0, 1.0);
            }
        }
        c
    }

    /// Activated color at `x`; background-free black outside the lattice.
    pub fn sample_color(&self, x: &Vec3) -> [f64; 3] {
        self.stencil(x).map_or([0.0; 3], |s| self.color_at(&s))
    }
}

/// Trilinearly interpolated raw density at `x`; zero outside the bbox.
pub fn sample_raw(field: &VoxelField, x: &Vec3) -> f64 {
    field.stencil(x).map_or(0.0, |s| field.raw_at(&s))
}

/// Rendering activation: a rectifier, so activated density equals raw density
/// wherever raw is non-negative.
#[inline]
pub fn activate_density(raw: f64) -> f64 {
    raw.max(0.0)
}
