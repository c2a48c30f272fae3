use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Axis-aligned cube given by its minimum corner and edge length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cube {
    pub min: [f64; 3],
    pub edge: f64,
}

impl Cube {
    pub fn new(min: [f64; 3], edge: f64) -> Result<Self> {
        if !(edge.is_finite() && edge > 0.0) || min.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "cube needs a finite min corner and positive edge, got {min:?} / {edge}"
            )));
        }
        Ok(Cube { min, edge })
    }

    /// Cube of the given edge centered on `center`.
    pub fn centered(center: Vec3, edge: f64) -> Result<Self> {
        let h = 0.5 * edge;
        Cube::new([center.x - h, center.y - h, center.z - h], edge)
    }

    pub fn min_corner(&self) -> Vec3 {
        Vec3::new(self.min[0], self.min[1], self.min[2])
    }

    pub fn max_corner(&self) -> Vec3 {
        self.min_corner().add_scalar(self.edge)
    }

    pub fn center(&self) -> Vec3 {
        self.min_corner().add_scalar(0.5 * self.edge)
    }

    pub fn contains(&self, x: &Vec3) -> bool {
        (0..3).all(|a| x[a] >= self.min[a] && x[a] <= self.min[a] + self.edge)
    }

    /// Position of lattice node `(i, j, k)` on a boundary-inclusive lattice of
    /// `res` nodes per axis.
    pub fn node_position(&self, res: usize, i: usize, j: usize, k: usize) -> Vec3 {
        let s = self.edge / (res - 1) as f64;
        Vec3::new(
            self.min[0] + i as f64 * s,
            self.min[1] + j as f64 * s,
            self.min[2] + k as f64 * s,
        )
    }

    /// Parametric interval `[t0, t1]` where `origin + t·dir` lies inside the
    /// cube, clipped to `t ≥ 0`. `None` when the ray misses.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, f64)> {
        let mut t0 = 0.0_f64;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            let lo = self.min[a];
            let hi = self.min[a] + self.edge;
            if dir[a].abs() < 1e-300 {
                if origin[a] < lo || origin[a] > hi {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[a];
            let mut ta = (lo - origin[a]) * inv;
            let mut tb = (hi - origin[a]) * inv;
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
        }
        (t0 < t1).then_some((t0, t1))
    }
}

/// Largest absolute entry of `RᵀR − I`.
pub fn orthonormality_error(r: &Mat3) -> f64 {
    (r.transpose() * r - Mat3::identity()).abs().max()
}

/// Closest rotation in the Frobenius sense (polar factor via SVD).
pub fn orthonormalize(r: &Mat3) -> Mat3 {
    let svd = r.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut q = u * v_t;
    if q.determinant() < 0.0 {
        // keep a proper rotation when the input was nearly singular
        let mut u = u;
        u.column_mut(2).neg_mut();
        q = u * v_t;
    }
    q
}

pub fn rot_x(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}
