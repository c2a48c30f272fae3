use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{CameraPose, Intrinsics};
use crate::error::{Error, Result};
use crate::geometry::{Mat3, Vec3};

/// Acquisition constellation of a camera rig.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RigKind {
    FullSphere,
    UpperHemisphere,
    /// Upper hemisphere restricted to `y ≤ look_at.y`: the scene is seen from
    /// one side only.
    OneSidedHalfHemisphere,
}

impl RigKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            RigKind::FullSphere => "full_sphere",
            RigKind::UpperHemisphere => "upper_hemisphere",
            RigKind::OneSidedHalfHemisphere => "one_sided_half_hemisphere",
        }
    }
}

impl fmt::Display for RigKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RigKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "full_sphere" => Ok(RigKind::FullSphere),
            "upper_hemisphere" => Ok(RigKind::UpperHemisphere),
            "one_sided_half_hemisphere" | "one_sided" => Ok(RigKind::OneSidedHalfHemisphere),
            _ => Err(Error::InvalidArgument(format!("unknown rig kind '{s}'"))),
        }
    }
}

/// `n` cameras on a Fibonacci spiral over the requested shell, all looking at
/// `look_at` from distance `radius`.
pub fn camera_rig(
    kind: RigKind,
    n: usize,
    radius: f64,
    look_at: Vec3,
    intrinsics: Intrinsics,
) -> Result<Vec<CameraPose>> {
    if n == 0 {
        return Err(Error::InvalidArgument("rig needs at least one camera".into()));
    }
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::InvalidArgument(format!("rig radius must be positive, got {radius}")));
    }
    let golden_angle = PI * (3.0 - 5f64.sqrt());
    let golden_frac = 0.5 * (5f64.sqrt() - 1.0);

    (0..n)
        .map(|i| {
            let fi = i as f64 + 0.5;
            let dir = match kind {
                RigKind::FullSphere => {
                    let z = 1.0 - 2.0 * fi / n as f64;
                    spherical(z, i as f64 * golden_angle)
                }
                RigKind::UpperHemisphere => {
                    let z = 1.0 - fi / n as f64;
                    spherical(z, i as f64 * golden_angle)
                }
                RigKind::OneSidedHalfHemisphere => {
                    let z = 1.0 - fi / n as f64;
                    let u = (i as f64 * golden_frac).fract();
                    let rxy = (1.0 - z * z).max(0.0).sqrt();
                    // sin(πu) ≥ 0 for u ∈ [0, 1), so y ≤ 0 holds exactly
                    Vec3::new(rxy * (PI * u).cos(), -rxy * (PI * u).sin(), z)
                }
            };
            let center = look_at + dir * radius;
            CameraPose::new(look_at_rotation(&center, &look_at), center, intrinsics)
        })
        .collect()
}

fn spherical(z: f64, phi: f64) -> Vec3 {
    let rxy = (1.0 - z * z).max(0.0).sqrt();
    Vec3::new(rxy * phi.cos(), rxy * phi.sin(), z)
}

/// World-from-camera rotation for a camera at `center` whose `−z` axis points
/// at `target`, with world `+z` as the preferred up direction.
pub(crate) fn look_at_rotation(center: &Vec3, target: &Vec3) -> Mat3 {
    let z = (center - target).normalize();
    let mut x = Vec3::z().cross(&z);
    if x.norm() < 1e-9 {
        x = Vec3::y().cross(&z);
    }
    let x = x.normalize();
    let y = z.cross(&x);
    Mat3::from_columns(&[x, y, z])
}
