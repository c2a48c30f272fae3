//! Ensembles of independently trained fields and their per-position density
//! statistics.
//!
//! Every member is sampled on the same node-aligned, boundary-inclusive grid.
//! At each position the ensemble mean is `δ̄ = (1/M) Σ δ_m` and the density
//! uncertainty is the Bessel-corrected sample standard deviation
//! `U = sqrt( Σ (δ_m − δ̄)² / (M − 1) )`, both on raw (pre-activation)
//! density.

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{sample_raw, VoxelField};
use crate::geometry::{Cube, Vec3};
use crate::postprocess::{Point, PointSet};
use crate::snapshot;
use crate::trainer::{train_member_logged, TrainConfig, TrainLog};

pub const GRID_MAGIC: [u8; 4] = *b"DGRD";
pub const ENSEMBLE_MAGIC: [u8; 4] = *b"EGRD";

/// Member seeds `seed + m` for `m` in `0..members`.
pub fn member_seeds(seed: u64, members: usize) -> Vec<u64> {
    (0..members as u64).map(|m| seed.wrapping_add(m)).collect()
}

/// Trains `members` fields with seeds `cfg.seed + m`, returned in member order.
pub fn train_ensemble(dataset: &crate::dataset::Dataset, cfg: &TrainConfig, members: usize, parallel: bool) -> Result<Vec<VoxelField>> {
    if members < 2 {
        return Err(Error::InvalidArgument("ensemble requires M ≥ 2".into()));
    }
    train_ensemble_with_seeds(dataset, cfg, &member_seeds(cfg.seed, members), parallel)
}

/// Trains one member per explicit seed. Each member is trained sequentially,
/// so the output does not depend on `parallel`.
pub fn train_ensemble_with_seeds(
    dataset: &crate::dataset::Dataset,
    cfg: &TrainConfig,
    seeds: &[u64],
    parallel: bool,
) -> Result<Vec<VoxelField>> {
    Ok(train_ensemble_logged(dataset, cfg, seeds, parallel)?
        .into_iter()
        .map(|(f, _)| f)
        .collect())
}

/// Like [`train_ensemble_with_seeds`], also returning each member's loss log.
pub fn train_ensemble_logged(
    dataset: &crate::dataset::Dataset,
    cfg: &TrainConfig,
    seeds: &[u64],
    parallel: bool,
) -> Result<Vec<(VoxelField, TrainLog)>> {
    let train = |(m, &seed): (usize, &u64)| {
        let member_cfg = TrainConfig { seed, ..cfg.clone() };
        train_member_logged(dataset, &member_cfg).map_err(|e| tag_member(e, m))
    };
    if parallel {
        seeds.par_iter().enumerate().map(train).collect()
    } else {
        seeds.iter().enumerate().map(train).collect()
    }
}

fn tag_member(e: Error, m: usize) -> Error {
    match e {
        Error::Diverged { step, loss, .. } => Error::Diverged {
            member: Some(m),
            step,
            loss,
        },
        other => other,
    }
}

/// Raw densities of one member at `res³` equidistant positions, x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub bbox: Cube,
    pub res: usize,
    pub values: Vec<f64>,
}

impl DensityGrid {
    pub fn new(bbox: Cube, res: usize, values: Vec<f64>) -> Result<Self> {
        if res < 2 {
            return Err(Error::InvalidArgument(format!("grid resolution must be ≥ 2, got {res}")));
        }
        if values.len() != res.pow(3) {
            return Err(Error::DimensionMismatch(format!(
                "grid of res {res} needs {} values, got {}",
                res.pow(3),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("grid contains non-finite values".into()));
        }
        Ok(DensityGrid { bbox, res, values })
    }

    pub fn position(&self, n: usize) -> Vec3 {
        grid_position(&self.bbox, self.res, n)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        snapshot::write(path, GRID_MAGIC, self.res, 0, &self.bbox, self.values.iter().copied())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let c = snapshot::read(path, GRID_MAGIC, 1)?;
        DensityGrid::new(c.bbox, c.res, c.payload.iter().map(|&v| v as f64).collect())
            .map_err(|e| Error::malformed(path, e.to_string()))
    }
}

/// World position of flat grid index `n`.
pub fn grid_position(bbox: &Cube, res: usize, n: usize) -> Vec3 {
    let i = n % res;
    let j = (n / res) % res;
    let k = n / (res * res);
    bbox.node_position(res, i, j, k)
}

/// Samples `sample_raw` at `bbox.min + (i, j, k)/(res − 1)·edge`.
pub fn extract_grid(field: &VoxelField, bbox: &Cube, res: usize) -> Result<DensityGrid> {
    if res < 2 {
        return Err(Error::InvalidArgument(format!("grid resolution must be ≥ 2, got {res}")));
    }
    let values = (0..res.pow(3))
        .into_par_iter()
        .map(|n| sample_raw(field, &grid_position(bbox, res, n)))
        .collect();
    DensityGrid::new(*bbox, res, values)
}

/// Per-position ensemble mean and density uncertainty.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleGrid {
    pub bbox: Cube,
    pub res: usize,
    pub mean: Vec<f64>,
    pub uncertainty: Vec<f64>,
    pub members: usize,
}

impl EnsembleGrid {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn position(&self, n: usize) -> Vec3 {
        grid_position(&self.bbox, self.res, n)
    }

    /// Grid spacing in world units.
    pub fn cell_size(&self) -> f64 {
        self.bbox.edge / (self.res - 1) as f64
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let payload = self.mean.iter().chain(&self.uncertainty).copied();
        snapshot::write(path, ENSEMBLE_MAGIC, self.res, self.members as u32, &self.bbox, payload)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let c = snapshot::read(path, ENSEMBLE_MAGIC, 2)?;
        let n = c.res.pow(3);
        let mean = c.payload[..n].iter().map(|&v| v as f64).collect();
        let uncertainty: Vec<f64> = c.payload[n..].iter().map(|&v| v as f64).collect();
        if c.aux < 2 || uncertainty.iter().any(|u| !(u.is_finite() && *u >= 0.0)) {
            return Err(Error::malformed(path, "invalid ensemble statistics"));
        }
        Ok(EnsembleGrid {
            bbox: c.bbox,
            res: c.res,
            mean,
            uncertainty,
            members: c.aux as usize,
        })
    }
}

/// Two-pass mean and Bessel-corrected standard deviation across members.
pub fn ensemble_stats(grids: &[DensityGrid]) -> Result<EnsembleGrid> {
    if grids.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "ensemble statistics need at least 2 member grids, got {}",
            grids.len()
        )));
    }
    let first = &grids[0];
    for (m, g) in grids.iter().enumerate().skip(1) {
        if g.res != first.res || g.bbox != first.bbox || g.values.len() != first.values.len() {
            return Err(Error::DimensionMismatch(format!(
                "member grid {m} does not match member 0 in bbox or resolution"
            )));
        }
    }
    let m = grids.len() as f64;
    let (mean, uncertainty): (Vec<f64>, Vec<f64>) = (0..first.values.len())
        .into_par_iter()
        .map(|n| {
            let v0 = grids[0].values[n];
            if grids.iter().all(|g| g.values[n] == v0) {
                // exact agreement must give exactly zero spread
                return (v0, 0.0);
            }
            let mu = grids.iter().map(|g| g.values[n]).sum::<f64>() / m;
            let ss: f64 = grids.iter().map(|g| (g.values[n] - mu).powi(2)).sum();
            (mu, (ss / (m - 1.0)).sqrt())
        })
        .unzip();
    Ok(EnsembleGrid {
        bbox: first.bbox,
        res: first.res,
        mean,
        uncertainty,
        members: grids.len(),
    })
}

/// Grid-level means over the selected positions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSummary {
    /// Mean density uncertainty `mU_δ`.
    pub mean_uncertainty: f64,
    /// Mean of the ensemble-mean density `m-δ̄`.
    pub mean_density: f64,
    pub count: usize,
}

/// Averages uncertainty and mean density over the positions where
/// `mask(mean, uncertainty)` holds (all positions when `None`).
pub fn grid_summary(eg: &EnsembleGrid, mask: Option<&dyn Fn(f64, f64) -> bool>) -> Result<GridSummary> {
    grid_summary_where(eg, |n| mask.is_none_or(|f| f(eg.mean[n], eg.uncertainty[n])))
}

/// Like [`grid_summary`] but selecting by flat index, for spatial masks.
pub fn grid_summary_where(eg: &EnsembleGrid, select: impl Fn(usize) -> bool) -> Result<GridSummary> {
    let mut count = 0usize;
    let mut su = 0.0;
    let mut sm = 0.0;
    for n in 0..eg.len() {
        if select(n) {
            count += 1;
            su += eg.uncertainty[n];
            sm += eg.mean[n];
        }
    }
    if count == 0 {
        return Err(Error::NoPositionsSelected);
    }
    Ok(GridSummary {
        mean_uncertainty: su / count as f64,
        mean_density: sm / count as f64,
        count,
    })
}

/// Every grid position whose ensemble-mean density exceeds `density_threshold`.
pub fn grid_to_points(eg: &EnsembleGrid, density_threshold: f64) -> PointSet {
    let points = (0..eg.len())
        .filter(|&n| eg.mean[n] > density_threshold)
        .map(|n| Point {
            position: eg.position(n),
            density: eg.mean[n],
            uncertainty: eg.uncertainty[n],
            rgb: None,
        })
        .collect();
    PointSet { points }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn cube() -> Cube {
        Cube::new([-1.0; 3], 2.0).unwrap()
    }

    fn grid(values: Vec<f64>) -> DensityGrid {
        let res = (values.len() as f64).cbrt().round() as usize;
        DensityGrid::new(cube(), res, values).unwrap()
    }

    #[test]
    fn identical_members_have_zero_uncertainty() {
        let g = grid(vec![5.0; 8]);
        let eg = ensemble_stats(&[g.clone(), g.clone(), g]).unwrap();
        assert!(eg.mean.iter().all(|&m| m == 5.0));
        assert!(eg.uncertainty.iter().all(|&u| u == 0.0));
        assert_eq!(eg.members, 3);
    }

    #[test]
    fn two_member_hand_value() {
        let eg = ensemble_stats(&[grid(vec![0.0; 8]), grid(vec![2.0; 8])]).unwrap();
        assert_eq!(eg.mean[0], 1.0);
        assert!((eg.uncertainty[0] - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn stats_errors() {
        assert!(ensemble_stats(&[grid(vec![0.0; 8])]).is_err());
        let other = DensityGrid::new(cube(), 3, vec![0.0; 27]).unwrap();
        assert!(matches!(
            ensemble_stats(&[grid(vec![0.0; 8]), other]),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn extract_constant_and_corners() {
        let f = VoxelField::constant(cube(), 4, 2.5, [0.5; 3]).unwrap();
        let g = extract_grid(&f, &cube(), 5).unwrap();
        assert!(g.values.iter().all(|&v| (v - 2.5).abs() < 1e-14));

        let mut f = VoxelField::constant(cube(), 3, 0.0, [0.5; 3]).unwrap();
        for (n, v) in f.density_raw.iter_mut().enumerate() {
            *v = n as f64;
        }
        let g = extract_grid(&f, &cube(), 2).unwrap();
        assert_eq!(g.values.len(), 8);
        let corners = [0usize, 2, 6, 8, 18, 20, 24, 26];
        for (n, &c) in corners.iter().enumerate() {
            assert_eq!(g.values[n], f.density_raw[c]);
            assert!((g.position(n) - f.node_position(c % 3, (c / 3) % 3, c / 9)).norm() < 1e-15);
        }
    }

    #[test]
    fn summary_with_and_without_mask() {
        let eg = EnsembleGrid {
            bbox: cube(),
            res: 2,
            mean: vec![20.0, 0.0, 20.0, 0.0, 20.0, 0.0, 20.0, 0.0],
            uncertainty: vec![0.5; 8],
            members: 2,
        };
        let all = grid_summary(&eg, None).unwrap();
        assert_eq!((all.mean_uncertainty, all.count), (0.5, 8));
        let dense = |m: f64, _u: f64| m > 15.0;
        let s = grid_summary(&eg, Some(&dense)).unwrap();
        assert_eq!((s.count, s.mean_density), (4, 20.0));
        let none = |m: f64, _u: f64| m > 100.0;
        assert!(matches!(grid_summary(&eg, Some(&none)), Err(Error::NoPositionsSelected)));
    }

    #[test]
    fn threshold_to_points() {
        let mut rng = stream(1);
        let eg = EnsembleGrid {
            bbox: cube(),
            res: 3,
            mean: (0..27).map(|_| rng.random_range(-5.0..30.0)).collect(),
            uncertainty: vec![1.0; 27],
            members: 2,
        };
        assert_eq!(grid_to_points(&eg, -1e300).points.len(), 27);
        assert!(grid_to_points(&eg, 1e300).points.is_empty());
        let ps = grid_to_points(&eg, 15.0);
        assert_eq!(ps.points.len(), eg.mean.iter().filter(|&&m| m > 15.0).count());
        for p in &ps.points {
            assert!(p.density > 15.0);
        }
    }

    #[test]
    fn grid_snapshots_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let g = grid((0..27).map(|v| v as f64 * 0.5).collect());
        g.write(&tmp.path().join("g.bin")).unwrap();
        assert_eq!(DensityGrid::read(&tmp.path().join("g.bin")).unwrap(), g);
        let eg = ensemble_stats(&[g.clone(), grid((0..27).map(|v| v as f64).collect())]).unwrap();
        eg.write(&tmp.path().join("e.bin")).unwrap();
        let back = EnsembleGrid::read(&tmp.path().join("e.bin")).unwrap();
        assert_eq!((back.res, back.members), (3, 2));
        for n in 0..27 {
            assert!((back.mean[n] - eg.mean[n]).abs() < 1e-5 * eg.mean[n].abs().max(1.0));
            assert!((back.uncertainty[n] - eg.uncertainty[n]).abs() < 1e-5 * eg.uncertainty[n].max(1.0));
        }
        // a member grid is not an ensemble file
        assert!(EnsembleGrid::read(&tmp.path().join("g.bin")).is_err());
    }

    #[test]
    fn member_seed_derivation() {
        assert_eq!(member_seeds(10, 3), vec![10, 11, 12]);
        assert_eq!(member_seeds(u64::MAX, 2), vec![u64::MAX, 0]);
    }
}
